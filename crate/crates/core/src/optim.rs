//! NADAM: Adam with a Nesterov look-ahead on the first moment.
//!
//! With `t` counted from 1:
//!
//! ```text
//! m  = β1·m + (1-β1)·g
//! v  = β2·v + (1-β2)·g²
//! m̂ = β1·m / (1-β1^(t+1)) + (1-β1)·g / (1-β1^t)
//! v̂ = v / (1-β2^t)
//! θ -= lr · m̂ / (sqrt(v̂) + ε)
//! ```

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NadamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for NadamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl NadamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NadamState<T> {
    pub config: NadamConfig,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

const STATE_MAGIC: &[u8; 4] = b"GNAD";

impl<T: Scalar> NadamState<T> {
    /// Zero moments shaped like `params`.
    pub fn new<'a>(config: NadamConfig, params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        let m: Vec<Tensor<T>> = params
            .into_iter()
            .map(|p| Tensor::zeros(p.shape()))
            .collect();
        Self {
            config,
            step: 0,
            v: m.clone(),
            m,
        }
    }

    /// Applies one update. Nothing is modified if any gradient is
    /// non-finite or any shape disagrees.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::InvalidInput(format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.m[i].shape() {
                return Err(Error::ShapeMismatch {
                    op: "nadam_step",
                    left: p.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient { index: i });
            }
        }
        self.step += 1;
        let c = &self.config;
        let t = self.step as i32;
        let b1 = T::from_f64(c.beta1);
        let b2 = T::from_f64(c.beta2);
        let one_minus_b1 = T::from_f64(1.0 - c.beta1);
        let one_minus_b2 = T::from_f64(1.0 - c.beta2);
        let momentum_scale = T::from_f64(c.beta1 / (1.0 - libm::pow(c.beta1, (t + 1) as f64)));
        let grad_scale = T::from_f64((1.0 - c.beta1) / (1.0 - libm::pow(c.beta1, t as f64)));
        let v_correction = T::from_f64(1.0 - libm::pow(c.beta2, t as f64));
        let lr = T::from_f64(c.learning_rate);
        let eps = T::from_f64(c.epsilon);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (((theta, &g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = b1 * *m + one_minus_b1 * g;
                *v = b2 * *v + one_minus_b2 * g * g;
                let m_hat = momentum_scale * *m + grad_scale * g;
                let v_hat = *v / v_correction;
                *theta -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Serialises hyperparameters, step counter and moments.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(STATE_MAGIC);
        out.push(T::BYTES as u8);
        out.extend_from_slice(&self.step.to_le_bytes());
        let c = &self.config;
        for v in [c.learning_rate, c.beta1, c.beta2, c.epsilon] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.m.len() as u32).to_le_bytes());
        for t in self.m.iter().chain(&self.v) {
            out.push(t.rank() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &x in t.data() {
                x.write_le(&mut out);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::InvalidInput(format!("optimizer state: {m}"));
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated"))?;
            pos += n;
            Ok(s)
        };
        if take(4)? != STATE_MAGIC {
            return Err(bad("bad magic"));
        }
        if take(1)?[0] as usize != T::BYTES {
            return Err(bad("element size mismatch"));
        }
        let step = u64::from_le_bytes(take(8)?.try_into().unwrap());
        let mut f = [0f64; 4];
        for v in &mut f {
            *v = f64::from_le_bytes(take(8)?.try_into().unwrap());
        }
        let count = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let mut tensors = Vec::with_capacity(2 * count);
        for _ in 0..2 * count {
            let rank = take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize);
            }
            let n: usize = shape.iter().product();
            let raw = take(n * T::BYTES)?;
            let data = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
            tensors.push(Tensor::new(shape, data)?);
        }
        if pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        let v = tensors.split_off(count);
        Ok(Self {
            config: NadamConfig {
                learning_rate: f[0],
                beta1: f[1],
                beta2: f[2],
                epsilon: f[3],
            },
            step,
            m: tensors,
            v,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn scalar_state(lr: f64) -> (Tensor<f64>, NadamState<f64>) {
        let theta = Tensor::new([1], vec![0.0]).unwrap();
        let state = NadamState::new(NadamConfig::with_learning_rate(lr), [&theta]);
        (theta, state)
    }

    #[test]
    fn zero_gradient_from_zero_state_is_a_no_op() {
        let (mut theta, mut state) = scalar_state(0.1);
        theta.data_mut()[0] = 1.25;
        state
            .step(&mut [&mut theta], &[Tensor::zeros([1])])
            .unwrap();
        assert_eq!(theta.data(), &[1.25]);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn two_step_trace() {
        // Hand trace with θ0 = 0, g = 1, lr = 1e-3, β = (0.9, 0.999), ε = 1e-8:
        //   t=1: m = 0.1,  v = 0.001,    m̂ = 0.09/0.19 + 0.1/0.1  = 1.4736842105263157, v̂ = 1
        //   t=2: m = 0.19, v = 0.001999, m̂ = 0.171/0.271 + 0.1/0.19 = 1.1573120994367838, v̂ = 1
        let (mut theta, mut state) = scalar_state(1e-3);
        let g = Tensor::new([1], vec![1.0]).unwrap();
        state
            .step(&mut [&mut theta], core::slice::from_ref(&g))
            .unwrap();
        let step1 = -1e-3 * 1.4736842105263157 / (1.0 + 1e-8);
        assert!((theta.data()[0] - step1).abs() < 1e-12);
        state
            .step(&mut [&mut theta], core::slice::from_ref(&g))
            .unwrap();
        let step2 = step1 - 1e-3 * 1.1573120994367838 / (1.0 + 1e-8);
        assert!((theta.data()[0] - step2).abs() < 1e-12);
        assert!((theta.data()[0] - -0.0026309962836531292).abs() < 1e-12);
    }

    #[test]
    fn nan_gradient_aborts_without_mutation() {
        let (mut theta, mut state) = scalar_state(0.1);
        let before = state.clone();
        let g = Tensor::new([1], vec![f64::NAN]).unwrap();
        let err = state.step(&mut [&mut theta], &[g]).unwrap_err();
        assert_eq!(err, Error::NonFiniteGradient { index: 0 });
        assert_eq!(state, before);
        assert_eq!(theta.data(), &[0.0]);
    }

    #[test]
    fn state_round_trips() {
        let (mut theta, mut state) = scalar_state(0.01);
        let g = Tensor::new([1], vec![0.3]).unwrap();
        for _ in 0..3 {
            state
                .step(&mut [&mut theta], core::slice::from_ref(&g))
                .unwrap();
        }
        let bytes = state.to_bytes();
        assert_eq!(NadamState::<f64>::from_bytes(&bytes).unwrap(), state);
        assert!(NadamState::<f64>::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(NadamState::<f32>::from_bytes(&bytes).is_err());
    }
}
