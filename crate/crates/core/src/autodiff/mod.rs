//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] owns every value produced during a forward pass. Operations
//! append nodes in execution order, so the node list is already topologically
//! sorted and [`Tape::backward`] is a single reverse sweep.

pub mod kernels;

use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

static NEXT_TAPE_ID: AtomicUsize = AtomicUsize::new(0);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: usize,
    index: usize,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: usize,
        weight: usize,
        bias: usize,
        stride: usize,
        padding: usize,
    },
    ConvTranspose2d {
        input: usize,
        weight: usize,
        bias: usize,
        stride: usize,
        padding: usize,
        output_padding: usize,
    },
    MaxPool2d {
        input: usize,
        argmax: Vec<usize>,
    },
    Relu {
        input: usize,
    },
    Softmax {
        input: usize,
    },
    Concat {
        a: usize,
        b: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    Scale {
        input: usize,
        factor: T,
    },
    Sum {
        input: usize,
    },
    DiceLoss {
        probs: usize,
        target: Tensor<T>,
        /// Per class: (2·intersection + smooth, denominator + smooth).
        terms: Vec<(T, T)>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Tensor<T>>,
}

/// Records operations for reverse-mode differentiation.
///
/// A tape created with [`Tape::no_grad`] computes the same forward values
/// but keeps no backward context.
#[derive(Debug)]
pub struct Tape<T> {
    id: usize,
    nodes: Vec<Node<T>>,
    grad_enabled: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            grad_enabled: true,
        }
    }

    pub fn no_grad() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a constant input.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Records a leaf whose gradient is accumulated by [`Tape::backward`].
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        let requires_grad = self.grad_enabled;
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Value of a recorded variable.
    ///
    /// # Panics
    /// If `var` belongs to another tape.
    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[self.index(var).expect("variable from another tape")].value
    }

    pub fn try_value(&self, var: Var) -> Result<&Tensor<T>> {
        Ok(&self.nodes[self.index(var)?].value)
    }

    pub fn requires_grad(&self, var: Var) -> Result<bool> {
        Ok(self.nodes[self.index(var)?].requires_grad)
    }

    /// Accumulated gradient of a leaf, if backward has reached it.
    pub fn grad(&self, var: Var) -> Option<&Tensor<T>> {
        self.index(var)
            .ok()
            .and_then(|i| self.nodes[i].grad.as_ref())
    }

    pub fn take_grad(&mut self, var: Var) -> Option<Tensor<T>> {
        let i = self.index(var).ok()?;
        self.nodes[i].grad.take()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn index(&self, var: Var) -> Result<usize> {
        if var.tape != self.id || var.index >= self.nodes.len() {
            return Err(Error::ForeignVar);
        }
        Ok(var.index)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        let index = self.nodes.len();
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var {
            tape: self.id,
            index,
        }
    }

    fn record(
        &mut self,
        name: &'static str,
        value: Tensor<T>,
        inputs: &[usize],
        op: impl FnOnce() -> Op<T>,
    ) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad =
            self.grad_enabled && inputs.iter().any(|&i| self.nodes[i].requires_grad);
        let op = if requires_grad { op() } else { Op::Leaf };
        Ok(self.push(value, op, requires_grad))
    }

    fn same_shape(&self, op: &'static str, a: usize, b: usize) -> Result<()> {
        let (sa, sb) = (self.nodes[a].value.shape(), self.nodes[b].value.shape());
        if sa != sb {
            return Err(Error::ShapeMismatch {
                op,
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        Ok(())
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (i, w, b) = (self.index(input)?, self.index(weight)?, self.index(bias)?);
        let out = kernels::conv2d_forward(
            &self.nodes[i].value,
            &self.nodes[w].value,
            &self.nodes[b].value,
            stride,
            padding,
        )?;
        self.record("conv2d", out, &[i, w, b], || Op::Conv2d {
            input: i,
            weight: w,
            bias: b,
            stride,
            padding,
        })
    }

    /// Transposed convolution restricted to exact 2× upsampling, e.g.
    /// kernel 3, stride 2, padding 1, output padding 1.
    pub fn conv_transpose2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> Result<Var> {
        let (i, w, b) = (self.index(input)?, self.index(weight)?, self.index(bias)?);
        let out = kernels::conv_transpose2d_forward(
            &self.nodes[i].value,
            &self.nodes[w].value,
            &self.nodes[b].value,
            stride,
            padding,
            output_padding,
        )?;
        self.record("conv_transpose2d", out, &[i, w, b], || {
            Op::ConvTranspose2d {
                input: i,
                weight: w,
                bias: b,
                stride,
                padding,
                output_padding,
            }
        })
    }

    pub fn maxpool2d(&mut self, input: Var) -> Result<Var> {
        let i = self.index(input)?;
        let (out, argmax) = kernels::maxpool2d_forward(&self.nodes[i].value)?;
        self.record("maxpool2d", out, &[i], || Op::MaxPool2d {
            input: i,
            argmax,
        })
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let i = self.index(input)?;
        let out = self.nodes[i]
            .value
            .map(|v| if v > T::ZERO { v } else { T::ZERO });
        self.record("relu", out, &[i], || Op::Relu { input: i })
    }

    pub fn softmax_channels(&mut self, input: Var) -> Result<Var> {
        let i = self.index(input)?;
        let out = kernels::softmax_channels_forward(&self.nodes[i].value)?;
        self.record("softmax_channels", out, &[i], || Op::Softmax { input: i })
    }

    /// Concatenates along channels; `a` comes first.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        let out = kernels::concat_channels_forward(&self.nodes[ia].value, &self.nodes[ib].value)?;
        self.record("concat_channels", out, &[ia, ib], || Op::Concat {
            a: ia,
            b: ib,
        })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        self.same_shape("add", ia, ib)?;
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| x + y)
            .collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        self.record("add", out, &[ia, ib], || Op::Add { a: ia, b: ib })
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        self.same_shape("mul", ia, ib)?;
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| x * y)
            .collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        self.record("mul", out, &[ia, ib], || Op::Mul { a: ia, b: ib })
    }

    pub fn scale(&mut self, input: Var, factor: T) -> Result<Var> {
        let i = self.index(input)?;
        let out = self.nodes[i].value.map(|v| v * factor);
        self.record("scale", out, &[i], || Op::Scale { input: i, factor })
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let i = self.index(input)?;
        let out = Tensor::scalar(self.nodes[i].value.sum());
        self.record("sum", out, &[i], || Op::Sum { input: i })
    }

    /// Categorical Dice loss `1 - mean_c (2·Σŷ_c·y_c + s) / (Σŷ_c² + Σy_c² + s)`,
    /// reduced over every pixel of the batch. `target` is a constant one-hot
    /// tensor of the same shape as `probs`.
    pub fn dice_loss(&mut self, probs: Var, target: &Tensor<T>, smooth: T) -> Result<Var> {
        let p = self.index(probs)?;
        let yhat = &self.nodes[p].value;
        if yhat.shape() != target.shape() {
            return Err(Error::ShapeMismatch {
                op: "dice_loss",
                left: yhat.shape().to_vec(),
                right: target.shape().to_vec(),
            });
        }
        let terms = crate::loss::dice_terms(yhat, target, smooth)?;
        let classes = T::from_f64(terms.len() as f64);
        let mean = terms
            .iter()
            .fold(T::ZERO, |acc, &(num, den)| acc + num / den)
            / classes;
        let out = Tensor::scalar(T::ONE - mean);
        let target = if self.grad_enabled && self.nodes[p].requires_grad {
            target.clone()
        } else {
            Tensor::zeros([0])
        };
        self.record("dice_loss", out, &[p], || Op::DiceLoss {
            probs: p,
            target,
            terms,
        })
    }

    /// Accumulates `d loss / d leaf` into every gradient-requiring leaf that
    /// is an ancestor of `loss`. Repeated calls add to existing gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let root = self.index(loss)?;
        let shape = self.nodes[root].value.shape();
        if self.nodes[root].value.numel() != 1 {
            return Err(Error::NonScalarLoss(shape.to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; root + 1];
        grads[root] = Some(vec![T::ONE]);
        for i in (0..=root).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                let node = &mut self.nodes[i];
                match node.grad.as_mut() {
                    Some(acc) => {
                        for (a, v) in acc.data_mut().iter_mut().zip(g) {
                            *a += v;
                        }
                    }
                    None => node.grad = Some(Tensor::new(node.value.shape().to_vec(), g)?),
                }
                continue;
            }
            for (input, gi) in self.input_grads(i, &g) {
                if !self.nodes[input].requires_grad {
                    continue;
                }
                match grads[input].as_mut() {
                    Some(acc) => {
                        for (a, v) in acc.iter_mut().zip(gi) {
                            *a += v;
                        }
                    }
                    None => grads[input] = Some(gi),
                }
            }
        }
        Ok(())
    }

    fn input_grads(&self, i: usize, g: &[T]) -> Vec<(usize, Vec<T>)> {
        let node = &self.nodes[i];
        let wants = |idx: usize| self.nodes[idx].requires_grad;
        match &node.op {
            Op::Leaf => Vec::new(),
            &Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                padding,
            } => {
                let (x, w, b) = (
                    &self.nodes[input].value,
                    &self.nodes[weight].value,
                    &self.nodes[bias].value,
                );
                let (n, cout, geom) =
                    kernels::conv2d_geom(x, w, b, stride, padding).expect("recorded conv2d");
                let grads = kernels::conv2d_backward(
                    x,
                    w,
                    g,
                    n,
                    cout,
                    &geom,
                    [wants(input), wants(weight), wants(bias)],
                );
                collect_conv_grads(grads, input, weight, bias)
            }
            &Op::ConvTranspose2d {
                input,
                weight,
                bias,
                stride,
                padding,
                output_padding,
            } => {
                let (x, w, b) = (
                    &self.nodes[input].value,
                    &self.nodes[weight].value,
                    &self.nodes[bias].value,
                );
                let (n, cin, cout, geom) =
                    kernels::conv_transpose2d_geom(x, w, b, stride, padding, output_padding)
                        .expect("recorded conv_transpose2d");
                let grads = kernels::conv_transpose2d_backward(
                    x,
                    w,
                    g,
                    n,
                    cin,
                    cout,
                    &geom,
                    [wants(input), wants(weight), wants(bias)],
                );
                collect_conv_grads(grads, input, weight, bias)
            }
            Op::MaxPool2d { input, argmax } => {
                let mut gx = vec![T::ZERO; self.nodes[*input].value.numel()];
                for (&src, &v) in argmax.iter().zip(g) {
                    gx[src] += v;
                }
                vec![(*input, gx)]
            }
            &Op::Relu { input } => {
                let x = self.nodes[input].value.data();
                let gx = x
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| if v > T::ZERO { gv } else { T::ZERO })
                    .collect();
                vec![(input, gx)]
            }
            &Op::Softmax { input } => {
                vec![(input, kernels::softmax_channels_backward(&node.value, g))]
            }
            &Op::Concat { a, b } => {
                let sa = self.nodes[a].value.shape();
                let sb = self.nodes[b].value.shape();
                let plane = sa[2] * sa[3];
                let (ca, cb) = (sa[1] * plane, sb[1] * plane);
                let mut ga = Vec::with_capacity(self.nodes[a].value.numel());
                let mut gb = Vec::with_capacity(self.nodes[b].value.numel());
                for chunk in g.chunks_exact(ca + cb) {
                    ga.extend_from_slice(&chunk[..ca]);
                    gb.extend_from_slice(&chunk[ca..]);
                }
                vec![(a, ga), (b, gb)]
            }
            &Op::Add { a, b } => vec![(a, g.to_vec()), (b, g.to_vec())],
            &Op::Mul { a, b } => {
                let (va, vb) = (self.nodes[a].value.data(), self.nodes[b].value.data());
                let ga = g.iter().zip(vb).map(|(&gv, &y)| gv * y).collect();
                let gb = g.iter().zip(va).map(|(&gv, &x)| gv * x).collect();
                vec![(a, ga), (b, gb)]
            }
            &Op::Scale { input, factor } => {
                vec![(input, g.iter().map(|&v| v * factor).collect())]
            }
            &Op::Sum { input } => vec![(input, vec![g[0]; self.nodes[input].value.numel()])],
            Op::DiceLoss {
                probs,
                target,
                terms,
            } => {
                let yhat = &self.nodes[*probs].value;
                let s = yhat.shape();
                let (n, c, plane) = (s[0], s[1], s[2] * s[3]);
                let scale = g[0] / T::from_f64(c as f64);
                let two = T::from_f64(2.0);
                let mut gx = vec![T::ZERO; yhat.numel()];
                for b in 0..n {
                    for (ch, &(num, den)) in terms.iter().enumerate() {
                        let start = (b * c + ch) * plane;
                        for idx in start..start + plane {
                            let (p, y) = (yhat.data()[idx], target.data()[idx]);
                            // d(num/den)/dp = 2y/den - num·2p/den²
                            let d = two * y / den - num * two * p / (den * den);
                            gx[idx] = -scale * d;
                        }
                    }
                }
                vec![(*probs, gx)]
            }
        }
    }
}

fn collect_conv_grads<T: Scalar>(
    grads: kernels::ConvGrads<T>,
    input: usize,
    weight: usize,
    bias: usize,
) -> Vec<(usize, Vec<T>)> {
    [
        (input, grads.input),
        (weight, grads.weight),
        (bias, grads.bias),
    ]
    .into_iter()
    .filter_map(|(i, g)| g.map(|t| (i, t.into_data())))
    .collect()
}
