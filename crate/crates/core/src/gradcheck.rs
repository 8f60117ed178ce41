//! Central finite-difference gradient verification in `f64`.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    /// Coordinates checked per input; all of them when the input is smaller.
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-4,
            max_coords: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input, flat index)` of the worst coordinate.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// `|a - n| / max(|a|, |n|, 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

fn sample_coords(numel: usize, opts: &GradCheckOptions, input: usize) -> Vec<usize> {
    if numel <= opts.max_coords {
        return (0..numel).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(input as u64);
    let mut idx = rand::seq::index::sample(&mut rng, numel, opts.max_coords).into_vec();
    idx.sort_unstable();
    idx
}

/// Compares given analytic gradients against central differences of `eval`.
pub fn check_gradients(
    mut eval: impl FnMut(&[Tensor<f64>]) -> Result<f64>,
    analytic: &[Tensor<f64>],
    inputs: &[Tensor<f64>],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, grad) in analytic.iter().enumerate() {
        for idx in sample_coords(inputs[i].numel(), opts, i) {
            let x0 = inputs[i].data()[idx];
            let h = opts.epsilon * x0.abs().max(1.0);
            let mut at = |offset: f64| -> Result<f64> {
                work[i].data_mut()[idx] = x0 + offset * h;
                eval(&work)
            };
            // five-point central stencil
            let (p1, m1, p2, m2) = (at(1.0)?, at(-1.0)?, at(2.0)?, at(-2.0)?);
            work[i].data_mut()[idx] = x0;
            let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
            let err = relative_error(grad.data()[idx], numeric);
            if err > report.max_rel_error || report.checked == 0 {
                report.max_rel_error = err;
                report.worst = (i, idx);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

/// Checks the tape gradients of scalar `f` with respect to every input.
pub fn grad_check<F>(
    f: F,
    inputs: &[Tensor<f64>],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            tape.grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape()))
        })
        .collect();
    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::no_grad();
        let vars: Vec<Var> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).data()[0])
    };
    check_gradients(eval, &analytic, inputs, opts)
}
