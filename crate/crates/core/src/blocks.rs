//! The three interchangeable convolutional block families.
//!
//! Every block maps `[N, f_in, H, W]` to `[N, f_out, H, W]` using 3×3
//! convolutions with padding 1. Parameter containers are generic over their
//! storage so the same structure holds tensors (a model) or tape variables
//! (a bound forward pass).

use alloc::format;
use alloc::string::String;
use alloc::vec;

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockKind {
    Basic,
    Residual,
    MultiRes,
}

impl BlockKind {
    pub const ALL: [BlockKind; 3] = [BlockKind::Basic, BlockKind::Residual, BlockKind::MultiRes];

    pub fn code(self) -> u32 {
        match self {
            BlockKind::Basic => 0,
            BlockKind::Residual => 1,
            BlockKind::MultiRes => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    /// Short name used in configs: `basic`, `rb`, `mrb`.
    pub fn name(self) -> &'static str {
        match self {
            BlockKind::Basic => "basic",
            BlockKind::Residual => "rb",
            BlockKind::MultiRes => "mrb",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "basic" => Some(BlockKind::Basic),
            "rb" | "residual" => Some(BlockKind::Residual),
            "mrb" | "multires" | "multi-res" => Some(BlockKind::MultiRes),
            _ => None,
        }
    }

    /// Learning rate used for this block family when none is configured.
    pub fn default_learning_rate(self) -> f64 {
        match self {
            BlockKind::Basic | BlockKind::Residual => 5e-4,
            BlockKind::MultiRes => 1e-4,
        }
    }
}

impl core::fmt::Display for BlockKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

/// Weight and bias of one convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv<P> {
    pub weight: P,
    pub bias: P,
}

impl<P> Conv<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> Conv<Q> {
        Conv {
            weight: f(&self.weight),
            bias: f(&self.bias),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut impl FnMut(String, &'a P)) {
        f(format!("{prefix}.weight"), &self.weight);
        f(format!("{prefix}.bias"), &self.bias);
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut impl FnMut(String, &'a mut P)) {
        f(format!("{prefix}.weight"), &mut self.weight);
        f(format!("{prefix}.bias"), &mut self.bias);
    }
}

impl<T: Scalar> Conv<Tensor<T>> {
    /// Fan-in scaled uniform weights (`bound = sqrt(6 / fan_in)`), zero bias.
    /// `shape` is `[out, in, kh, kw]` for convolutions and `[in, out, kh, kw]`
    /// for transposed convolutions; `fan_in` is given explicitly.
    pub fn init<R: Rng + ?Sized>(
        shape: [usize; 4],
        bias_len: usize,
        fan_in: usize,
        rng: &mut R,
    ) -> Self {
        let bound = libm::sqrt(6.0 / fan_in as f64);
        Conv {
            weight: Tensor::from_fn(shape, |_| T::from_f64(rng.gen_range(-bound..bound))),
            bias: Tensor::zeros([bias_len]),
        }
    }

    pub fn conv<R: Rng + ?Sized>(f_in: usize, f_out: usize, kernel: usize, rng: &mut R) -> Self {
        Self::init(
            [f_out, f_in, kernel, kernel],
            f_out,
            f_in * kernel * kernel,
            rng,
        )
    }

    pub fn zeros(f_in: usize, f_out: usize, kernel: usize) -> Self {
        Conv {
            weight: Tensor::zeros([f_out, f_in, kernel, kernel]),
            bias: Tensor::zeros([f_out]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BlockLayers<P> {
    Basic {
        conv1: Conv<P>,
        conv2: Conv<P>,
    },
    Residual {
        norm: Conv<P>,
        conv1: Conv<P>,
        conv2: Conv<P>,
    },
    MultiRes {
        branch1: Conv<P>,
        branch2: Conv<P>,
        branch3: Conv<P>,
        shortcut: Conv<P>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams<P> {
    pub f_in: usize,
    pub f_out: usize,
    pub layers: BlockLayers<P>,
}

/// Output channels of the three chained multi-resolution convolutions.
pub fn multires_split(f_out: usize) -> Result<[usize; 3]> {
    if f_out == 0 || f_out % 4 != 0 {
        return Err(Error::InvalidConfig(format!(
            "multi-resolution block needs f_out divisible by 4, got {f_out}"
        )));
    }
    Ok([f_out / 4, f_out / 4, f_out / 2])
}

/// Closed-form parameter count of one block.
pub fn block_param_count(kind: BlockKind, f_in: usize, f_out: usize) -> usize {
    match kind {
        BlockKind::Basic => 9 * f_in * f_out + 9 * f_out * f_out + 2 * f_out,
        BlockKind::Residual => 9 * f_in * f_out + 18 * f_out * f_out + 3 * f_out,
        BlockKind::MultiRes => {
            let (q, h) = (f_out / 4, f_out / 2);
            9 * f_in * q + 9 * q * q + 9 * q * h + f_in * f_out + (q + q + h + f_out)
        }
    }
}

impl<P> BlockParams<P> {
    pub fn kind(&self) -> BlockKind {
        match self.layers {
            BlockLayers::Basic { .. } => BlockKind::Basic,
            BlockLayers::Residual { .. } => BlockKind::Residual,
            BlockLayers::MultiRes { .. } => BlockKind::MultiRes,
        }
    }

    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> BlockParams<Q> {
        let layers = match &self.layers {
            BlockLayers::Basic { conv1, conv2 } => BlockLayers::Basic {
                conv1: conv1.map(f),
                conv2: conv2.map(f),
            },
            BlockLayers::Residual { norm, conv1, conv2 } => BlockLayers::Residual {
                norm: norm.map(f),
                conv1: conv1.map(f),
                conv2: conv2.map(f),
            },
            BlockLayers::MultiRes {
                branch1,
                branch2,
                branch3,
                shortcut,
            } => BlockLayers::MultiRes {
                branch1: branch1.map(f),
                branch2: branch2.map(f),
                branch3: branch3.map(f),
                shortcut: shortcut.map(f),
            },
        };
        BlockParams {
            f_in: self.f_in,
            f_out: self.f_out,
            layers,
        }
    }

    pub fn convs(&self) -> alloc::vec::Vec<(&'static str, &Conv<P>)> {
        match &self.layers {
            BlockLayers::Basic { conv1, conv2 } => vec![("conv1", conv1), ("conv2", conv2)],
            BlockLayers::Residual { norm, conv1, conv2 } => {
                vec![("norm", norm), ("conv1", conv1), ("conv2", conv2)]
            }
            BlockLayers::MultiRes {
                branch1,
                branch2,
                branch3,
                shortcut,
            } => vec![
                ("branch1", branch1),
                ("branch2", branch2),
                ("branch3", branch3),
                ("shortcut", shortcut),
            ],
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut impl FnMut(String, &'a P)) {
        for (name, conv) in self.convs() {
            conv.visit(&format!("{prefix}.{name}"), f);
        }
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut impl FnMut(String, &'a mut P)) {
        let convs: alloc::vec::Vec<(&str, &'a mut Conv<P>)> = match &mut self.layers {
            BlockLayers::Basic { conv1, conv2 } => vec![("conv1", conv1), ("conv2", conv2)],
            BlockLayers::Residual { norm, conv1, conv2 } => {
                vec![("norm", norm), ("conv1", conv1), ("conv2", conv2)]
            }
            BlockLayers::MultiRes {
                branch1,
                branch2,
                branch3,
                shortcut,
            } => vec![
                ("branch1", branch1),
                ("branch2", branch2),
                ("branch3", branch3),
                ("shortcut", shortcut),
            ],
        };
        for (name, conv) in convs {
            conv.visit_mut(&format!("{prefix}.{name}"), f);
        }
    }
}

impl<T: Scalar> BlockParams<Tensor<T>> {
    /// Randomly initialised parameters for one block.
    pub fn init<R: Rng + ?Sized>(
        kind: BlockKind,
        f_in: usize,
        f_out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Self::build(kind, f_in, f_out, &mut |i, o, k| Conv::conv(i, o, k, rng))
    }

    /// All-zero parameters, mostly useful in tests.
    pub fn zeros(kind: BlockKind, f_in: usize, f_out: usize) -> Result<Self> {
        Self::build(kind, f_in, f_out, &mut |i, o, k| Conv::zeros(i, o, k))
    }

    fn build(
        kind: BlockKind,
        f_in: usize,
        f_out: usize,
        make: &mut impl FnMut(usize, usize, usize) -> Conv<Tensor<T>>,
    ) -> Result<Self> {
        if f_in == 0 || f_out == 0 {
            return Err(Error::InvalidConfig(format!(
                "block channels must be positive, got {f_in} -> {f_out}"
            )));
        }
        let layers = match kind {
            BlockKind::Basic => BlockLayers::Basic {
                conv1: make(f_in, f_out, 3),
                conv2: make(f_out, f_out, 3),
            },
            BlockKind::Residual => BlockLayers::Residual {
                norm: make(f_in, f_out, 3),
                conv1: make(f_out, f_out, 3),
                conv2: make(f_out, f_out, 3),
            },
            BlockKind::MultiRes => {
                let [a, b, c] = multires_split(f_out)?;
                BlockLayers::MultiRes {
                    branch1: make(f_in, a, 3),
                    branch2: make(a, b, 3),
                    branch3: make(b, c, 3),
                    shortcut: make(f_in, f_out, 1),
                }
            }
        };
        Ok(Self {
            f_in,
            f_out,
            layers,
        })
    }

    pub fn param_count(&self) -> usize {
        let mut total = 0;
        self.visit("", &mut |_, t: &Tensor<T>| total += t.numel());
        total
    }

    /// Records every tensor on `tape` as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> BlockParams<Var> {
        self.map(&mut |t: &Tensor<T>| tape.param(t.clone()))
    }
}

fn conv3<T: Scalar>(tape: &mut Tape<T>, x: Var, c: &Conv<Var>) -> Result<Var> {
    let y = tape.conv2d(x, c.weight, c.bias, 1, 1)?;
    tape.relu(y)
}

fn check_input<T: Scalar>(
    tape: &Tape<T>,
    x: Var,
    p: &BlockParams<Var>,
    want: BlockKind,
) -> Result<()> {
    if p.kind() != want {
        return Err(Error::InvalidConfig(format!(
            "expected {want} block parameters, got {}",
            p.kind()
        )));
    }
    let shape = tape.try_value(x)?.shape();
    if shape.len() != 4 || shape[1] != p.f_in {
        return Err(Error::ShapeMismatch {
            op: "block",
            left: shape.to_vec(),
            right: vec![p.f_in, p.f_out],
        });
    }
    Ok(())
}

/// `relu(conv2(relu(conv1(x))))`.
pub fn basic_block<T: Scalar>(tape: &mut Tape<T>, x: Var, p: &BlockParams<Var>) -> Result<Var> {
    check_input(tape, x, p, BlockKind::Basic)?;
    let BlockLayers::Basic { conv1, conv2 } = &p.layers else {
        unreachable!()
    };
    let h = conv3(tape, x, conv1)?;
    conv3(tape, h, conv2)
}

/// `a + relu(conv2(relu(conv1(a))))` with `a = relu(norm(x))`; no activation
/// after the addition.
pub fn residual_block<T: Scalar>(tape: &mut Tape<T>, x: Var, p: &BlockParams<Var>) -> Result<Var> {
    check_input(tape, x, p, BlockKind::Residual)?;
    let BlockLayers::Residual { norm, conv1, conv2 } = &p.layers else {
        unreachable!()
    };
    let a = conv3(tape, x, norm)?;
    let h = conv3(tape, a, conv1)?;
    let h = conv3(tape, h, conv2)?;
    tape.add(a, h)
}

/// `concat(b1, b2, b3) + shortcut(x)` where `b1 → b2 → b3` are chained
/// 3×3 convolutions with `f_out/4`, `f_out/4`, `f_out/2` channels and the
/// shortcut is a linear 1×1 convolution.
pub fn multires_block<T: Scalar>(tape: &mut Tape<T>, x: Var, p: &BlockParams<Var>) -> Result<Var> {
    check_input(tape, x, p, BlockKind::MultiRes)?;
    let BlockLayers::MultiRes {
        branch1,
        branch2,
        branch3,
        shortcut,
    } = &p.layers
    else {
        unreachable!()
    };
    let b1 = conv3(tape, x, branch1)?;
    let b2 = conv3(tape, b1, branch2)?;
    let b3 = conv3(tape, b2, branch3)?;
    let cat = tape.concat_channels(b1, b2)?;
    let cat = tape.concat_channels(cat, b3)?;
    let skip = tape.conv2d(x, shortcut.weight, shortcut.bias, 1, 0)?;
    tape.add(cat, skip)
}

pub fn block_forward<T: Scalar>(tape: &mut Tape<T>, x: Var, p: &BlockParams<Var>) -> Result<Var> {
    match p.kind() {
        BlockKind::Basic => basic_block(tape, x, p),
        BlockKind::Residual => residual_block(tape, x, p),
        BlockKind::MultiRes => multires_block(tape, x, p),
    }
}
