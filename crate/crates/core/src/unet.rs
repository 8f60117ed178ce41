//! U-Net assembly: encoder blocks with 2× max pooling, a bottleneck block,
//! a decoder of 2× transposed convolutions with skip concatenation, and a
//! 1×1 softmax head.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::blocks::{block_forward, block_param_count, BlockKind, BlockParams, Conv};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Decoder upsampling: kernel 3, stride 2, padding 1, output padding 1.
pub const UP_KERNEL: usize = 3;
pub const UP_STRIDE: usize = 2;
pub const UP_PADDING: usize = 1;
pub const UP_OUTPUT_PADDING: usize = 1;

/// Shrinks the initial head weights so an untrained model predicts close to
/// uniform class probabilities.
pub const HEAD_INIT_SCALE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct UNetConfig {
    pub block_kind: BlockKind,
    /// Encoder levels including the bottleneck.
    pub depth: usize,
    pub base_filters: usize,
    pub num_classes: usize,
    pub input_side: usize,
    pub input_channels: usize,
}

impl Default for UNetConfig {
    /// Five levels from 64 to 1024 filters on 256² RGB input, two classes.
    fn default() -> Self {
        Self {
            block_kind: BlockKind::Basic,
            depth: 5,
            base_filters: 64,
            num_classes: 2,
            input_side: 256,
            input_channels: 3,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.depth == 0 || self.depth > 16 {
            return fail(format!("depth must be in 1..=16, got {}", self.depth));
        }
        if self.base_filters == 0 {
            return fail(String::from("base_filters must be positive"));
        }
        if self.input_channels == 0 {
            return fail(String::from("input_channels must be positive"));
        }
        if !(2..=3).contains(&self.num_classes) {
            return fail(format!(
                "num_classes must be 2 or 3, got {}",
                self.num_classes
            ));
        }
        let factor = 1usize << (self.depth - 1);
        if self.input_side == 0 || self.input_side % factor != 0 {
            return fail(format!(
                "input_side {} must be a positive multiple of 2^(depth-1) = {factor}",
                self.input_side
            ));
        }
        if self.block_kind == BlockKind::MultiRes && self.base_filters % 4 != 0 {
            return fail(format!(
                "multi-resolution blocks need base_filters divisible by 4, got {}",
                self.base_filters
            ));
        }
        Ok(())
    }

    /// Output channels of encoder level `level`.
    pub fn channels(&self, level: usize) -> usize {
        self.base_filters << level
    }

    pub fn bottleneck_channels(&self) -> usize {
        self.channels(self.depth - 1)
    }

    /// Closed-form parameter count for this architecture.
    pub fn param_count(&self) -> usize {
        let kind = self.block_kind;
        let mut total = 0;
        for level in 0..self.depth {
            let f_in = if level == 0 {
                self.input_channels
            } else {
                self.channels(level - 1)
            };
            total += block_param_count(kind, f_in, self.channels(level));
        }
        for level in 0..self.depth - 1 {
            let (f, deeper) = (self.channels(level), self.channels(level + 1));
            total += UP_KERNEL * UP_KERNEL * deeper * f + f;
            total += block_param_count(kind, 2 * f, f);
        }
        total + self.channels(0) * self.num_classes + self.num_classes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLevel<P> {
    /// Transposed convolution from level `i + 1` channels down to level `i`.
    pub up: Conv<P>,
    /// Block mapping `2·f_i` concatenated channels to `f_i`.
    pub block: BlockParams<P>,
}

/// All parameters of a U-Net, generic over storage.
#[derive(Debug, Clone, PartialEq)]
pub struct UNetParams<P> {
    pub encoder: Vec<BlockParams<P>>,
    /// Indexed by level; level `depth - 1` (the bottleneck) has no decoder.
    pub decoder: Vec<DecoderLevel<P>>,
    pub head: Conv<P>,
}

impl<P> UNetParams<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> UNetParams<Q> {
        UNetParams {
            encoder: self.encoder.iter().map(|b| b.map(f)).collect(),
            decoder: self
                .decoder
                .iter()
                .map(|d| DecoderLevel {
                    up: d.up.map(f),
                    block: d.block.map(f),
                })
                .collect(),
            head: self.head.map(f),
        }
    }

    /// Visits every parameter with its checkpoint name, in a fixed order.
    pub fn visit<'a>(&'a self, f: &mut impl FnMut(String, &'a P)) {
        for (i, b) in self.encoder.iter().enumerate() {
            b.visit(&format!("enc{i}"), f);
        }
        for (i, d) in self.decoder.iter().enumerate() {
            d.up.visit(&format!("dec{i}.up"), f);
            d.block.visit(&format!("dec{i}"), f);
        }
        self.head.visit("head", f);
    }

    pub fn visit_mut<'a>(&'a mut self, f: &mut impl FnMut(String, &'a mut P)) {
        for (i, b) in self.encoder.iter_mut().enumerate() {
            b.visit_mut(&format!("enc{i}"), f);
        }
        for (i, d) in self.decoder.iter_mut().enumerate() {
            d.up.visit_mut(&format!("dec{i}.up"), f);
            d.block.visit_mut(&format!("dec{i}"), f);
        }
        self.head.visit_mut("head", f);
    }

    pub fn names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit(&mut |n, _| names.push(n));
        names
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UNetModel<T> {
    pub config: UNetConfig,
    pub params: UNetParams<Tensor<T>>,
}

/// Builds a model with deterministic initialisation from `seed`.
pub fn build_unet<T: Scalar>(config: UNetConfig, seed: u64) -> Result<UNetModel<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kind = config.block_kind;
    let mut encoder = Vec::with_capacity(config.depth);
    for level in 0..config.depth {
        let f_in = if level == 0 {
            config.input_channels
        } else {
            config.channels(level - 1)
        };
        encoder.push(BlockParams::init(
            kind,
            f_in,
            config.channels(level),
            &mut rng,
        )?);
    }
    let mut decoder = Vec::with_capacity(config.depth - 1);
    for level in 0..config.depth - 1 {
        let (f, deeper) = (config.channels(level), config.channels(level + 1));
        let up = Conv::init(
            [deeper, f, UP_KERNEL, UP_KERNEL],
            f,
            deeper * UP_KERNEL * UP_KERNEL,
            &mut rng,
        );
        let block = BlockParams::init(kind, 2 * f, f, &mut rng)?;
        decoder.push(DecoderLevel { up, block });
    }
    let mut head = Conv::conv(config.channels(0), config.num_classes, 1, &mut rng);
    head.weight = head.weight.map(|w| w * T::from_f64(HEAD_INIT_SCALE));
    Ok(UNetModel {
        config,
        params: UNetParams {
            encoder,
            decoder,
            head,
        },
    })
}

impl<T: Scalar> UNetModel<T> {
    pub fn param_count(&self) -> usize {
        let mut total = 0;
        self.params.visit(&mut |_, t| total += t.numel());
        total
    }

    /// Records all parameters on `tape` as trainable leaves.
    pub fn bind(&self, tape: &mut Tape<T>) -> UNetParams<Var> {
        self.params.map(&mut |t: &Tensor<T>| tape.param(t.clone()))
    }

    pub fn param_tensors(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        self.params.visit(&mut |_, t| out.push(t));
        out
    }

    pub fn param_tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        self.params.visit_mut(&mut |_, t| out.push(t));
        out
    }

    /// Forward pass recording on `tape`; returns per-pixel class
    /// probabilities `[N, C, S, S]`.
    pub fn forward(&self, tape: &mut Tape<T>, params: &UNetParams<Var>, batch: Var) -> Result<Var> {
        forward(&self.config, tape, params, batch)
    }

    /// Inference without gradient bookkeeping.
    pub fn predict(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::no_grad();
        let params = self.bind(&mut tape);
        let x = tape.constant(batch.clone());
        let probs = forward(&self.config, &mut tape, &params, x)?;
        Ok(tape.value(probs).clone())
    }

    pub fn cast<U: Scalar>(&self) -> UNetModel<U> {
        UNetModel {
            config: self.config,
            params: self.params.map(&mut |t: &Tensor<T>| t.cast()),
        }
    }
}

fn expect_side<T: Scalar>(tape: &Tape<T>, v: Var, side: usize, what: &'static str) -> Result<()> {
    let shape = tape.try_value(v)?.shape();
    if shape.len() != 4 || shape[2] != side || shape[3] != side {
        return Err(Error::InvalidShape {
            op: what,
            shape: shape.to_vec(),
            reason: "feature map side does not match its level",
        });
    }
    Ok(())
}

pub fn forward<T: Scalar>(
    config: &UNetConfig,
    tape: &mut Tape<T>,
    params: &UNetParams<Var>,
    batch: Var,
) -> Result<Var> {
    let shape = tape.try_value(batch)?.shape().to_vec();
    let side = config.input_side;
    if shape.len() != 4 || shape[1] != config.input_channels || shape[2] != side || shape[3] != side
    {
        return Err(Error::ShapeMismatch {
            op: "unet forward",
            left: shape,
            right: alloc::vec![config.input_channels, side, side],
        });
    }
    let mut skips = Vec::with_capacity(config.depth);
    let mut h = batch;
    for (level, block) in params.encoder.iter().enumerate() {
        if level > 0 {
            h = tape.maxpool2d(h)?;
        }
        h = block_forward(tape, h, block)?;
        expect_side(tape, h, side >> level, "encoder")?;
        skips.push(h);
    }
    skips.pop();
    for (level, dec) in params.decoder.iter().enumerate().rev() {
        let up = tape.conv_transpose2d(
            h,
            dec.up.weight,
            dec.up.bias,
            UP_STRIDE,
            UP_PADDING,
            UP_OUTPUT_PADDING,
        )?;
        let cat = tape.concat_channels(up, skips[level])?;
        h = block_forward(tape, cat, &dec.block)?;
        expect_side(tape, h, side >> level, "decoder")?;
    }
    let logits = tape.conv2d(h, params.head.weight, params.head.bias, 1, 0)?;
    tape.softmax_channels(logits)
}
