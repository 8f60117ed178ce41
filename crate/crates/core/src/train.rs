//! Mini-batch training with categorical Dice loss and NADAM.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::data::mask::{BORDER, GLAND};
use crate::data::onehot_encode;
use crate::data::{AugmentParams, Image, LabelMask, Transform};
use crate::error::{Error, Result};
use crate::loss::{argmax_channels, dice_index, DEFAULT_SMOOTH};
use crate::optim::{NadamConfig, NadamState};
use crate::tensor::Tensor;
use crate::unet::UNetModel;

/// One training example at model resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Image,
    /// Labels in `0..num_classes` of the model being trained.
    pub mask: LabelMask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub optimizer: NadamConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Random paired augmentation of every training sample, if set.
    pub augment: Option<AugmentParams>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: NadamConfig::default(),
            epochs: 250,
            batch_size: 8,
            seed: 0,
            augment: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Sample-weighted mean of the batch losses.
    pub train_loss: f64,
    /// Mean image-level DI per model class on the validation set.
    pub val_di: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub steps: usize,
}

/// Stream ids separating shuffle and augmentation draws of one seed.
const SHUFFLE_STREAM: u64 = 1 << 62;
const AUGMENT_STREAM: u64 = 1 << 63;

fn batch_tensors(samples: &[&Sample], num_classes: usize) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let images: Vec<Tensor<f32>> = samples.iter().map(|s| s.image.to_tensor()).collect();
    let masks: Vec<LabelMask> = samples.iter().map(|s| s.mask.clone()).collect();
    Ok((Tensor::stack(&images)?, onehot_encode(&masks, num_classes)?))
}

/// Argmax label masks for `samples`, evaluated `batch_size` at a time.
pub fn predict_masks(
    model: &UNetModel<f32>,
    images: &[&Image],
    batch_size: usize,
) -> Result<Vec<LabelMask>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch_size.max(1)) {
        let batch: Vec<Tensor<f32>> = chunk.iter().map(|im| im.to_tensor()).collect();
        let probs = model.predict(&Tensor::stack(&batch)?)?;
        out.extend(argmax_channels(&probs)?);
    }
    Ok(out)
}

/// Collapses the border class into gland so that two- and three-class models
/// are scored on the same gland/background partition.
pub fn merge_border(mask: &LabelMask) -> LabelMask {
    mask.merge(BORDER, GLAND)
}

/// Mean per-class DI of the model's predictions over `samples`.
pub fn mean_dice_index(
    model: &UNetModel<f32>,
    samples: &[Sample],
    batch_size: usize,
) -> Result<Vec<f64>> {
    let classes = model.config.num_classes;
    let images: Vec<&Image> = samples.iter().map(|s| &s.image).collect();
    let preds = predict_masks(model, &images, batch_size)?;
    let mut sums = alloc::vec![0.0; classes];
    for (pred, sample) in preds.iter().zip(samples) {
        for (s, di) in sums
            .iter_mut()
            .zip(dice_index(pred, &sample.mask, classes)?)
        {
            *s += di;
        }
    }
    Ok(sums.into_iter().map(|s| s / samples.len() as f64).collect())
}

/// Trains `model` in place for `config.epochs` epochs of
/// `ceil(train.len() / batch_size)` NADAM steps each. Validation DI is
/// computed on `val`, or on `train` when `val` is empty.
pub fn train_model(
    model: &mut UNetModel<f32>,
    train: &[Sample],
    val: &[Sample],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<History> {
    if train.is_empty() {
        return Err(Error::InvalidInput(String::from("training set is empty")));
    }
    if config.batch_size == 0 || config.epochs == 0 {
        return Err(Error::InvalidConfig(String::from(
            "batch_size and epochs must be at least 1",
        )));
    }
    if let Some(a) = &config.augment {
        a.validate()?;
    }
    let side = model.config.input_side;
    for s in train.iter().chain(val) {
        if s.image.width() != side || s.image.height() != side || s.mask.width() != side {
            return Err(Error::InvalidInput(alloc::format!(
                "sample {} is not {side}x{side}",
                s.id
            )));
        }
    }
    let classes = model.config.num_classes;
    let mut optimizer = NadamState::new(config.optimizer, model.param_tensors());
    let mut history = History::default();
    let eval_set = if val.is_empty() { train } else { val };

    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
        shuffle_rng.set_stream(SHUFFLE_STREAM | epoch as u64);
        order.shuffle(&mut shuffle_rng);

        let mut loss_sum = 0.0;
        for batch_idx in order.chunks(config.batch_size) {
            history.steps += 1;
            let augmented: Vec<Sample>;
            let batch: Vec<&Sample> = match &config.augment {
                None => batch_idx.iter().map(|&i| &train[i]).collect(),
                Some(params) => {
                    augmented = batch_idx
                        .iter()
                        .map(|&i| {
                            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                            rng.set_stream(AUGMENT_STREAM | ((epoch as u64) << 32) | i as u64);
                            let t = Transform::sample(params, side, side, &mut rng);
                            Sample {
                                id: train[i].id.clone(),
                                image: t.apply_image(&train[i].image),
                                mask: t.apply_mask(&train[i].mask),
                            }
                        })
                        .collect();
                    augmented.iter().collect()
                }
            };
            let (images, target) = batch_tensors(&batch, classes)?;
            let diverged = |loss: f64| Error::Diverged {
                epoch,
                step: history.steps,
                loss,
            };

            let mut tape = Tape::new();
            let params = model.bind(&mut tape);
            let x = tape.constant(images);
            let step = (|| {
                let probs = model.forward(&mut tape, &params, x)?;
                let loss = tape.dice_loss(probs, &target, DEFAULT_SMOOTH as f32)?;
                Ok(loss)
            })();
            let loss = match step {
                Ok(loss) => loss,
                Err(Error::NonFinite { .. }) => return Err(diverged(f64::NAN)),
                Err(e) => return Err(e),
            };
            let loss_value = tape.value(loss).data()[0] as f64;
            if !loss_value.is_finite() {
                return Err(diverged(loss_value));
            }
            tape.backward(loss)?;
            let mut grads = Vec::new();
            params.visit(&mut |_, &v| {
                grads.push(
                    tape.take_grad(v)
                        .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape())),
                )
            });
            drop(tape);
            let mut tensors = model.param_tensors_mut();
            match optimizer.step(&mut tensors, &grads) {
                Err(Error::NonFiniteGradient { .. }) => return Err(diverged(loss_value)),
                other => other?,
            }
            loss_sum += loss_value * batch.len() as f64;
        }

        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_di: mean_dice_index(model, eval_set, config.batch_size)?,
        };
        on_epoch(&record);
        history.epochs.push(record);
    }
    Ok(history)
}
