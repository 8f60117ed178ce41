//! Categorical Dice loss and Dice Index evaluation.
//!
//! Per class `c`, the soft similarity is
//! `(2·Σ ŷ_c·y_c + s) / (Σ ŷ_c² + Σ y_c² + s)` over every pixel of the batch.
//! Training minimises `1 - mean_c similarity`; evaluation reports the
//! per-class similarity of hard masks as the Dice Index (1 = perfect).

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::LabelMask;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Smoothing added to numerator and denominator.
pub const DEFAULT_SMOOTH: f64 = 1e-7;

/// Per-class `(2·intersection + smooth, sum_sq_pred + sum_sq_ref + smooth)`.
pub(crate) fn dice_terms<T: Scalar>(
    yhat: &Tensor<T>,
    y: &Tensor<T>,
    smooth: T,
) -> Result<Vec<(T, T)>> {
    if yhat.shape() != y.shape() {
        return Err(Error::ShapeMismatch {
            op: "dice",
            left: yhat.shape().to_vec(),
            right: y.shape().to_vec(),
        });
    }
    let [n, c, h, w] = yhat.dims4("dice")?;
    if !(smooth > T::ZERO) {
        return Err(Error::InvalidInput(String::from(
            "smoothing must be positive",
        )));
    }
    let plane = h * w;
    let two = T::from_f64(2.0);
    let mut terms = vec![(T::ZERO, T::ZERO); c];
    for b in 0..n {
        for (ch, (inter, den)) in terms.iter_mut().enumerate() {
            let start = (b * c + ch) * plane;
            let p = &yhat.data()[start..start + plane];
            let r = &y.data()[start..start + plane];
            for (&pv, &rv) in p.iter().zip(r) {
                *inter += pv * rv;
                *den += pv * pv + rv * rv;
            }
        }
    }
    Ok(terms
        .into_iter()
        .map(|(inter, den)| (two * inter + smooth, den + smooth))
        .collect())
}

/// Soft Dice similarity per class.
pub fn dice_similarity<T: Scalar>(
    yhat: &Tensor<T>,
    y: &Tensor<T>,
    smooth: f64,
) -> Result<Vec<f64>> {
    Ok(dice_terms(yhat, y, T::from_f64(smooth))?
        .into_iter()
        .map(|(num, den)| (num / den).to_f64())
        .collect())
}

/// Non-differentiable evaluation of the categorical Dice loss.
pub fn dice_loss_value<T: Scalar>(yhat: &Tensor<T>, y: &Tensor<T>, smooth: f64) -> Result<f64> {
    let sims = dice_similarity(yhat, y, smooth)?;
    Ok(1.0 - sims.iter().sum::<f64>() / sims.len() as f64)
}

/// Dice Index per class between two hard label masks.
///
/// A class absent from both masks scores 1.
pub fn dice_index(pred: &LabelMask, reference: &LabelMask, num_classes: usize) -> Result<Vec<f64>> {
    dice_index_smoothed(pred, reference, num_classes, DEFAULT_SMOOTH)
}

pub fn dice_index_smoothed(
    pred: &LabelMask,
    reference: &LabelMask,
    num_classes: usize,
    smooth: f64,
) -> Result<Vec<f64>> {
    if pred.width() != reference.width() || pred.height() != reference.height() {
        return Err(Error::ShapeMismatch {
            op: "dice_index",
            left: vec![pred.height(), pred.width()],
            right: vec![reference.height(), reference.width()],
        });
    }
    pred.check_labels(num_classes)?;
    reference.check_labels(num_classes)?;
    let mut inter = vec![0u64; num_classes];
    let mut pred_count = vec![0u64; num_classes];
    let mut ref_count = vec![0u64; num_classes];
    for (&p, &r) in pred.labels().iter().zip(reference.labels()) {
        pred_count[p as usize] += 1;
        ref_count[r as usize] += 1;
        if p == r {
            inter[p as usize] += 1;
        }
    }
    Ok((0..num_classes)
        .map(|c| {
            (2.0 * inter[c] as f64 + smooth) / ((pred_count[c] + ref_count[c]) as f64 + smooth)
        })
        .collect())
}

/// Hard labels from an `[N,C,H,W]` probability map; ties go to the lowest
/// class index.
pub fn argmax_channels<T: Scalar>(probs: &Tensor<T>) -> Result<Vec<LabelMask>> {
    let [n, c, h, w] = probs.dims4("argmax_channels")?;
    if c > u8::MAX as usize + 1 {
        return Err(Error::InvalidShape {
            op: "argmax_channels",
            shape: probs.shape().to_vec(),
            reason: "too many classes for u8 labels",
        });
    }
    let plane = h * w;
    (0..n)
        .map(|b| {
            let base = b * c * plane;
            let labels = (0..plane)
                .map(|p| {
                    let mut best = 0;
                    for ch in 1..c {
                        if probs.data()[base + ch * plane + p]
                            > probs.data()[base + best * plane + p]
                        {
                            best = ch;
                        }
                    }
                    best as u8
                })
                .collect();
            LabelMask::new(w, h, labels)
        })
        .collect()
}

/// Per-image, per-class Dice Index with mean and population standard
/// deviation per class.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub class_names: Vec<String>,
    pub image_ids: Vec<String>,
    /// `per_image[i][c]` is the DI of class `c` on image `i`.
    pub per_image: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl MetricReport {
    /// Builds a report from already-computed per-image DI rows.
    pub fn from_rows(
        class_names: Vec<String>,
        image_ids: Vec<String>,
        per_image: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if per_image.is_empty() {
            return Err(Error::InvalidInput(String::from(
                "a metric report needs at least one image",
            )));
        }
        if image_ids.len() != per_image.len()
            || per_image.iter().any(|row| row.len() != class_names.len())
        {
            return Err(Error::InvalidInput(String::from(
                "metric rows do not match image ids or class names",
            )));
        }
        let count = per_image.len() as f64;
        let mean: Vec<f64> = (0..class_names.len())
            .map(|c| per_image.iter().map(|row| row[c]).sum::<f64>() / count)
            .collect();
        let std = (0..class_names.len())
            .map(|c| {
                let var = per_image
                    .iter()
                    .map(|row| (row[c] - mean[c]) * (row[c] - mean[c]))
                    .sum::<f64>()
                    / count;
                libm::sqrt(var)
            })
            .collect();
        Ok(Self {
            class_names,
            image_ids,
            per_image,
            mean,
            std,
        })
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == name)
    }

    /// `mean(std)` with four decimals, e.g. `0.7500(0.2500)`.
    pub fn summary(&self, class: usize) -> String {
        format_mean_std(self.mean[class], self.std[class])
    }
}

pub fn format_mean_std(mean: f64, std: f64) -> String {
    format!("{mean:.4}({std:.4})")
}

/// Class names by index for a 2- or 3-class problem.
pub fn class_names(num_classes: usize) -> Vec<String> {
    ["background", "gland", "border"]
        .iter()
        .take(num_classes)
        .map(|s| String::from(*s))
        .collect()
}

/// Image-level DI report over `(image_id, prediction, reference)` triples.
pub fn image_level_report<'a>(
    pairs: impl IntoIterator<Item = (String, &'a LabelMask, &'a LabelMask)>,
    num_classes: usize,
) -> Result<MetricReport> {
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for (id, pred, reference) in pairs {
        rows.push(dice_index(pred, reference, num_classes)?);
        ids.push(id);
    }
    MetricReport::from_rows(class_names(num_classes), ids, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(w: usize, h: usize, labels: &[u8]) -> LabelMask {
        LabelMask::new(w, h, labels.to_vec()).unwrap()
    }

    #[test]
    fn hand_computed_two_by_two_similarity() {
        // channel 1 (gland): y = [[1,1],[0,0]], ŷ = [[1,.5],[.5,0]]
        let y = Tensor::<f64>::new([1, 2, 2, 2], vec![0., 0., 1., 1., 1., 1., 0., 0.]).unwrap();
        let yhat =
            Tensor::<f64>::new([1, 2, 2, 2], vec![0., 0.5, 0.5, 1., 1., 0.5, 0.5, 0.]).unwrap();
        let sims = dice_similarity(&yhat, &y, DEFAULT_SMOOTH).unwrap();
        assert!((sims[1] - 6.0 / 7.0).abs() < 1e-6);
        let exact = dice_similarity(&yhat, &y, 1e-300).unwrap();
        assert!((exact[1] - 6.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn disjoint_masks_score_near_zero() {
        let y = Tensor::<f64>::new([1, 1, 1, 4], vec![1., 1., 0., 0.]).unwrap();
        let yhat = Tensor::<f64>::new([1, 1, 1, 4], vec![0., 0., 1., 1.]).unwrap();
        let s = dice_similarity(&yhat, &y, DEFAULT_SMOOTH).unwrap()[0];
        assert!(s < 1e-7);
    }

    #[test]
    fn rejects_non_positive_smoothing_and_shape_mismatch() {
        let a = Tensor::<f64>::zeros([1, 2, 2, 2]);
        let b = Tensor::<f64>::zeros([1, 2, 2, 1]);
        assert!(matches!(
            dice_similarity(&a, &b, 1e-7),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(dice_similarity(&a, &a, 0.0).is_err());
    }

    #[test]
    fn all_background_against_half_gland() {
        let pred = mask(4, 2, &[0; 8]);
        let reference = mask(4, 2, &[1, 1, 1, 1, 0, 0, 0, 0]);
        let di = dice_index(&pred, &reference, 2).unwrap();
        assert!((di[0] - 2.0 / 3.0).abs() < 1e-7);
        assert!(di[1] < 1e-7);
    }

    #[test]
    fn empty_class_in_both_scores_one() {
        let m = mask(2, 2, &[0, 1, 1, 0]);
        let di = dice_index(&m, &m, 3).unwrap();
        assert_eq!(di, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn out_of_range_label_is_rejected() {
        let a = mask(1, 2, &[0, 2]);
        let b = mask(1, 2, &[0, 1]);
        assert!(matches!(
            dice_index(&a, &b, 2),
            Err(Error::LabelOutOfRange { label: 2, .. })
        ));
    }

    #[test]
    fn argmax_breaks_ties_low() {
        let p = Tensor::<f32>::new([1, 3, 1, 2], vec![0.4, 0.2, 0.4, 0.5, 0.2, 0.3]).unwrap();
        let labels = argmax_channels(&p).unwrap();
        assert_eq!(labels[0].labels(), &[0, 1]);
    }

    #[test]
    fn report_mean_and_population_std() {
        let rows = vec![vec![1.0, 1.0], vec![1.0, 0.5]];
        let report =
            MetricReport::from_rows(class_names(2), vec!["a".into(), "b".into()], rows).unwrap();
        assert_eq!(report.mean[1], 0.75);
        assert_eq!(report.std[1], 0.25);
        assert_eq!(report.summary(1), "0.7500(0.2500)");
        assert_eq!(report.summary(0), "1.0000(0.0000)");
    }

    #[test]
    fn empty_report_is_an_error() {
        assert!(image_level_report(Vec::new(), 2).is_err());
    }
}
