use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const BACKGROUND: u8 = 0;
pub const GLAND: u8 = 1;
pub const BORDER: u8 = 2;

/// Row-major grid of class indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelMask {
    width: usize,
    height: usize,
    labels: Vec<u8>,
}

impl LabelMask {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self> {
        if width * height != labels.len() {
            return Err(Error::DataLength {
                shape: vec![height, width],
                len: labels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    pub fn filled(width: usize, height: usize, label: u8) -> Self {
        Self {
            width,
            height,
            labels: vec![label; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let mut labels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                labels.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            labels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn into_labels(self) -> Vec<u8> {
        self.labels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, label: u8) {
        self.labels[y * self.width + x] = label;
    }

    pub fn check_labels(&self, num_classes: usize) -> Result<()> {
        match self.labels.iter().find(|&&l| l as usize >= num_classes) {
            Some(&label) => Err(Error::LabelOutOfRange { label, num_classes }),
            None => Ok(()),
        }
    }

    /// Sorted set of labels present.
    pub fn label_set(&self) -> Vec<u8> {
        let mut seen = [false; 256];
        for &l in &self.labels {
            seen[l as usize] = true;
        }
        (0..=255u8).filter(|&l| seen[l as usize]).collect()
    }

    pub fn count(&self, label: u8) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// Relabels `from` as `to`.
    pub fn merge(&self, from: u8, to: u8) -> Self {
        Self {
            labels: self
                .labels
                .iter()
                .map(|&l| if l == from { to } else { l })
                .collect(),
            ..*self
        }
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Self> {
        if x0 + width > self.width || y0 + height > self.height {
            return Err(Error::InvalidInput(alloc::format!(
                "crop {width}x{height}+{x0}+{y0} outside {}x{} mask",
                self.width,
                self.height
            )));
        }
        Ok(Self::from_fn(width, height, |x, y| {
            self.get(x0 + x, y0 + y)
        }))
    }
}

/// One-hot `[N,C,H,W]` encoding of a batch of equally sized masks.
pub fn onehot_encode<T: Scalar>(masks: &[LabelMask], num_classes: usize) -> Result<Tensor<T>> {
    let first = masks
        .first()
        .ok_or_else(|| Error::InvalidInput(alloc::string::String::from("no masks to encode")))?;
    let (w, h) = (first.width, first.height);
    let plane = w * h;
    let mut data = vec![T::ZERO; masks.len() * num_classes * plane];
    for (b, m) in masks.iter().enumerate() {
        if (m.width, m.height) != (w, h) {
            return Err(Error::ShapeMismatch {
                op: "onehot_encode",
                left: vec![h, w],
                right: vec![m.height, m.width],
            });
        }
        m.check_labels(num_classes)?;
        for (p, &l) in m.labels.iter().enumerate() {
            data[(b * num_classes + l as usize) * plane + p] = T::ONE;
        }
    }
    Tensor::new([masks.len(), num_classes, h, w], data)
}
