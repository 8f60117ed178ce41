use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::{Image, LabelMask};
use crate::error::{Error, Result};

/// Provenance of one training example.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PatchRecord {
    pub patient_id: String,
    pub slide_id: String,
    pub x: usize,
    pub y: usize,
    pub image_path: String,
    pub mask_path: String,
}

impl PatchRecord {
    /// File stem `<patient>__<slide>__<x>_<y>`.
    pub fn stem(&self) -> String {
        format!(
            "{}__{}__{}_{}",
            self.patient_id, self.slide_id, self.x, self.y
        )
    }
}

/// Grid stride for a patch size and fractional overlap.
pub fn patch_stride(size: usize, overlap: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::InvalidInput(format!(
            "overlap {overlap} must lie in [0, 1)"
        )));
    }
    let stride = libm::round(size as f64 * (1.0 - overlap)) as usize;
    if size == 0 || stride == 0 {
        return Err(Error::InvalidInput(format!(
            "patch size {size} with overlap {overlap} gives a zero stride"
        )));
    }
    Ok(stride)
}

/// Row-major patch origins: `floor((dim - size) / stride) + 1` per axis.
pub fn patch_grid(
    width: usize,
    height: usize,
    size: usize,
    overlap: f64,
) -> Result<Vec<(usize, usize)>> {
    let stride = patch_stride(size, overlap)?;
    if width < size || height < size {
        return Err(Error::InvalidInput(format!(
            "source {width}x{height} is smaller than patch size {size}"
        )));
    }
    let nx = (width - size) / stride + 1;
    let ny = (height - size) / stride + 1;
    Ok((0..ny)
        .flat_map(|j| (0..nx).map(move |i| (i * stride, j * stride)))
        .collect())
}

/// Crops every grid patch out of an image and its paired mask.
pub fn extract_patches(
    image: &Image,
    mask: &LabelMask,
    size: usize,
    overlap: f64,
) -> Result<Vec<(usize, usize, Image, LabelMask)>> {
    if (image.width(), image.height()) != (mask.width(), mask.height()) {
        return Err(Error::ShapeMismatch {
            op: "extract_patches",
            left: alloc::vec![image.height(), image.width()],
            right: alloc::vec![mask.height(), mask.width()],
        });
    }
    patch_grid(image.width(), image.height(), size, overlap)?
        .into_iter()
        .map(|(x, y)| {
            Ok((
                x,
                y,
                image.crop(x, y, size, size)?,
                mask.crop(x, y, size, size)?,
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_counts() {
        assert_eq!(patch_grid(4096, 4096, 1024, 0.5).unwrap().len(), 49);
        assert_eq!(
            patch_grid(1024, 1024, 1024, 0.5).unwrap(),
            alloc::vec![(0, 0)]
        );
        assert_eq!(patch_grid(1600, 1024, 1024, 0.5).unwrap().len(), 2);
        assert!(patch_grid(1000, 2000, 1024, 0.5).is_err());
        assert!(patch_grid(2048, 2048, 1024, 1.0).is_err());
    }

    #[test]
    fn crops_are_paired() {
        let image = Image::from_fn(1, 6, 6, |_, x, y| (y * 6 + x) as f32);
        let mask = LabelMask::from_fn(6, 6, |x, y| ((x + y) % 2) as u8);
        let patches = extract_patches(&image, &mask, 4, 0.5).unwrap();
        assert_eq!(patches.len(), 4);
        let (x, y, img, m) = &patches[3];
        assert_eq!((*x, *y), (2, 2));
        assert_eq!(img.get(0, 0, 0), 14.0);
        assert_eq!(m.get(1, 0), mask.get(3, 2));
        let bad = LabelMask::filled(5, 6, 0);
        assert!(extract_patches(&image, &bad, 4, 0.5).is_err());
    }
}
