use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::{Image, LabelMask};
use crate::error::{Error, Result};

fn require_square(what: &str, width: usize, height: usize) -> Result<()> {
    if width != height || width == 0 {
        return Err(Error::InvalidInput(format!(
            "{what} must be square and non-empty, got {width}x{height}"
        )));
    }
    Ok(())
}

/// Source coordinate sampled by destination index `dst` (pixel centers).
fn source_coord(dst: usize, src_len: usize, dst_len: usize) -> f64 {
    (dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5
}

/// Bilinear resize of a square image to `side × side` (half-pixel centers,
/// edge clamping).
pub fn resize_image_bilinear(image: &Image, side: usize) -> Result<Image> {
    require_square("image", image.width(), image.height())?;
    if side == 0 {
        return Err(Error::InvalidInput(String::from(
            "target side must be positive",
        )));
    }
    let n = image.width();
    if n == side {
        return Ok(image.clone());
    }
    let taps: Vec<(usize, usize, f32)> = (0..side)
        .map(|d| {
            let s = source_coord(d, n, side).clamp(0.0, (n - 1) as f64);
            let lo = libm::floor(s) as usize;
            let hi = (lo + 1).min(n - 1);
            (lo, hi, (s - lo as f64) as f32)
        })
        .collect();
    Ok(Image::from_fn(image.channels(), side, side, |c, x, y| {
        let (y0, y1, fy) = taps[y];
        let (x0, x1, fx) = taps[x];
        let top = image.get(c, x0, y0) * (1.0 - fx) + image.get(c, x1, y0) * fx;
        let bottom = image.get(c, x0, y1) * (1.0 - fx) + image.get(c, x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }))
}

/// Nearest-neighbour resize of a square mask; never creates new labels.
pub fn resize_mask_nearest(mask: &LabelMask, side: usize) -> Result<LabelMask> {
    require_square("mask", mask.width(), mask.height())?;
    if side == 0 {
        return Err(Error::InvalidInput(String::from(
            "target side must be positive",
        )));
    }
    let n = mask.width();
    let idx: Vec<usize> = (0..side)
        .map(|d| ((2 * d + 1) * n / (2 * side)).min(n - 1))
        .collect();
    Ok(LabelMask::from_fn(side, side, |x, y| {
        mask.get(idx[x], idx[y])
    }))
}
