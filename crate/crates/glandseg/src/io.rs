//! PNG rasters: RGB images normalised to `[0, 1]` and single-channel masks
//! whose pixel values are class indices.

use std::fs;
use std::path::Path;

use glandseg_core::data::{Image, LabelMask};
use glandseg_core::UNetModel;
use image::{DynamicImage, GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};

/// Reads a raster as `channels` planes (1 = luma, 3 = RGB), dividing by the
/// largest value of the stored sample type.
pub fn read_image(path: &Path, channels: usize) -> Result<Image> {
    let img = image::open(path).map_err(Error::image(path))?;
    from_dynamic(&img, channels).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn from_dynamic(img: &DynamicImage, channels: usize) -> Result<Image> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    match channels {
        1 => {
            let luma = img.to_luma32f();
            Ok(Image::new(1, w, h, luma.into_raw())?)
        }
        3 => {
            let rgb = img.to_rgb32f();
            let mut data = vec![0.0f32; 3 * w * h];
            for (i, px) in rgb.pixels().enumerate() {
                for c in 0..3 {
                    data[c * w * h + i] = px[c];
                }
            }
            Ok(Image::new(3, w, h, data)?)
        }
        n => Err(Error::Config(format!(
            "images can be read with 1 or 3 channels, not {n}"
        ))),
    }
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a 1- or 3-channel image as an 8-bit PNG.
pub fn write_image(path: &Path, image: &Image) -> Result<()> {
    let (w, h) = (image.width() as u32, image.height() as u32);
    let result = match image.channels() {
        1 => GrayImage::from_fn(w, h, |x, y| {
            Luma([to_u8(image.get(0, x as usize, y as usize))])
        })
        .save(path),
        3 => RgbImage::from_fn(w, h, |x, y| {
            let (x, y) = (x as usize, y as usize);
            Rgb([0, 1, 2].map(|c| to_u8(image.get(c, x, y))))
        })
        .save(path),
        n => {
            return Err(Error::Config(format!(
                "only 1- or 3-channel images can be written, not {n}"
            )))
        }
    };
    result.map_err(Error::image(path))
}

/// Reads a single-channel mask; pixel values are taken as class indices.
pub fn read_mask(path: &Path) -> Result<LabelMask> {
    let img = image::open(path).map_err(Error::image(path))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let labels = match img {
        DynamicImage::ImageLuma8(buf) => buf.into_raw(),
        DynamicImage::ImageLuma16(buf) => buf
            .into_raw()
            .into_iter()
            .map(|v| {
                u8::try_from(v).map_err(|_| {
                    Error::Dataset(format!("{}: class index {v} exceeds 255", path.display()))
                })
            })
            .collect::<Result<_>>()?,
        other => {
            return Err(Error::Dataset(format!(
                "{}: masks must be single-channel, found {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    Ok(LabelMask::new(w, h, labels)?)
}

pub fn write_mask(path: &Path, mask: &LabelMask) -> Result<()> {
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(
        mask.width() as u32,
        mask.height() as u32,
        mask.labels().to_vec(),
    )
    .expect("mask buffer matches its dimensions");
    buf.save(path).map_err(Error::image(path))
}

/// Creates the parent directory of `path` if needed.
pub fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(Error::io(dir)),
        _ => Ok(()),
    }
}

pub fn save_checkpoint(path: &Path, model: &UNetModel<f32>) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, glandseg_core::checkpoint::encode(model)).map_err(Error::io(path))
}

pub fn load_checkpoint(path: &Path) -> Result<UNetModel<f32>> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    glandseg_core::checkpoint::decode(&bytes).map_err(|e| match e {
        glandseg_core::Error::Checkpoint(msg) => {
            glandseg_core::Error::Checkpoint(format!("{}: {msg}", path.display())).into()
        }
        other => other.into(),
    })
}
