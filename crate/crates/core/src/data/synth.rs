//! Synthetic "gland" rasters: dark-rimmed bright ellipses on a textured
//! pink background, with exact masks.

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::mask::GLAND;
use super::{Image, LabelMask, PatchRecord};

const BACKGROUND_RGB: [f32; 3] = [0.90, 0.68, 0.80];
const RIM_RGB: [f32; 3] = [0.42, 0.20, 0.55];
const LUMEN_RGB: [f32; 3] = [0.97, 0.95, 0.97];
/// Normalised radius where the dark rim starts.
const RIM_START: f64 = 0.65;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub n_images: usize,
    pub side: usize,
    pub seed: u64,
    /// Patient ids are assigned round-robin over this many patients.
    pub n_patients: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub semi_major: f64,
    pub semi_minor: f64,
    pub angle: f64,
}

impl Ellipse {
    /// Squared normalised radius of the pixel center `(x, y)`; `<= 1` inside.
    pub fn radius2(&self, x: usize, y: usize) -> f64 {
        let dx = x as f64 + 0.5 - self.cx;
        let dy = y as f64 + 0.5 - self.cy;
        let (s, c) = (libm::sin(self.angle), libm::cos(self.angle));
        let u = (dx * c + dy * s) / self.semi_major;
        let v = (-dx * s + dy * c) / self.semi_minor;
        u * u + v * v
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        self.radius2(x, y) <= 1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub image: Image,
    pub mask: LabelMask,
    pub record: PatchRecord,
    pub ellipses: Vec<Ellipse>,
}

/// Generates `n_images` square samples. Each image is drawn from its own
/// ChaCha stream, so the result is independent of generation order.
pub fn synth_dataset(config: &SynthConfig) -> crate::Result<Vec<SynthSample>> {
    if config.side < 32 {
        return Err(crate::Error::InvalidInput(format!(
            "synthetic side must be at least 32, got {}",
            config.side
        )));
    }
    if config.n_patients == 0 {
        return Err(crate::Error::InvalidInput(alloc::string::String::from(
            "n_patients must be positive",
        )));
    }
    Ok((0..config.n_images).map(|i| synth_one(config, i)).collect())
}

fn synth_one(config: &SynthConfig, index: usize) -> SynthSample {
    let side = config.side;
    let s = side as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64);

    let count = rng.gen_range(1..=5);
    let ellipses: Vec<Ellipse> = (0..count)
        .map(|_| {
            let semi_major = rng.gen_range(0.08 * s..0.2 * s);
            Ellipse {
                cx: rng.gen_range(0.15 * s..0.85 * s),
                cy: rng.gen_range(0.15 * s..0.85 * s),
                semi_major,
                semi_minor: semi_major * rng.gen_range(0.6..1.0),
                angle: rng.gen_range(0.0..core::f64::consts::PI),
            }
        })
        .collect();

    let freq_x = rng.gen_range(0.05..0.3);
    let freq_y = rng.gen_range(0.05..0.3);
    let phase = rng.gen_range(0.0..core::f64::consts::TAU);

    let mut image = Image::filled(3, side, side, 0.0);
    let mut mask = LabelMask::filled(side, side, 0);
    for y in 0..side {
        for x in 0..side {
            let texture =
                0.04 * libm::sin(freq_x * x as f64 + phase) * libm::cos(freq_y * y as f64 - phase);
            let mut rgb = BACKGROUND_RGB.map(|v| v + texture as f32);
            for e in &ellipses {
                let r2 = e.radius2(x, y);
                if r2 <= 1.0 {
                    rgb = if libm::sqrt(r2) >= RIM_START {
                        RIM_RGB
                    } else {
                        LUMEN_RGB
                    };
                    mask.set(x, y, GLAND);
                }
            }
            for (c, v) in rgb.iter().enumerate() {
                let noise: f32 = rng.gen_range(-0.03..0.03);
                image.set(c, x, y, (v + noise).clamp(0.0, 1.0));
            }
        }
    }

    let patient_id = format!("P{:03}", index % config.n_patients);
    let slide_id = format!("S{index:04}");
    let stem = format!("{patient_id}__{slide_id}__0_0");
    SynthSample {
        image,
        mask,
        record: PatchRecord {
            patient_id,
            slide_id,
            x: 0,
            y: 0,
            image_path: format!("images/{stem}.png"),
            mask_path: format!("masks/{stem}.png"),
        },
        ellipses,
    }
}
