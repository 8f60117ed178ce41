use rand::Rng;

use super::{Image, LabelMask};

/// Ranges for the random paired augmentation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    /// Maximum translation per axis as a fraction of the side length.
    pub max_translation: f64,
    /// Rotation angle is drawn uniformly from `[0, rotation_degrees)`.
    pub rotation_degrees: f64,
    /// Probability of mirroring, drawn independently per axis.
    pub mirror_probability: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            max_translation: 0.125,
            rotation_degrees: 360.0,
            mirror_probability: 0.5,
        }
    }
}

impl AugmentParams {
    pub fn identity() -> Self {
        Self {
            max_translation: 0.0,
            rotation_degrees: 0.0,
            mirror_probability: 0.0,
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        let ok = (0.0..=1.0).contains(&self.max_translation)
            && (0.0..=1.0).contains(&self.mirror_probability)
            && (0.0..=360.0).contains(&self.rotation_degrees);
        if ok {
            Ok(())
        } else {
            Err(crate::Error::InvalidConfig(alloc::format!(
                "augmentation parameters out of range: {self:?}"
            )))
        }
    }
}

/// One sampled geometric transform, applied identically to image and mask.
///
/// Output pixel `p` reads the source at `M⁻¹ R(-θ) (p - c - t) + c`, where `c`
/// is the raster center, `t` the translation and `M` the mirroring.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Transform {
    pub dx: f64,
    pub dy: f64,
    pub angle_degrees: f64,
    pub mirror_x: bool,
    pub mirror_y: bool,
}

impl Transform {
    pub fn sample<R: Rng + ?Sized>(
        params: &AugmentParams,
        width: usize,
        height: usize,
        rng: &mut R,
    ) -> Self {
        let shift = |rng: &mut R, side: usize| {
            let max = params.max_translation * side as f64;
            if max > 0.0 {
                rng.gen_range(-max..=max)
            } else {
                0.0
            }
        };
        let dx = shift(rng, width);
        let dy = shift(rng, height);
        let angle_degrees = if params.rotation_degrees > 0.0 {
            rng.gen_range(0.0..params.rotation_degrees)
        } else {
            0.0
        };
        let mirror_x = rng.gen_bool(params.mirror_probability);
        let mirror_y = rng.gen_bool(params.mirror_probability);
        Self {
            dx,
            dy,
            angle_degrees,
            mirror_x,
            mirror_y,
        }
    }

    /// `(cos θ, sin θ)`, exact for multiples of 90°.
    fn rotation(&self) -> (f64, f64) {
        let a = rem_euclid(self.angle_degrees, 360.0);
        if a % 90.0 == 0.0 {
            match (a / 90.0) as u32 {
                0 => (1.0, 0.0),
                1 => (0.0, 1.0),
                2 => (-1.0, 0.0),
                _ => (0.0, -1.0),
            }
        } else {
            let r = a.to_radians();
            (libm::cos(r), libm::sin(r))
        }
    }

    /// Source coordinates (before reflection) for output pixel `(x, y)`.
    pub fn source(&self, x: usize, y: usize, width: usize, height: usize) -> (f64, f64) {
        let cx = (width as f64 - 1.0) / 2.0;
        let cy = (height as f64 - 1.0) / 2.0;
        let (cos, sin) = self.rotation();
        let u = x as f64 - cx - self.dx;
        let v = y as f64 - cy - self.dy;
        let mut su = cos * u + sin * v;
        let mut sv = -sin * u + cos * v;
        if self.mirror_x {
            su = -su;
        }
        if self.mirror_y {
            sv = -sv;
        }
        (su + cx, sv + cy)
    }

    pub fn apply_image(&self, image: &Image) -> Image {
        let (w, h) = (image.width(), image.height());
        let mut out = Image::filled(image.channels(), w, h, 0.0);
        for y in 0..h {
            for x in 0..w {
                let (sx, sy) = self.source(x, y, w, h);
                let (sx, sy) = (reflect(sx, w), reflect(sy, h));
                let (x0, fx) = split(sx, w);
                let (y0, fy) = split(sy, h);
                for c in 0..image.channels() {
                    let v = bilinear(image, c, x0, y0, fx, fy);
                    out.set(c, x, y, v);
                }
            }
        }
        out
    }

    pub fn apply_mask(&self, mask: &LabelMask) -> LabelMask {
        let (w, h) = (mask.width(), mask.height());
        LabelMask::from_fn(w, h, |x, y| {
            let (sx, sy) = self.source(x, y, w, h);
            let nx = (libm::floor(reflect(sx, w) + 0.5) as usize).min(w - 1);
            let ny = (libm::floor(reflect(sy, h) + 0.5) as usize).min(h - 1);
            mask.get(nx, ny)
        })
    }
}

/// Mirror-reflects a continuous coordinate into `[0, len - 1]`.
fn reflect(u: f64, len: usize) -> f64 {
    if len == 1 {
        return 0.0;
    }
    let last = (len - 1) as f64;
    if (0.0..=last).contains(&u) {
        return u;
    }
    let period = 2.0 * last;
    let m = rem_euclid(u, period);
    if m > last {
        period - m
    } else {
        m
    }
}

fn rem_euclid(x: f64, m: f64) -> f64 {
    let r = libm::fmod(x, m);
    if r < 0.0 {
        r + m
    } else {
        r
    }
}

fn split(s: f64, len: usize) -> (usize, f32) {
    let i = (libm::floor(s) as usize).min(len - 1);
    (i, (s - i as f64) as f32)
}

fn bilinear(image: &Image, c: usize, x0: usize, y0: usize, fx: f32, fy: f32) -> f32 {
    let x1 = (x0 + 1).min(image.width() - 1);
    let y1 = (y0 + 1).min(image.height() - 1);
    let row = |y: usize| {
        if fx == 0.0 {
            image.get(c, x0, y)
        } else {
            image.get(c, x0, y) * (1.0 - fx) + image.get(c, x1, y) * fx
        }
    };
    if fy == 0.0 {
        row(y0)
    } else {
        row(y0) * (1.0 - fy) + row(y1) * fy
    }
}

/// Samples one transform and applies it to both rasters.
pub fn augment<R: Rng + ?Sized>(
    image: &Image,
    mask: &LabelMask,
    params: &AugmentParams,
    rng: &mut R,
) -> (Image, LabelMask) {
    let t = Transform::sample(params, image.width(), image.height(), rng);
    (t.apply_image(image), t.apply_mask(mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pattern() -> (Image, LabelMask) {
        let labels: Vec<u8> = vec![1, 1, 1, 0, 1, 0, 0, 0, 0, 0, 0, 2, 0, 0, 2, 2];
        let mask = LabelMask::new(4, 4, labels).unwrap();
        let image = Image::from_fn(2, 4, 4, |c, x, y| (c * 16 + y * 4 + x) as f32 / 32.0);
        (image, mask)
    }

    #[test]
    fn identity_params_are_bit_exact() {
        let (image, mask) = pattern();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (i2, m2) = augment(&image, &mask, &AugmentParams::identity(), &mut rng);
        assert_eq!(i2, image);
        assert_eq!(m2, mask);
    }

    #[test]
    fn mirror_is_an_involution() {
        let (image, mask) = pattern();
        let t = Transform {
            mirror_x: true,
            mirror_y: true,
            ..Default::default()
        };
        assert_eq!(t.apply_image(&t.apply_image(&image)), image);
        assert_eq!(t.apply_mask(&t.apply_mask(&mask)), mask);
        assert_ne!(t.apply_mask(&mask), mask);
    }

    #[test]
    fn quarter_turn_matches_hand_rotated_grid() {
        let (image, mask) = pattern();
        let t = Transform {
            angle_degrees: 90.0,
            ..Default::default()
        };
        // out(x, y) = in(y, 3 - x)
        #[rustfmt::skip]
        let want = vec![
            0, 0, 1, 1,
            0, 0, 0, 1,
            2, 0, 0, 1,
            2, 2, 0, 0,
        ];
        assert_eq!(t.apply_mask(&mask).labels(), want.as_slice());
        let rotated = t.apply_image(&image);
        for c in 0..2 {
            for y in 0..4 {
                for x in 0..4 {
                    assert_eq!(rotated.get(c, x, y), image.get(c, y, 3 - x));
                }
            }
        }
    }

    #[test]
    fn reflection_stays_in_range() {
        for &u in &[-7.3, -1.0, -0.2, 0.0, 3.0, 3.5, 9.9, 100.25] {
            let r = reflect(u, 4);
            assert!((0.0..=3.0).contains(&r), "{u} -> {r}");
        }
        assert_eq!(reflect(-1.0, 4), 1.0);
        assert_eq!(reflect(4.0, 4), 2.0);
    }

    #[test]
    fn random_transforms_preserve_label_set() {
        let (image, mask) = pattern();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let (_, m) = augment(&image, &mask, &AugmentParams::default(), &mut rng);
            assert!(m.label_set().iter().all(|l| mask.label_set().contains(l)));
        }
    }
}
