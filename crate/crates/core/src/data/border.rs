use alloc::vec;
use alloc::vec::Vec;

use super::mask::{BORDER, GLAND};
use super::LabelMask;
use crate::error::{Error, Result};

/// Sliding max (`dilate`) or min (erode) over a square window of the given
/// radius. Pixels outside the raster are ignored, so glands touching the
/// image edge are not eroded from outside.
fn square_filter(
    bits: &[bool],
    width: usize,
    height: usize,
    radius: usize,
    dilate: bool,
) -> Vec<bool> {
    let pass = |src: &[bool], horizontal: bool| {
        let mut out = vec![false; src.len()];
        for y in 0..height {
            for x in 0..width {
                let (pos, len) = if horizontal { (x, width) } else { (y, height) };
                let lo = pos.saturating_sub(radius);
                let hi = (pos + radius).min(len - 1);
                let mut window = (lo..=hi).map(|p| {
                    if horizontal {
                        src[y * width + p]
                    } else {
                        src[p * width + x]
                    }
                });
                out[y * width + x] = if dilate {
                    window.any(|b| b)
                } else {
                    window.all(|b| b)
                };
            }
        }
        out
    };
    let rows = pass(bits, true);
    pass(&rows, false)
}

/// Relabels the morphological gradient band of the gland set (dilation minus
/// erosion by a square structuring element of `radius`) as the border class.
pub fn add_border_class(mask: &LabelMask, radius: usize) -> Result<LabelMask> {
    if radius == 0 {
        return Err(Error::InvalidInput(alloc::string::String::from(
            "border radius must be at least 1",
        )));
    }
    mask.check_labels(2)?;
    let (w, h) = (mask.width(), mask.height());
    let gland: Vec<bool> = mask.labels().iter().map(|&l| l == GLAND).collect();
    let dilated = square_filter(&gland, w, h, radius, true);
    let eroded = square_filter(&gland, w, h, radius, false);
    let labels = dilated
        .iter()
        .zip(&eroded)
        .map(|(&d, &e)| match (d, e) {
            (_, true) => GLAND,
            (true, false) => BORDER,
            (false, false) => 0,
        })
        .collect();
    LabelMask::new(w, h, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::collections::BTreeSet;

    type Set = BTreeSet<(isize, isize)>;

    fn neighbourhood(p: (isize, isize), r: isize, w: isize, h: isize) -> Vec<(isize, isize)> {
        let mut out = Vec::new();
        for dy in -r..=r {
            for dx in -r..=r {
                let q = (p.0 + dx, p.1 + dy);
                if q.0 >= 0 && q.1 >= 0 && q.0 < w && q.1 < h {
                    out.push(q);
                }
            }
        }
        out
    }

    /// Border band by explicit set algebra.
    fn oracle_band(mask: &LabelMask, r: usize) -> Set {
        let (w, h, r) = (mask.width() as isize, mask.height() as isize, r as isize);
        let all: Vec<(isize, isize)> = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).collect();
        let gland: Set = all
            .iter()
            .copied()
            .filter(|&(x, y)| mask.get(x as usize, y as usize) == 1)
            .collect();
        let dilation: Set = all
            .iter()
            .copied()
            .filter(|&p| neighbourhood(p, r, w, h).iter().any(|q| gland.contains(q)))
            .collect();
        let erosion: Set = gland
            .iter()
            .copied()
            .filter(|&p| neighbourhood(p, r, w, h).iter().all(|q| gland.contains(q)))
            .collect();
        dilation.difference(&erosion).copied().collect()
    }

    fn band_of(mask: &LabelMask) -> Set {
        let mut s = Set::new();
        for y in 0..mask.height() {
            for x in 0..mask.width() {
                if mask.get(x, y) == BORDER {
                    s.insert((x as isize, y as isize));
                }
            }
        }
        s
    }

    #[test]
    fn background_only_is_unchanged() {
        let m = LabelMask::filled(7, 5, 0);
        assert_eq!(add_border_class(&m, 1).unwrap(), m);
    }

    #[test]
    fn square_gland_gets_perimeter_ring() {
        let m = LabelMask::from_fn(9, 9, |x, y| {
            ((2..7).contains(&x) && (2..7).contains(&y)) as u8
        });
        let out = add_border_class(&m, 1).unwrap();
        // 3x3 interior survives erosion
        for y in 0..9 {
            for x in 0..9 {
                let inner = (3..6).contains(&x) && (3..6).contains(&y);
                let square = (2..7).contains(&x) && (2..7).contains(&y);
                let halo = (1..8).contains(&x) && (1..8).contains(&y);
                let want = if inner {
                    1
                } else if square || halo {
                    2
                } else {
                    0
                };
                assert_eq!(out.get(x, y), want, "pixel ({x},{y})");
            }
        }
        assert_eq!(band_of(&out), oracle_band(&m, 1));
    }

    #[test]
    fn matches_set_oracle_on_irregular_masks() {
        for seed in 0..20u64 {
            let m = LabelMask::from_fn(13, 11, |x, y| {
                let v = (x as u64 * 31 + y as u64 * 17 + seed * 13) ^ (seed * 7 + (x * y) as u64);
                (v % 5 < 2) as u8
            });
            for r in 1..=2 {
                let out = add_border_class(&m, r).unwrap();
                assert_eq!(band_of(&out), oracle_band(&m, r), "seed {seed} r {r}");
                assert!(out.label_set().iter().all(|&l| l <= 2));
            }
        }
    }

    #[test]
    fn merging_border_recovers_a_superset_within_one_dilation() {
        let m = LabelMask::from_fn(12, 12, |x, y| ((x + 2 * y) % 7 < 3 && x > 2) as u8);
        let out = add_border_class(&m, 1).unwrap();
        let merged = out.merge(BORDER, GLAND);
        let gland: Vec<bool> = m.labels().iter().map(|&l| l == 1).collect();
        let dilated = square_filter(&gland, 12, 12, 1, true);
        for i in 0..144 {
            let got = merged.labels()[i] == GLAND;
            assert!(!gland[i] || got);
            assert_eq!(got, dilated[i]);
        }
    }

    #[test]
    fn rejects_existing_border_labels() {
        let m = LabelMask::new(2, 1, vec![1, 2]).unwrap();
        assert!(add_border_class(&m, 1).is_err());
    }
}
