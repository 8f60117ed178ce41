use std::collections::BTreeSet;

use glandseg_core::data::{
    add_border_class, augment, onehot_encode, patch_grid, resize_mask_nearest, AugmentParams,
    Image, LabelMask, PatchRecord,
};
use glandseg_core::folds::split_folds;
use glandseg_core::loss::{
    argmax_channels, dice_index, dice_index_smoothed, dice_loss_value, dice_similarity,
};
use glandseg_core::optim::{NadamConfig, NadamState};
use glandseg_core::Tensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn mask_strategy(max_label: u8, side: usize) -> impl Strategy<Value = LabelMask> {
    prop::collection::vec(0..=max_label, side * side)
        .prop_map(move |labels| LabelMask::new(side, side, labels).unwrap())
}

fn counting_di(a: &LabelMask, b: &LabelMask, c: u8) -> f64 {
    let pa = a.labels().iter().filter(|&&l| l == c).count() as f64;
    let pb = b.labels().iter().filter(|&&l| l == c).count() as f64;
    let both = a
        .labels()
        .iter()
        .zip(b.labels())
        .filter(|&(&x, &y)| x == c && y == c)
        .count() as f64;
    if pa + pb == 0.0 {
        1.0
    } else {
        2.0 * both / (pa + pb)
    }
}

fn square_dilate(set: &BTreeSet<(i64, i64)>, r: i64) -> BTreeSet<(i64, i64)> {
    let mut out = BTreeSet::new();
    for &(x, y) in set {
        for dy in -r..=r {
            for dx in -r..=r {
                out.insert((x + dx, y + dy));
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn loss_plus_mean_similarity_is_one(values in prop::collection::vec(0.0f64..1.0, 2 * 3 * 16), target in mask_strategy(2, 4)) {
        let yhat = Tensor::new([2, 3, 4, 4], values).unwrap();
        let y: Tensor<f64> = onehot_encode(&[target.clone(), target], 3).unwrap();
        let loss = dice_loss_value(&yhat, &y, 1e-7).unwrap();
        let sims = dice_similarity(&yhat, &y, 1e-7).unwrap();
        let mean = sims.iter().sum::<f64>() / 3.0;
        prop_assert_eq!(loss + mean, 1.0);
    }

    #[test]
    fn dice_index_is_symmetric(a in mask_strategy(2, 6), b in mask_strategy(2, 6)) {
        prop_assert_eq!(dice_index(&a, &b, 3).unwrap(), dice_index(&b, &a, 3).unwrap());
    }

    #[test]
    fn dice_index_matches_counting(a in mask_strategy(1, 8), b in mask_strategy(1, 8)) {
        let di = dice_index_smoothed(&a, &b, 2, 0.0).unwrap();
        for c in 0..2u8 {
            let want = counting_di(&a, &b, c);
            if !want.is_nan() && a.count(c) + b.count(c) > 0 {
                prop_assert!((di[c as usize] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hard_prediction_loss_matches_dice_index(a in mask_strategy(1, 6), b in mask_strategy(1, 6)) {
        let yhat: Tensor<f64> = onehot_encode(&[a.clone()], 2).unwrap();
        let y: Tensor<f64> = onehot_encode(&[b.clone()], 2).unwrap();
        let loss = dice_loss_value(&yhat, &y, 1e-7).unwrap();
        let di = dice_index(&a, &b, 2).unwrap();
        prop_assert!((1.0 - loss - (di[0] + di[1]) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn onehot_round_trips_through_argmax(m in mask_strategy(2, 5)) {
        let t: Tensor<f32> = onehot_encode(&[m.clone()], 3).unwrap();
        prop_assert_eq!(&argmax_channels(&t).unwrap()[0], &m);
        for c in 0..3u8 {
            let plane = &t.data()[c as usize * 25..(c as usize + 1) * 25];
            prop_assert_eq!(plane.iter().sum::<f32>() as usize, m.count(c));
        }
    }

    #[test]
    fn augmentation_preserves_label_sets(m in mask_strategy(2, 12), seed in any::<u64>()) {
        let image = Image::filled(3, 12, 12, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (_, out) = augment(&image, &m, &AugmentParams::default(), &mut rng);
        let before: BTreeSet<u8> = m.label_set().into_iter().collect();
        let after: BTreeSet<u8> = out.label_set().into_iter().collect();
        prop_assert!(after.is_subset(&before));
    }

    #[test]
    fn identity_augmentation_is_exact(m in mask_strategy(2, 7), seed in any::<u64>()) {
        let image = Image::from_fn(3, 7, 7, |c, x, y| (c * 49 + y * 7 + x) as f32 / 147.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (img, out) = augment(&image, &m, &AugmentParams::identity(), &mut rng);
        prop_assert_eq!(img, image);
        prop_assert_eq!(out, m);
    }

    #[test]
    fn nearest_resize_is_idempotent_at_equal_size(m in mask_strategy(2, 9)) {
        prop_assert_eq!(resize_mask_nearest(&m, 9).unwrap(), m);
    }

    #[test]
    fn border_band_is_dilation_minus_erosion(m in mask_strategy(1, 10), radius in 1usize..3) {
        let out = add_border_class(&m, radius).unwrap();
        let inside = |x: i64, y: i64| (0..10).contains(&x) && (0..10).contains(&y);
        let gland: BTreeSet<(i64, i64)> = (0..10)
            .flat_map(|y| (0..10).map(move |x| (x, y)))
            .filter(|&(x, y)| m.get(x as usize, y as usize) == 1)
            .collect();
        let background: BTreeSet<(i64, i64)> = (0..10)
            .flat_map(|y| (0..10).map(move |x| (x, y)))
            .filter(|p| !gland.contains(p))
            .collect();
        let dilation: BTreeSet<_> = square_dilate(&gland, radius as i64)
            .into_iter()
            .filter(|&(x, y)| inside(x, y))
            .collect();
        let erosion: BTreeSet<_> = gland
            .difference(&square_dilate(&background, radius as i64))
            .copied()
            .collect();
        for y in 0..10i64 {
            for x in 0..10i64 {
                let want = if erosion.contains(&(x, y)) {
                    1
                } else if dilation.contains(&(x, y)) {
                    2
                } else {
                    0
                };
                prop_assert_eq!(out.get(x as usize, y as usize), want, "({}, {})", x, y);
            }
        }
    }

    #[test]
    fn patch_grid_covers_with_constant_stride(w in 8usize..80, h in 8usize..80, size in 4usize..9) {
        let grid = patch_grid(w, h, size, 0.5).unwrap();
        let stride = (size as f64 * 0.5).round() as usize;
        for &(x, y) in &grid {
            prop_assert!(x + size <= w && y + size <= h);
            prop_assert_eq!(x % stride, 0);
            prop_assert_eq!(y % stride, 0);
        }
        let reach_x = (w - size) / stride * stride + size;
        let reach_y = (h - size) / stride * stride + size;
        for y in 0..reach_y {
            for x in 0..reach_x {
                prop_assert!(grid.iter().any(|&(px, py)| (px..px + size).contains(&x) && (py..py + size).contains(&y)));
            }
        }
    }

    #[test]
    fn folds_are_patient_disjoint_and_balanced(patients in 4usize..30, per in 1usize..4, seed in any::<u64>()) {
        let records: Vec<PatchRecord> = (0..patients * per)
            .map(|i| PatchRecord {
                patient_id: format!("P{:03}", i % patients),
                slide_id: String::from("S"),
                x: i,
                y: 0,
                image_path: String::new(),
                mask_path: String::new(),
            })
            .collect();
        let split = split_folds(&records, 4, seed).unwrap();
        let sizes = split.fold_sizes();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for fold in 0..4 {
            let train: BTreeSet<&str> = split.training_indices(&records, fold).iter().map(|&i| records[i].patient_id.as_str()).collect();
            let val: BTreeSet<&str> = split.validation_indices(&records, fold).iter().map(|&i| records[i].patient_id.as_str()).collect();
            prop_assert!(train.is_disjoint(&val));
            prop_assert_eq!(train.len() + val.len(), patients);
        }
    }

    #[test]
    fn nadam_first_step_is_scale_consistent(g in prop::collection::vec(-5.0f64..5.0, 6), c in 0.01f64..100.0) {
        let run = |scale: f64| {
            let config = NadamConfig { epsilon: 0.0, ..NadamConfig::with_learning_rate(0.01) };
            let mut p = Tensor::<f64>::zeros([6]);
            let mut state = NadamState::new(config, [&p]);
            let grad = Tensor::new([6], g.iter().map(|v| v * scale).collect()).unwrap();
            state.step(&mut [&mut p], &[grad]).unwrap();
            p
        };
        let (a, b) = (run(1.0), run(c));
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert_eq!(x.signum(), y.signum());
        }
    }

    #[test]
    fn nadam_state_round_trips(g in prop::collection::vec(-1.0f32..1.0, 5), steps in 1usize..4) {
        let mut p = Tensor::<f32>::zeros([5]);
        let mut state = NadamState::new(NadamConfig::default(), [&p]);
        let grad = Tensor::new([5], g).unwrap();
        for _ in 0..steps {
            state.step(&mut [&mut p], &[grad.clone()]).unwrap();
        }
        let bytes = state.to_bytes();
        let back = NadamState::<f32>::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
    }
}

#[test]
fn flipping_a_gland_pixel_never_raises_gland_di() {
    for bits in 0u32..512 {
        let reference = LabelMask::from_fn(3, 3, |x, y| ((bits >> (y * 3 + x)) & 1) as u8);
        for pred_bits in (0u32..512).step_by(7) {
            let pred = LabelMask::from_fn(3, 3, |x, y| ((pred_bits >> (y * 3 + x)) & 1) as u8);
            let before = dice_index(&pred, &reference, 2).unwrap()[1];
            for i in 0..9 {
                let (x, y) = (i % 3, i / 3);
                if pred.get(x, y) == 1 && reference.get(x, y) == 1 {
                    let mut flipped = pred.clone();
                    flipped.set(x, y, 0);
                    let after = dice_index(&flipped, &reference, 2).unwrap()[1];
                    assert!(after <= before + 1e-15, "{bits} {pred_bits} {i}");
                    let oracle = counting_di(&flipped, &reference, 1);
                    assert!((after - oracle).abs() < 1e-6);
                }
            }
        }
    }
}
