use glandseg_core::checkpoint;
use glandseg_core::data::{synth_dataset, SynthConfig};
use glandseg_core::optim::NadamConfig;
use glandseg_core::train::{train_model, Sample, TrainConfig};
use glandseg_core::unet::build_unet;
use glandseg_core::{BlockKind, Error, UNetConfig};

fn samples(n: usize, side: usize) -> Vec<Sample> {
    synth_dataset(&SynthConfig {
        n_images: n,
        side,
        seed: 3,
        n_patients: 2,
    })
    .unwrap()
    .into_iter()
    .map(|s| Sample {
        id: s.record.stem(),
        image: s.image,
        mask: s.mask,
    })
    .collect()
}

fn tiny(kind: BlockKind) -> UNetConfig {
    UNetConfig {
        block_kind: kind,
        depth: 2,
        base_filters: 4,
        num_classes: 2,
        input_side: 32,
        input_channels: 3,
    }
}

fn config(lr: f64, epochs: usize) -> TrainConfig {
    TrainConfig {
        optimizer: NadamConfig::with_learning_rate(lr),
        epochs,
        batch_size: 3,
        seed: 11,
        augment: Some(Default::default()),
    }
}

#[test]
fn zero_learning_rate_leaves_parameters_untouched() {
    let data = samples(4, 32);
    let start = build_unet::<f32>(tiny(BlockKind::MultiRes), 1).unwrap();
    let mut model = start.clone();
    let history = train_model(&mut model, &data, &[], &config(0.0, 3), |_| {}).unwrap();
    assert_eq!(history.steps, 3 * 2);
    assert_eq!(checkpoint::encode(&model), checkpoint::encode(&start));
}

#[test]
fn training_replays_bit_identically() {
    let data = samples(5, 32);
    let run = || {
        let mut model = build_unet::<f32>(tiny(BlockKind::Residual), 2).unwrap();
        let history =
            train_model(&mut model, &data[..4], &data[4..], &config(1e-3, 2), |_| {}).unwrap();
        (checkpoint::encode(&model), history)
    };
    let (a, ha) = run();
    let (b, hb) = run();
    assert_eq!(a, b);
    assert_eq!(ha, hb);
    assert_eq!(ha.epochs.len(), 2);
    assert_eq!(ha.epochs[0].val_di.len(), 2);
}

#[test]
fn loss_decreases_on_a_small_set() {
    let data = samples(4, 32);
    let mut model = build_unet::<f32>(tiny(BlockKind::Basic), 0).unwrap();
    let mut cfg = config(5e-3, 15);
    cfg.augment = None;
    let history = train_model(&mut model, &data, &[], &cfg, |_| {}).unwrap();
    let first = history.epochs[0].train_loss;
    let last = history.epochs.last().unwrap().train_loss;
    assert!(last < first, "{first} -> {last}");
}

#[test]
fn invalid_inputs_are_rejected() {
    let data = samples(2, 32);
    let mut model = build_unet::<f32>(tiny(BlockKind::Basic), 0).unwrap();
    assert!(train_model(&mut model, &[], &[], &config(1e-3, 1), |_| {}).is_err());
    let mut cfg = config(1e-3, 1);
    cfg.batch_size = 0;
    assert!(train_model(&mut model, &data, &[], &cfg, |_| {}).is_err());
    let wrong = samples(1, 64);
    assert!(train_model(&mut model, &wrong, &[], &config(1e-3, 1), |_| {}).is_err());
}

#[test]
fn divergence_names_the_step() {
    let data = samples(2, 32);
    let mut model = build_unet::<f32>(tiny(BlockKind::Basic), 0).unwrap();
    let mut cfg = config(1e-3, 1);
    cfg.augment = None;
    model.params.head.bias.data_mut()[0] = f32::NAN;
    match train_model(&mut model, &data, &[], &cfg, |_| {}) {
        Err(Error::Diverged { epoch, step, .. }) => assert_eq!((epoch, step), (1, 1)),
        other => panic!("unexpected {other:?}"),
    }
}
