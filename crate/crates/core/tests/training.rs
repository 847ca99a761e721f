use htp_core::geometry::make_samples;
use htp_core::model::{train, Adam};
use htp_core::synth::{generate_synthetic, MotionKind, MotionMix, SynthConfig};
use htp_core::{EgoSample, ModelConfig, ModelParams, TrainConfig};

fn cv_samples(n_tracks: usize, seed: u64) -> Vec<EgoSample> {
    let cfg = SynthConfig {
        n_tracks,
        duration_s: 8.0,
        rate_hz: 2.5,
        mix: MotionMix::only(MotionKind::ConstantVelocity),
        seed,
        ..Default::default()
    };
    generate_synthetic(&cfg)
        .unwrap()
        .iter()
        .flat_map(|t| make_samples(t, 6, 12, 100))
        .collect()
}

fn small_model(seed: u64) -> ModelParams {
    let cfg = ModelConfig {
        hidden_dim: 32,
        num_layers: 2,
        num_components: 3,
        num_horizons: 12,
        dt: 0.4,
        ..Default::default()
    };
    ModelParams::init(cfg, seed).unwrap()
}

#[test]
fn small_adam_step_does_not_increase_loss() {
    let data = cv_samples(16, 3);
    for seed in 0..5 {
        let mut params = small_model(seed);
        let (before, grad) = params.loss_and_grad(&data).unwrap();
        let mut adam = Adam::new(params.num_params());
        adam.update(params.values_mut(), &grad, 1e-5);
        let after = params.loss(&data).unwrap();
        assert!(after <= before, "seed {seed}: {before} -> {after}");
    }
}

#[test]
fn training_halves_loss_on_constant_velocity() {
    let data = cv_samples(200, 1);
    assert_eq!(data.len(), 200);
    let cfg = TrainConfig {
        epochs: 200,
        batch_size: 32,
        seed: 7,
        ..Default::default()
    };
    let out = train(small_model(7), &data, &cfg, &[], |_| {}).unwrap();
    let first = out.history[0].train_loss;
    let last = out.history.last().unwrap().train_loss;
    assert!(last <= 0.5 * first, "{first} -> {last}");
}

#[test]
fn same_seed_same_history() {
    let data = cv_samples(40, 2);
    let cfg = TrainConfig {
        epochs: 5,
        batch_size: 16,
        seed: 3,
        input_lengths: vec![3, 6],
        ..Default::default()
    };
    let a = train(small_model(1), &data, &cfg, &data[..8], |_| {}).unwrap();
    let b = train(small_model(1), &data, &cfg, &data[..8], |_| {}).unwrap();
    assert_eq!(a.history, b.history);
    assert!(a
        .params
        .values()
        .iter()
        .zip(b.params.values())
        .all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn variable_length_forward_is_valid() {
    let params = small_model(2);
    let data = cv_samples(4, 5);
    for len in [2, 3, 6] {
        let f = params.forward(&data[0].truncate_input(len).input).unwrap();
        assert_eq!(f.num_horizons(), 12);
        for comps in &f.horizons {
            let w: f64 = comps.iter().map(|c| c.weight).sum();
            assert!((w - 1.0).abs() < 1e-12);
            assert!(comps
                .iter()
                .all(|c| c.std[0] > 0.0 && c.std[1] > 0.0 && c.corr.abs() < 1.0));
        }
    }
}

#[test]
fn divergence_returns_last_good_params() {
    let data = cv_samples(8, 4);
    let mut params = small_model(3);
    params.values_mut()[0] = f64::NAN;
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 8,
        ..Default::default()
    };
    let err = train(params, &data, &cfg, &[], |_| {}).unwrap_err();
    assert_eq!(err.epoch, 0);
    assert!(matches!(
        err.error,
        htp_core::Error::NumericalDivergence { .. }
    ));
}
