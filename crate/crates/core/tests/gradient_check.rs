use htp_core::mdn::ActivationConfig;
use htp_core::rng;
use htp_core::{AnchorPose, EgoSample, ModelConfig, ModelParams};
use rand::Rng;

fn tiny_config(sigma_offset: f64) -> ModelConfig {
    ModelConfig {
        hidden_dim: 8,
        num_layers: 2,
        num_components: 2,
        num_horizons: 3,
        activation: ActivationConfig {
            sigma_offset,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn random_batch(seed: u64, n: usize, len: usize, m: usize) -> Vec<EgoSample> {
    let mut r = rng::stream(seed, "grad-batch", 0);
    (0..n)
        .map(|i| EgoSample {
            track_id: format!("s{i}"),
            anchor: AnchorPose::identity(),
            dt: 0.1,
            input: (0..len)
                .map(|_| [0.0; 4].map(|_: f64| r.gen_range(-1.5..1.5)))
                .collect(),
            future_gt: (0..m)
                .map(|_| [r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0)])
                .collect(),
        })
        .collect()
}

/// Central differences with step 1e-5 on every parameter, compared per tensor
/// by `|g - g_fd| / max(|g| + |g_fd|, 1e-8)` over the tensor's vector.
fn check(params: &ModelParams, batch: &[EgoSample]) {
    let (_, analytic) = params.loss_and_grad(batch).unwrap();
    let step = 1e-5;
    let mut probe = params.clone();
    let mut numeric = vec![0.0; params.num_params()];
    for (i, slot) in numeric.iter_mut().enumerate() {
        let v = params.values()[i];
        probe.values_mut()[i] = v + step;
        let up = probe.loss(batch).unwrap();
        probe.values_mut()[i] = v - step;
        let down = probe.loss(batch).unwrap();
        probe.values_mut()[i] = v;
        *slot = (up - down) / (2.0 * step);
    }
    for t in params.layout().tensors() {
        let a = &analytic[t.range()];
        let n = &numeric[t.range()];
        let diff = a
            .iter()
            .zip(n)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt()
            + n.iter().map(|x| x * x).sum::<f64>().sqrt();
        let rel = diff / scale.max(1e-8);
        assert!(rel < 1e-4, "{}: relative error {rel:e}", t.name);
    }
}

#[test]
fn analytic_gradient_matches_finite_differences() {
    for seed in [1, 2, 3] {
        let params = ModelParams::init(tiny_config(1.0), seed).unwrap();
        check(&params, &random_batch(seed, 4, 6, 3));
    }
}

#[test]
fn gradient_check_without_sigma_offset() {
    let params = ModelParams::init(tiny_config(0.0), 11).unwrap();
    check(&params, &random_batch(11, 4, 5, 3));
}

#[test]
fn mixed_lengths_gradient() {
    let params = ModelParams::init(tiny_config(0.0), 5).unwrap();
    let mut batch = random_batch(5, 2, 7, 3);
    batch.extend(random_batch(6, 2, 3, 3));
    check(&params, &batch);
}

#[test]
fn duplicated_sample_keeps_gradient() {
    let params = ModelParams::init(tiny_config(1.0), 4).unwrap();
    let one = random_batch(4, 1, 6, 3);
    let two = vec![one[0].clone(), one[0].clone()];
    let (l1, g1) = params.loss_and_grad(&one).unwrap();
    let (l2, g2) = params.loss_and_grad(&two).unwrap();
    assert!((l1 - l2).abs() <= 1e-12 * l1.abs().max(1.0));
    for (a, b) in g1.iter().zip(&g2) {
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }
}

#[test]
fn zero_perturbation_keeps_loss() {
    let params = ModelParams::init(tiny_config(1.0), 9).unwrap();
    let batch = random_batch(9, 4, 6, 3);
    let mut same = params.clone();
    for v in same.values_mut() {
        *v += 0.0;
    }
    assert_eq!(
        params.loss(&batch).unwrap().to_bits(),
        same.loss(&batch).unwrap().to_bits()
    );
}
