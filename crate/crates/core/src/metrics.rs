//! Reliability calibration, reliability scores and best-of-K displacement errors.

use std::io::Write;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::EgoSample;
use crate::mdn::{self, GaussComponent, MixtureForecast};
use crate::rng;
use crate::uncertainty;

/// Pairs required before a calibration curve means anything.
pub const MIN_PAIRS: usize = 30;

/// The confidence levels `1 - alpha` for `alpha` in `{0.01, 0.02, ..., 0.99}`.
pub fn level_grid() -> Vec<f64> {
    (1..=99).map(|k| k as f64 / 100.0).collect()
}

/// Observed frequency `f_o(1 - alpha)` per horizon on a grid of levels.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationCurve {
    pub dt: f64,
    /// Expected confidence levels `1 - alpha`, ascending.
    pub levels: Vec<f64>,
    /// `f_o[h][k]`: share of ground-truth points at horizon `h` whose
    /// estimated confidence level is at most `levels[k]`.
    pub f_o: Vec<Vec<f64>>,
    /// Pairs that entered each horizon.
    pub counts: Vec<usize>,
}

impl CalibrationCurve {
    /// Builds the curve from per-horizon confidence levels of the ground truth.
    pub fn from_confidence_levels(dt: f64, levels: Vec<f64>, cls: &[Vec<f64>]) -> Self {
        let f_o = cls
            .iter()
            .map(|per_h| {
                let mut sorted = per_h.clone();
                sorted.sort_unstable_by(f64::total_cmp);
                levels
                    .iter()
                    .map(|&l| {
                        sorted.partition_point(|&c| c <= l) as f64 / sorted.len().max(1) as f64
                    })
                    .collect()
            })
            .collect();
        Self {
            dt,
            f_o,
            counts: cls.iter().map(Vec::len).collect(),
            levels,
        }
    }

    pub fn num_horizons(&self) -> usize {
        self.f_o.len()
    }

    pub fn horizon_s(&self, h: usize) -> f64 {
        (h + 1) as f64 * self.dt
    }

    /// Largest `|1 - alpha - f_o|` at horizon `h`.
    pub fn max_deviation(&self, h: usize) -> f64 {
        self.levels
            .iter()
            .zip(&self.f_o[h])
            .map(|(l, f)| (l - f).abs())
            .fold(0.0, f64::max)
    }

    /// Curve of all horizons pooled (equal pair counts make this the mean over horizons).
    pub fn pooled(&self) -> Vec<f64> {
        let total: usize = self.counts.iter().sum();
        (0..self.levels.len())
            .map(|k| {
                self.f_o
                    .iter()
                    .zip(&self.counts)
                    .map(|(f, &c)| f[k] * c as f64)
                    .sum::<f64>()
                    / total.max(1) as f64
            })
            .collect()
    }

    /// CSV rows `horizon_s,one_minus_alpha,f_o,count`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "horizon_s,one_minus_alpha,f_o,count")?;
        for (h, f) in self.f_o.iter().enumerate() {
            for (l, v) in self.levels.iter().zip(f) {
                writeln!(
                    w,
                    "{},{},{},{}",
                    round6(self.horizon_s(h)),
                    l,
                    v,
                    self.counts[h]
                )?;
            }
        }
        Ok(())
    }
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationOptions {
    pub n_samples: usize,
    pub seed: u64,
    pub levels: Vec<f64>,
    pub min_pairs: usize,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            n_samples: uncertainty::DEFAULT_SAMPLES,
            seed: 0,
            levels: level_grid(),
            min_pairs: MIN_PAIRS,
        }
    }
}

/// Confidence level of the ground truth for every pair and horizon,
/// `cls[h][pair]`. Pair `i` draws from its own `(seed, i)` substream.
pub fn ground_truth_levels(
    pairs: &[(&MixtureForecast, &[[f64; 2]])],
    n_samples: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let Some((first, _)) = pairs.first() else {
        return Err(Error::EmptyDataset);
    };
    let m = first.num_horizons();
    let mut cls = vec![Vec::with_capacity(pairs.len()); m];
    for (i, (forecast, gt)) in pairs.iter().enumerate() {
        if forecast.num_horizons() != m {
            return Err(Error::HorizonMismatch {
                expected: m,
                actual: forecast.num_horizons(),
            });
        }
        if gt.len() != m {
            return Err(Error::HorizonMismatch {
                expected: m,
                actual: gt.len(),
            });
        }
        let mut rng = rng::stream(seed, "calibration", i as u64);
        for (h, comps) in forecast.horizons.iter().enumerate() {
            cls[h].push(uncertainty::confidence_level_with(
                comps, gt[h], n_samples, &mut rng,
            )?);
        }
    }
    Ok(cls)
}

pub fn calibration_curve(
    pairs: &[(&MixtureForecast, &[[f64; 2]])],
    opts: &CalibrationOptions,
) -> Result<CalibrationCurve> {
    if pairs.len() < opts.min_pairs.max(1) {
        return Err(if pairs.is_empty() {
            Error::EmptyDataset
        } else {
            Error::InvalidConfig(format!(
                "calibration needs at least {} pairs, got {}",
                opts.min_pairs,
                pairs.len()
            ))
        });
    }
    let cls = ground_truth_levels(pairs, opts.n_samples, opts.seed)?;
    Ok(CalibrationCurve::from_confidence_levels(
        pairs[0].0.dt,
        opts.levels.clone(),
        &cls,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReliabilityScores {
    pub r_avg: f64,
    pub r_min: f64,
}

/// `r_min = 1 - max |1 - alpha - f_o|`, `r_avg = 1 - mean |1 - alpha - f_o|`,
/// both over every level and horizon.
pub fn reliability_scores(curve: &CalibrationCurve) -> ReliabilityScores {
    let mut max = 0.0f64;
    let mut sum = 0.0;
    let mut n = 0usize;
    for f in &curve.f_o {
        for (l, v) in curve.levels.iter().zip(f) {
            let d = (l - v).abs();
            max = max.max(d);
            sum += d;
            n += 1;
        }
    }
    ReliabilityScores {
        r_avg: (1.0 - sum / n.max(1) as f64).clamp(0.0, 1.0),
        r_min: (1.0 - max).clamp(0.0, 1.0),
    }
}

/// How hypotheses pick mixture components across horizons.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum HypothesisMode {
    /// Every horizon samples its mixture on its own.
    #[default]
    Independent,
    /// One uniform draw per hypothesis selects the component at every horizon
    /// (inverse CDF of each horizon's weights).
    SharedComponent,
}

fn component_at(components: &[GaussComponent], u: f64) -> &GaussComponent {
    let mut acc = 0.0;
    for c in components {
        acc += c.weight;
        if u < acc {
            return c;
        }
    }
    components
        .iter()
        .rev()
        .find(|c| c.weight > 0.0)
        .unwrap_or(&components[components.len() - 1])
}

/// `k` trajectory hypotheses. Hypotheses are drawn one after another from a
/// single `(seed)` stream, so the first `j` are shared by every `k >= j`.
pub fn sample_hypotheses(
    forecast: &MixtureForecast,
    k: usize,
    seed: u64,
    mode: HypothesisMode,
) -> Vec<Vec<[f64; 2]>> {
    let mut rng = rng::stream(seed, "hypotheses", 0);
    (0..k)
        .map(|_| match mode {
            HypothesisMode::Independent => forecast
                .horizons
                .iter()
                .map(|comps| mdn::sample_point(comps, &mut rng))
                .collect(),
            HypothesisMode::SharedComponent => {
                let u: f64 = rng.gen();
                forecast
                    .horizons
                    .iter()
                    .map(|comps| mdn::sample_component(component_at(comps, u), &mut rng))
                    .collect()
            }
        })
        .collect()
}

/// Mean per-horizon and final L2 distance between one trajectory and the truth.
pub fn ade_fde(trajectory: &[[f64; 2]], gt: &[[f64; 2]]) -> Result<(f64, f64)> {
    if trajectory.len() != gt.len() || gt.is_empty() {
        return Err(Error::HorizonMismatch {
            expected: gt.len(),
            actual: trajectory.len(),
        });
    }
    let d: Vec<f64> = trajectory
        .iter()
        .zip(gt)
        .map(|(p, g)| (p[0] - g[0]).hypot(p[1] - g[1]))
        .collect();
    Ok((d.iter().sum::<f64>() / d.len() as f64, d[d.len() - 1]))
}

/// Best-of-hypotheses ADE and FDE, each minimised separately.
pub fn min_ade_fde_of(hypotheses: &[Vec<[f64; 2]>], gt: &[[f64; 2]]) -> Result<(f64, f64)> {
    if hypotheses.is_empty() {
        return Err(Error::InvalidConfig("need at least one hypothesis".into()));
    }
    let mut best = (f64::INFINITY, f64::INFINITY);
    for h in hypotheses {
        let (a, f) = ade_fde(h, gt)?;
        best = (best.0.min(a), best.1.min(f));
    }
    Ok(best)
}

pub fn min_ade_fde(
    forecast: &MixtureForecast,
    gt: &[[f64; 2]],
    k: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    min_ade_fde_with(forecast, gt, k, seed, HypothesisMode::Independent)
}

pub fn min_ade_fde_with(
    forecast: &MixtureForecast,
    gt: &[[f64; 2]],
    k: usize,
    seed: u64,
    mode: HypothesisMode,
) -> Result<(f64, f64)> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    if gt.len() != forecast.num_horizons() {
        return Err(Error::HorizonMismatch {
            expected: forecast.num_horizons(),
            actual: gt.len(),
        });
    }
    min_ade_fde_of(&sample_hypotheses(forecast, k, seed, mode), gt)
}

/// Extrapolates the last input velocity over `m` horizons (ego frame).
pub fn constant_velocity_baseline(sample: &EgoSample, m: usize) -> Vec<[f64; 2]> {
    let last = sample.input[sample.input.len() - 1];
    (1..=m)
        .map(|h| {
            let t = h as f64 * sample.dt;
            [last[0] + last[2] * t, last[1] + last[3] * t]
        })
        .collect()
}

/// One row of the scores export.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreRow {
    pub r_avg: f64,
    pub r_min: f64,
    pub s68: f64,
    pub s95: f64,
    pub min_ade: f64,
    pub min_fde: f64,
    pub k: usize,
}

pub const SCORES_HEADER: &str = "r_avg,r_min,s68,s95,min_ade_k,min_fde_k,k";

impl ScoreRow {
    pub fn csv_fields(&self) -> String {
        format!(
            "{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
            self.r_avg, self.r_min, self.s68, self.s95, self.min_ade, self.min_fde, self.k
        )
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{SCORES_HEADER}")?;
        writeln!(w, "{}", self.csv_fields())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn forecast_of(horizons: Vec<Vec<GaussComponent>>) -> MixtureForecast {
        MixtureForecast { dt: 0.1, horizons }
    }

    fn varied_forecasts(n: usize, m: usize, seed: u64) -> Vec<MixtureForecast> {
        let mut r = rng::stream(seed, "test-forecasts", 0);
        (0..n)
            .map(|_| {
                forecast_of(
                    (0..m)
                        .map(|h| {
                            let w: f64 = r.gen_range(0.2..0.8);
                            vec![
                                GaussComponent {
                                    weight: w,
                                    mean: [0.3 * h as f64, 0.0],
                                    std: [r.gen_range(0.2..1.0), r.gen_range(0.2..1.0)],
                                    corr: r.gen_range(-0.8..0.8),
                                },
                                GaussComponent {
                                    weight: 1.0 - w,
                                    mean: [r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0)],
                                    std: [r.gen_range(0.2..1.0), r.gen_range(0.2..1.0)],
                                    corr: r.gen_range(-0.8..0.8),
                                },
                            ]
                        })
                        .collect(),
                )
            })
            .collect()
    }

    fn draw_truth(forecasts: &[MixtureForecast], seed: u64) -> Vec<Vec<[f64; 2]>> {
        let mut r = rng::stream(seed, "test-truth", 0);
        forecasts
            .iter()
            .map(|f| {
                f.horizons
                    .iter()
                    .map(|c| mdn::sample_point(c, &mut r))
                    .collect()
            })
            .collect()
    }

    fn pairs<'a>(
        f: &'a [MixtureForecast],
        gt: &'a [Vec<[f64; 2]>],
    ) -> Vec<(&'a MixtureForecast, &'a [[f64; 2]])> {
        f.iter().zip(gt).map(|(f, g)| (f, g.as_slice())).collect()
    }

    #[test]
    fn self_consistent_truth_is_calibrated() {
        let f = varied_forecasts(1000, 2, 1);
        let gt = draw_truth(&f, 2);
        let opts = CalibrationOptions {
            n_samples: 2000,
            seed: 3,
            ..Default::default()
        };
        let curve = calibration_curve(&pairs(&f, &gt), &opts).unwrap();
        let s = reliability_scores(&curve);
        assert!(s.r_avg >= 0.97, "{s:?}");
        assert!(s.r_min >= 0.93, "{s:?}");
        for (l, v) in curve.levels.iter().zip(curve.pooled()) {
            assert!((l - v).abs() <= 0.03, "{l}: {v}");
        }
    }

    #[test]
    fn inflated_sigma_is_underconfident() {
        let f = varied_forecasts(300, 1, 4);
        let gt = draw_truth(&f, 5);
        let wide: Vec<MixtureForecast> = f
            .iter()
            .map(|f| MixtureForecast {
                dt: f.dt,
                horizons: f
                    .horizons
                    .iter()
                    .map(|cs| {
                        cs.iter()
                            .map(|c| GaussComponent {
                                std: c.std.map(|s| 3.0 * s),
                                ..*c
                            })
                            .collect()
                    })
                    .collect(),
            })
            .collect();
        let opts = CalibrationOptions {
            n_samples: 1000,
            seed: 6,
            ..Default::default()
        };
        let curve = calibration_curve(&pairs(&wide, &gt), &opts).unwrap();
        let mid = curve
            .levels
            .iter()
            .position(|&l| (l - 0.5).abs() < 1e-9)
            .unwrap();
        assert!(curve.f_o[0][mid] > 0.6, "{}", curve.f_o[0][mid]);
    }

    #[test]
    fn truth_at_the_mode_gives_full_frequency() {
        let f = varied_forecasts(40, 3, 7);
        let gt = vec![vec![[0.0, 0.0]; 3]; f.len()];
        let peaked: Vec<MixtureForecast> = f
            .iter()
            .map(|f| MixtureForecast {
                dt: f.dt,
                horizons: f
                    .horizons
                    .iter()
                    .map(|_| vec![GaussComponent::isotropic([0.0, 0.0], 0.5)])
                    .collect(),
            })
            .collect();
        let opts = CalibrationOptions {
            n_samples: 1000,
            seed: 1,
            ..Default::default()
        };
        let curve = calibration_curve(&pairs(&peaked, &gt), &opts).unwrap();
        assert!(curve.f_o.iter().flatten().all(|&v| v >= 0.99));
    }

    #[test]
    fn calibration_errors() {
        let f = varied_forecasts(40, 3, 1);
        let gt = draw_truth(&f, 1);
        let opts = CalibrationOptions {
            n_samples: 200,
            ..Default::default()
        };
        assert!(matches!(
            calibration_curve(&[], &opts),
            Err(Error::EmptyDataset)
        ));
        assert!(calibration_curve(&pairs(&f[..10], &gt[..10]), &opts).is_err());
        let short: Vec<Vec<[f64; 2]>> = gt.iter().map(|g| g[..2].to_vec()).collect();
        assert!(matches!(
            calibration_curve(&pairs(&f, &short), &opts),
            Err(Error::HorizonMismatch {
                expected: 3,
                actual: 2
            })
        ));
    }

    #[test]
    fn score_examples() {
        let levels = level_grid();
        let diag = CalibrationCurve {
            dt: 0.1,
            f_o: vec![levels.clone(); 3],
            counts: vec![50; 3],
            levels: levels.clone(),
        };
        let s = reliability_scores(&diag);
        assert_eq!((s.r_avg, s.r_min), (1.0, 1.0));

        let shifted: Vec<f64> = levels.iter().map(|l| (l + 0.1).min(1.0)).collect();
        let curve = CalibrationCurve {
            dt: 0.1,
            f_o: vec![shifted],
            counts: vec![50],
            levels,
        };
        assert!((reliability_scores(&curve).r_min - 0.9).abs() < 1e-12);
    }

    #[test]
    fn published_score_pair_fixture() {
        // Monotone curve with a deviation bump peaking at 0.121 and mean
        // deviation 0.037 reproduces the reported (0.963, 0.879).
        let levels = level_grid();
        let tent: Vec<f64> = levels
            .iter()
            .map(|l| (1.0 - (l - 0.5).abs() / 0.2).max(0.0))
            .collect();
        let arch: Vec<f64> = levels.iter().map(|l| 4.0 * l * (1.0 - l)).collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        // Deviation c * arch + (0.121 - c) * tent: both peak at 0.5, mean fixed to 0.037.
        let c = (0.037 - 0.121 * mean(&tent)) / (mean(&arch) - mean(&tent));
        let f: Vec<f64> = levels
            .iter()
            .zip(tent.iter().zip(&arch))
            .map(|(l, (t, a))| l + c * a + (0.121 - c) * t)
            .collect();
        assert!(f.windows(2).all(|w| w[0] <= w[1]) && f.iter().all(|v| (0.0..=1.0).contains(v)));
        let curve = CalibrationCurve {
            dt: 0.1,
            f_o: vec![f],
            counts: vec![100],
            levels,
        };
        let s = reliability_scores(&curve);
        assert!(
            (s.r_avg - 0.963).abs() < 1e-12 && (s.r_min - 0.879).abs() < 1e-12,
            "{s:?}"
        );
        let row = ScoreRow {
            r_avg: s.r_avg,
            r_min: s.r_min,
            s68: 0.0,
            s95: 0.0,
            min_ade: 0.0,
            min_fde: 0.0,
            k: 20,
        };
        assert!(row.csv_fields().starts_with("0.963000,0.879000,"));
    }

    proptest! {
        #[test]
        fn curves_are_monotone_and_scores_bounded(cls in prop::collection::vec(prop::collection::vec(0.0..=1.0f64, 1..60), 1..4)) {
            let curve = CalibrationCurve::from_confidence_levels(0.1, level_grid(), &cls);
            for f in &curve.f_o {
                prop_assert!(f.windows(2).all(|w| w[0] <= w[1]));
                prop_assert!(f.iter().all(|v| (0.0..=1.0).contains(v)));
            }
            let s = reliability_scores(&curve);
            prop_assert!((0.0..=1.0).contains(&s.r_avg) && (0.0..=1.0).contains(&s.r_min));
        }

        #[test]
        fn min_ade_is_monotone_in_k(seed in any::<u64>(), k in 1usize..30) {
            let f = &varied_forecasts(1, 4, seed)[0];
            let gt = vec![[0.5, 0.2]; 4];
            let a = min_ade_fde(f, &gt, k, seed).unwrap();
            let b = min_ade_fde(f, &gt, k + 5, seed).unwrap();
            prop_assert!(b.0 <= a.0 && b.1 <= a.1);
        }
    }

    /// Mean of the minimum over 20 draws of `|z|`, `z ~ N(0, I_2)`, by brute force.
    fn min_of_20_radius_oracle(trials: usize) -> f64 {
        use rand::SeedableRng;
        let mut r = rand_chacha::ChaCha20Rng::seed_from_u64(99);
        let mut total = 0.0;
        for _ in 0..trials {
            let mut best = f64::INFINITY;
            for _ in 0..20 {
                // Box-Muller radius, kept separate from the library's sampler.
                let radius = (-2.0 * (1.0 - r.gen::<f64>()).ln()).sqrt();
                best = best.min(radius);
            }
            total += best;
        }
        total / trials as f64
    }

    #[test]
    fn degenerate_mixture_min_ade_oracle() {
        let oracle = min_of_20_radius_oracle(1_000_000);
        // The minimum of 20 unit Rayleigh radii is Rayleigh with scale 1/sqrt(20).
        const FROZEN: f64 = 0.280_249_7;
        assert!((oracle - FROZEN).abs() < 2e-3, "{oracle}");

        let sigma = mdn::ActivationConfig::default().sigma(f64::NEG_INFINITY);
        let f = forecast_of(vec![vec![GaussComponent::isotropic([1.0, 2.0], sigma)]]);
        let gt = [[1.0, 2.0]];
        let runs = 4000;
        let mut mean = 0.0;
        for s in 0..runs {
            let (ade, fde) = min_ade_fde(&f, &gt, 20, s).unwrap();
            assert_eq!(ade, fde);
            // 99.99% quantile of the minimum: exp(-10 r^2 / sigma^2) = 1e-4.
            assert!(ade <= sigma * (1e4f64.ln() / 10.0).sqrt());
            mean += ade / runs as f64;
        }
        let se = sigma * (0.4292 / 20.0f64).sqrt() / (runs as f64).sqrt();
        assert!((mean - FROZEN * sigma).abs() < 4.0 * se, "{mean}");
    }

    #[test]
    fn injected_truth_gives_zero_error() {
        let f = &varied_forecasts(1, 5, 3)[0];
        for mode in [HypothesisMode::Independent, HypothesisMode::SharedComponent] {
            let hyps = sample_hypotheses(f, 20, 8, mode);
            let gt = hyps[13].clone();
            assert_eq!(min_ade_fde_with(f, &gt, 20, 8, mode).unwrap(), (0.0, 0.0));
            let first = sample_hypotheses(f, 1, 8, mode);
            assert_eq!(first[0], hyps[0]);
        }
    }

    #[test]
    fn shared_component_mode_keeps_one_mode() {
        let left = GaussComponent {
            weight: 0.5,
            ..GaussComponent::isotropic([-5.0, 0.0], 0.1)
        };
        let right = GaussComponent {
            weight: 0.5,
            ..GaussComponent::isotropic([5.0, 0.0], 0.1)
        };
        let f = forecast_of(vec![vec![left, right]; 6]);
        for h in sample_hypotheses(&f, 50, 2, HypothesisMode::SharedComponent) {
            assert!(h.iter().all(|p| p[0].signum() == h[0][0].signum()));
        }
    }

    #[test]
    fn constant_velocity_baseline_extrapolates() {
        let sample = EgoSample {
            track_id: "a".into(),
            anchor: crate::geometry::AnchorPose::identity(),
            dt: 0.5,
            input: vec![[-1.0, 0.0, 2.0, 0.0], [0.0, 0.0, 2.0, 1.0]],
            future_gt: vec![],
        };
        assert_eq!(
            constant_velocity_baseline(&sample, 2),
            vec![[1.0, 0.5], [2.0, 1.0]]
        );
        assert_eq!(ade_fde(&[[3.0, 4.0]], &[[0.0, 0.0]]).unwrap(), (5.0, 5.0));
    }

    #[test]
    fn calibration_csv_shape() {
        let f = varied_forecasts(30, 2, 1);
        let gt = draw_truth(&f, 1);
        let opts = CalibrationOptions {
            n_samples: 200,
            ..Default::default()
        };
        let curve = calibration_curve(&pairs(&f, &gt), &opts).unwrap();
        let mut buf = Vec::new();
        curve.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 2 * 99);
        assert!(text.lines().nth(100).unwrap().starts_with("0.2,0.01,"));
    }
}
