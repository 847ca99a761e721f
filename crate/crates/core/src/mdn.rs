//! Bivariate Gaussian mixture math for the mixture density head.
//!
//! Raw head outputs come in blocks of six per component and horizon, laid out
//! as `[mu_x, mu_y, o_sigma_x, o_sigma_y, o_rho, weight_logit]`. See
//! [`activate`] for how each block maps onto a [`GaussComponent`].

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::fastmath::exp;
use crate::rng;

/// Raw outputs per mixture component.
pub const PARAMS_PER_COMPONENT: usize = 6;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Constants of the sigma / rho output activations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActivationConfig {
    pub eps_sigma: f64,
    pub eps_rho: f64,
    /// Added to every standard deviation on top of `eps_sigma` (metres).
    pub sigma_offset: f64,
}

impl Default for ActivationConfig {
    fn default() -> Self {
        Self {
            eps_sigma: 1e-6,
            eps_rho: 0.999,
            sigma_offset: 1.0,
        }
    }
}

impl ActivationConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.eps_sigma.is_finite()
            && self.eps_sigma > 0.0
            && self.eps_rho > 0.0
            && self.eps_rho < 1.0
            && self.sigma_offset.is_finite()
            && self.sigma_offset >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "bad activation constants {self:?}"
            )))
        }
    }

    #[inline]
    pub fn sigma(&self, o: f64) -> f64 {
        o.exp() + self.sigma_offset + self.eps_sigma
    }

    #[inline]
    pub fn rho(&self, o: f64) -> f64 {
        o.tanh() * self.eps_rho
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussComponent {
    pub weight: f64,
    pub mean: [f64; 2],
    pub std: [f64; 2],
    pub corr: f64,
}

impl GaussComponent {
    pub fn isotropic(mean: [f64; 2], sigma: f64) -> Self {
        Self {
            weight: 1.0,
            mean,
            std: [sigma, sigma],
            corr: 0.0,
        }
    }

    fn check(&self) -> Result<()> {
        let valid = self.corr.abs() < 1.0 && self.std[0] > 0.0 && self.std[1] > 0.0;
        if !valid {
            return Err(Error::DegenerateCovariance { rho: self.corr });
        }
        Ok(())
    }

    /// Covariance `[[sxx, sxy], [sxy, syy]]`.
    pub fn covariance(&self) -> [[f64; 2]; 2] {
        let [sx, sy] = self.std;
        let c = self.corr * sx * sy;
        [[sx * sx, c], [c, sy * sy]]
    }
}

/// Per-horizon mixtures over the forecast steps.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureForecast {
    pub dt: f64,
    pub horizons: Vec<Vec<GaussComponent>>,
}

impl MixtureForecast {
    pub fn num_horizons(&self) -> usize {
        self.horizons.len()
    }

    pub fn num_components(&self) -> usize {
        self.horizons.first().map_or(0, Vec::len)
    }

    /// Forecast time of horizon index `h` (zero-based) in seconds.
    pub fn horizon_time(&self, h: usize) -> f64 {
        (h + 1) as f64 * self.dt
    }

    /// Weighted mean of every horizon mixture.
    pub fn mean_trajectory(&self) -> Vec<[f64; 2]> {
        self.horizons
            .iter()
            .map(|comps| {
                comps.iter().fold([0.0, 0.0], |acc, c| {
                    [acc[0] + c.weight * c.mean[0], acc[1] + c.weight * c.mean[1]]
                })
            })
            .collect()
    }
}

/// Applies the output activations to one horizon's `6 * M` raw values.
///
/// Means pass through, `sigma = exp(o) + sigma_offset + eps_sigma`,
/// `rho = tanh(o) * eps_rho`, weights are a max-shifted soft-max.
pub fn activate(raw: &[f64], cfg: &ActivationConfig) -> Result<Vec<GaussComponent>> {
    if raw.is_empty() || raw.len() % PARAMS_PER_COMPONENT != 0 {
        return Err(Error::ModelShape(format!(
            "raw horizon block of length {} is not a positive multiple of {PARAMS_PER_COMPONENT}",
            raw.len()
        )));
    }
    if let Some(index) = raw.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidLogits { index });
    }
    let blocks = raw.chunks_exact(PARAMS_PER_COMPONENT);
    let max_logit = blocks
        .clone()
        .map(|b| b[5])
        .fold(f64::NEG_INFINITY, f64::max);
    let unnorm: Vec<f64> = blocks.clone().map(|b| (b[5] - max_logit).exp()).collect();
    let total: f64 = unnorm.iter().sum();
    Ok(blocks
        .zip(unnorm)
        .map(|(b, w)| GaussComponent {
            weight: w / total,
            mean: [b[0], b[1]],
            std: [cfg.sigma(b[2]), cfg.sigma(b[3])],
            corr: cfg.rho(b[4]),
        })
        .collect())
}

/// Precomputed mixture for repeated density evaluation.
#[derive(Debug, Clone)]
pub struct MixtureDensity {
    terms: Vec<DensityTerm>,
}

#[derive(Debug, Clone)]
struct DensityTerm {
    mean: [f64; 2],
    inv_std: [f64; 2],
    corr: f64,
    /// `-1 / (2 (1 - rho^2))`
    quad_scale: f64,
    /// `ln c - ln(2 pi) - ln sx - ln sy - ln(1 - rho^2) / 2`
    log_norm: f64,
}

impl DensityTerm {
    #[inline]
    fn log_pdf(&self, p: [f64; 2]) -> f64 {
        let zx = (p[0] - self.mean[0]) * self.inv_std[0];
        let zy = (p[1] - self.mean[1]) * self.inv_std[1];
        self.log_norm + self.quad_scale * (zx * zx + zy * zy - 2.0 * self.corr * zx * zy)
    }
}

impl MixtureDensity {
    pub fn new(components: &[GaussComponent]) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::ModelShape("mixture without components".into()));
        }
        let terms = components
            .iter()
            .filter(|c| c.weight > 0.0)
            .map(|c| {
                c.check()?;
                let one_m_r2 = 1.0 - c.corr * c.corr;
                Ok(DensityTerm {
                    mean: c.mean,
                    inv_std: [1.0 / c.std[0], 1.0 / c.std[1]],
                    corr: c.corr,
                    quad_scale: -0.5 / one_m_r2,
                    log_norm: c.weight.ln()
                        - LN_2PI
                        - c.std[0].ln()
                        - c.std[1].ln()
                        - 0.5 * one_m_r2.ln(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if terms.is_empty() {
            return Err(Error::ModelShape("mixture weights are all zero".into()));
        }
        Ok(Self { terms })
    }

    /// Log density via log-sum-exp over components.
    pub fn log_density(&self, p: [f64; 2]) -> f64 {
        if let [t] = self.terms.as_slice() {
            return t.log_pdf(p);
        }
        let mut buf = [0.0f64; 16];
        let mut max = f64::NEG_INFINITY;
        let logs: &mut [f64] = if self.terms.len() <= buf.len() {
            &mut buf[..self.terms.len()]
        } else {
            return log_sum_exp(&self.terms.iter().map(|t| t.log_pdf(p)).collect::<Vec<_>>());
        };
        for (l, t) in logs.iter_mut().zip(&self.terms) {
            *l = t.log_pdf(p);
            max = max.max(*l);
        }
        if max == f64::NEG_INFINITY {
            return max;
        }
        max + logs.iter().map(|l| exp(l - max)).sum::<f64>().ln()
    }

    /// [`Self::log_density`] for every point, term by term so the loops vectorize.
    pub fn log_density_batch(&self, points: &[[f64; 2]], out: &mut [f64]) {
        assert_eq!(points.len(), out.len(), "one output per point");
        out.fill(f64::NEG_INFINITY);
        for t in &self.terms {
            out.iter_mut()
                .zip(points)
                .for_each(|(m, &p)| *m = m.max(t.log_pdf(p)));
        }
        let mut sum = vec![0.0; points.len()];
        for t in &self.terms {
            for ((s, &m), &p) in sum.iter_mut().zip(out.iter()).zip(points) {
                *s += exp(t.log_pdf(p) - m);
            }
        }
        for (m, s) in out.iter_mut().zip(&sum) {
            if *m != f64::NEG_INFINITY {
                *m += s.ln();
            }
        }
    }

    pub fn density(&self, p: [f64; 2]) -> f64 {
        self.terms.iter().map(|t| t.log_pdf(p).exp()).sum()
    }
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| exp(v - max)).sum::<f64>().ln()
}

/// Mixture density at `p` (1/m^2).
pub fn density(components: &[GaussComponent], p: [f64; 2]) -> Result<f64> {
    Ok(MixtureDensity::new(components)?.density(p))
}

/// Negative log-likelihood of `gt` summed over horizons (nats).
pub fn nll(forecast: &MixtureForecast, gt: &[[f64; 2]]) -> Result<f64> {
    if gt.len() != forecast.horizons.len() {
        return Err(Error::HorizonMismatch {
            expected: forecast.horizons.len(),
            actual: gt.len(),
        });
    }
    let mut total = 0.0;
    for (comps, &p) in forecast.horizons.iter().zip(gt) {
        total -= MixtureDensity::new(comps)?.log_density(p);
    }
    Ok(total)
}

/// NLL of one horizon straight from its raw outputs, accumulating
/// `scale * dNLL/draw` into `grad`.
pub fn horizon_nll_with_grad(
    raw: &[f64],
    gt: [f64; 2],
    cfg: &ActivationConfig,
    scale: f64,
    grad: &mut [f64],
) -> f64 {
    debug_assert_eq!(raw.len(), grad.len());
    let m = raw.len() / PARAMS_PER_COMPONENT;
    // Per component: log(c_k) + log N_k and the partials of log N_k.
    let mut log_joint = [0.0f64; 16];
    let mut partials = [[0.0f64; 5]; 16];
    assert!(
        m <= log_joint.len(),
        "at most 16 mixture components supported"
    );

    let max_logit = raw
        .chunks_exact(PARAMS_PER_COMPONENT)
        .map(|b| b[5])
        .fold(f64::NEG_INFINITY, f64::max);
    let log_z = max_logit
        + raw
            .chunks_exact(PARAMS_PER_COMPONENT)
            .map(|b| (b[5] - max_logit).exp())
            .sum::<f64>()
            .ln();

    for (k, b) in raw.chunks_exact(PARAMS_PER_COMPONENT).enumerate() {
        let ex = b[2].exp();
        let ey = b[3].exp();
        let sx = ex + cfg.sigma_offset + cfg.eps_sigma;
        let sy = ey + cfg.sigma_offset + cfg.eps_sigma;
        let th = b[4].tanh();
        let r = th * cfg.eps_rho;
        let omr = 1.0 - r * r;
        let zx = (gt[0] - b[0]) / sx;
        let zy = (gt[1] - b[1]) / sy;
        let q = zx * zx + zy * zy - 2.0 * r * zx * zy;
        let log_n = -LN_2PI - sx.ln() - sy.ln() - 0.5 * omr.ln() - 0.5 * q / omr;
        log_joint[k] = (b[5] - log_z) + log_n;

        let d_mux = (zx - r * zy) / (sx * omr);
        let d_muy = (zy - r * zx) / (sy * omr);
        let d_sx = -1.0 / sx + (zx * zx - r * zx * zy) / (sx * omr);
        let d_sy = -1.0 / sy + (zy * zy - r * zx * zy) / (sy * omr);
        let d_r = r / omr + zx * zy / omr - q * r / (omr * omr);
        partials[k] = [
            d_mux,
            d_muy,
            d_sx * ex,
            d_sy * ey,
            d_r * cfg.eps_rho * (1.0 - th * th),
        ];
    }

    let log_d = log_sum_exp(&log_joint[..m]);
    for (k, b) in raw.chunks_exact(PARAMS_PER_COMPONENT).enumerate() {
        let resp = (log_joint[k] - log_d).exp();
        let weight = (b[5] - log_z).exp();
        let g = &mut grad[k * PARAMS_PER_COMPONENT..(k + 1) * PARAMS_PER_COMPONENT];
        for (gi, pi) in g.iter_mut().zip(&partials[k]) {
            *gi -= scale * resp * pi;
        }
        g[5] += scale * (weight - resp);
    }
    -log_d
}

/// Draws one point from the mixture.
pub fn sample_point<R: Rng + ?Sized>(components: &[GaussComponent], rng: &mut R) -> [f64; 2] {
    let comp = pick_component(components, rng);
    sample_component(comp, rng)
}

pub fn pick_component<'a, R: Rng + ?Sized>(
    components: &'a [GaussComponent],
    rng: &mut R,
) -> &'a GaussComponent {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for c in components {
        acc += c.weight;
        if u < acc {
            return c;
        }
    }
    // Rounding left u above the cumulative sum; take the last weighted component.
    components
        .iter()
        .rev()
        .find(|c| c.weight > 0.0)
        .unwrap_or(&components[components.len() - 1])
}

/// Bivariate normal draw through the Cholesky factor of the component covariance.
#[inline]
pub fn sample_component<R: Rng + ?Sized>(c: &GaussComponent, rng: &mut R) -> [f64; 2] {
    let z1: f64 = rng.sample(StandardNormal);
    let z2: f64 = rng.sample(StandardNormal);
    let [sx, sy] = c.std;
    [
        c.mean[0] + sx * z1,
        c.mean[1] + sy * (c.corr * z1 + (1.0 - c.corr * c.corr).sqrt() * z2),
    ]
}

pub fn sample_with<R: Rng + ?Sized>(
    components: &[GaussComponent],
    n: usize,
    rng: &mut R,
) -> Vec<[f64; 2]> {
    (0..n).map(|_| sample_point(components, rng)).collect()
}

/// `n` seeded draws from the mixture.
pub fn sample(components: &[GaussComponent], n: usize, seed: u64) -> Vec<[f64; 2]> {
    sample_with(components, n, &mut rng::stream(seed, "mdn-sample", 0))
}
