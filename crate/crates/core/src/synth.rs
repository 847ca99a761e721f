//! Synthetic pedestrian tracks.
//!
//! Four motion patterns: constant velocity, constant turn-rate arcs,
//! stop-and-go walking along a fixed heading, and smooth random curves whose
//! turn rate follows an Ornstein-Uhlenbeck process. Track ids carry the
//! pattern (`cv-00012`, `turn-00013`, ...) so evaluations can slice by it.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::{Track, TrackPoint};
use crate::rng::{self, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MotionKind {
    ConstantVelocity,
    Turn,
    StopGo,
    Curve,
}

impl MotionKind {
    pub const ALL: [MotionKind; 4] = [
        MotionKind::ConstantVelocity,
        MotionKind::Turn,
        MotionKind::StopGo,
        MotionKind::Curve,
    ];

    pub fn label(self) -> &'static str {
        match self {
            MotionKind::ConstantVelocity => "cv",
            MotionKind::Turn => "turn",
            MotionKind::StopGo => "stopgo",
            MotionKind::Curve => "curve",
        }
    }

    /// Recovers the pattern from a generated track id.
    pub fn from_track_id(id: &str) -> Option<Self> {
        let label = id.split('-').next()?;
        Self::ALL.into_iter().find(|k| k.label() == label)
    }
}

/// Relative frequency of each motion pattern.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionMix {
    pub constant_velocity: f64,
    pub turn: f64,
    pub stop_go: f64,
    pub curve: f64,
}

impl MotionMix {
    pub fn only(kind: MotionKind) -> Self {
        let mut mix = Self {
            constant_velocity: 0.0,
            turn: 0.0,
            stop_go: 0.0,
            curve: 0.0,
        };
        *mix.weight_mut(kind) = 1.0;
        mix
    }

    fn weight_mut(&mut self, kind: MotionKind) -> &mut f64 {
        match kind {
            MotionKind::ConstantVelocity => &mut self.constant_velocity,
            MotionKind::Turn => &mut self.turn,
            MotionKind::StopGo => &mut self.stop_go,
            MotionKind::Curve => &mut self.curve,
        }
    }

    fn weights(&self) -> [f64; 4] {
        [self.constant_velocity, self.turn, self.stop_go, self.curve]
    }
}

impl Default for MotionMix {
    fn default() -> Self {
        Self {
            constant_velocity: 0.4,
            turn: 0.3,
            stop_go: 0.3,
            curve: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_tracks: usize,
    pub duration_s: f64,
    pub rate_hz: f64,
    pub mix: MotionMix,
    /// Walking speed range (m/s).
    pub speed_range: (f64, f64),
    /// Turn-rate magnitude range (rad/s); the sign is drawn at random.
    pub turn_rate_range: (f64, f64),
    /// Standard deviation of i.i.d. position noise (m).
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_tracks: 1000,
            duration_s: 10.0,
            rate_hz: 10.0,
            mix: MotionMix::default(),
            speed_range: (0.8, 1.8),
            turn_rate_range: (0.15, 0.6),
            noise_sigma: 0.05,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let w = self.mix.weights();
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_owned()));
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0))
            || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return bad("motion mix weights must be non-negative and sum to 1");
        }
        let range_ok =
            |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo <= hi;
        if !range_ok(self.speed_range) || !range_ok(self.turn_rate_range) {
            return bad("speed and turn-rate ranges need 0 <= lo <= hi");
        }
        if !(self.rate_hz.is_finite() && self.rate_hz > 0.0) {
            return bad("rate_hz must be positive");
        }
        if !(self.duration_s.is_finite() && self.duration_s * self.rate_hz >= 1.0) {
            return bad("duration must cover at least one sample period");
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be non-negative");
        }
        Ok(())
    }
}

fn uniform(rng: &mut StreamRng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Sub-steps per sample for the integrated motion patterns.
const SUBSTEPS: usize = 10;

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Vec<Track>> {
    cfg.validate()?;
    let dt = 1.0 / cfg.rate_hz;
    let n_samples = (cfg.duration_s * cfg.rate_hz + 1e-6).floor() as usize + 1;
    let weights = cfg.mix.weights();
    (0..cfg.n_tracks)
        .map(|i| {
            let mut rng = rng::stream(cfg.seed, "synth", i as u64);
            let u: f64 = rng.gen::<f64>() * weights.iter().sum::<f64>();
            let mut acc = 0.0;
            let kind = MotionKind::ALL
                .into_iter()
                .zip(weights)
                .find(|(_, w)| {
                    acc += w;
                    *w > 0.0 && u < acc
                })
                .map_or_else(
                    || MotionKind::ALL[weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)],
                    |(k, _)| k,
                );
            let start = [rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0)];
            let heading = rng.gen_range(-PI..PI);
            let speed = uniform(&mut rng, cfg.speed_range);
            let clean = match kind {
                MotionKind::ConstantVelocity => {
                    constant_velocity(start, heading, speed, dt, n_samples)
                }
                MotionKind::Turn => {
                    let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                    let omega = sign * uniform(&mut rng, cfg.turn_rate_range);
                    arc(start, heading, speed, omega, dt, n_samples)
                }
                MotionKind::StopGo => stop_go(&mut rng, start, heading, speed, dt, n_samples),
                MotionKind::Curve => curve(
                    &mut rng,
                    start,
                    heading,
                    speed,
                    cfg.turn_rate_range.1,
                    dt,
                    n_samples,
                ),
            };
            let noise =
                Normal::new(0.0, cfg.noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
            let points = clean
                .into_iter()
                .enumerate()
                .map(|(k, [x, y])| {
                    let (nx, ny) = if cfg.noise_sigma > 0.0 {
                        (noise.sample(&mut rng), noise.sample(&mut rng))
                    } else {
                        (0.0, 0.0)
                    };
                    TrackPoint::new(k as f64 * dt, x + nx, y + ny)
                })
                .collect();
            Track::new(format!("{}-{i:05}", kind.label()), points)
        })
        .collect()
}

fn constant_velocity(
    start: [f64; 2],
    heading: f64,
    speed: f64,
    dt: f64,
    n: usize,
) -> Vec<[f64; 2]> {
    let (s, c) = heading.sin_cos();
    (0..n)
        .map(|k| {
            let t = k as f64 * dt;
            [start[0] + speed * c * t, start[1] + speed * s * t]
        })
        .collect()
}

/// Exact constant turn-rate motion.
fn arc(start: [f64; 2], heading: f64, speed: f64, omega: f64, dt: f64, n: usize) -> Vec<[f64; 2]> {
    if omega.abs() < 1e-12 {
        return constant_velocity(start, heading, speed, dt, n);
    }
    let r = speed / omega;
    (0..n)
        .map(|k| {
            let th = heading + omega * k as f64 * dt;
            [
                start[0] + r * (th.sin() - heading.sin()),
                start[1] - r * (th.cos() - heading.cos()),
            ]
        })
        .collect()
}

/// Walk, brake to a halt, dwell, accelerate back, along a fixed heading.
fn stop_go(
    rng: &mut StreamRng,
    start: [f64; 2],
    heading: f64,
    speed: f64,
    dt: f64,
    n: usize,
) -> Vec<[f64; 2]> {
    const ACCEL: f64 = 1.5;
    #[derive(Clone, Copy)]
    enum Phase {
        Walk(f64),
        Brake,
        Dwell(f64),
        Accelerate,
    }
    let (s, c) = heading.sin_cos();
    let h = dt / SUBSTEPS as f64;
    let mut phase = if rng.gen::<bool>() {
        Phase::Walk(rng.gen_range(0.5..3.0))
    } else {
        Phase::Dwell(rng.gen_range(0.2..1.5))
    };
    let mut v = if matches!(phase, Phase::Walk(_)) {
        speed
    } else {
        0.0
    };
    let mut dist = 0.0;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push([start[0] + dist * c, start[1] + dist * s]);
        for _ in 0..SUBSTEPS {
            phase = match phase {
                Phase::Walk(left) if left <= 0.0 => Phase::Brake,
                Phase::Walk(left) => Phase::Walk(left - h),
                Phase::Brake if v <= 0.0 => Phase::Dwell(rng.gen_range(0.5..2.0)),
                Phase::Dwell(left) if left <= 0.0 => Phase::Accelerate,
                Phase::Dwell(left) => Phase::Dwell(left - h),
                Phase::Accelerate if v >= speed => Phase::Walk(rng.gen_range(1.5..4.0)),
                p => p,
            };
            let v_next = match phase {
                Phase::Brake => (v - ACCEL * h).max(0.0),
                Phase::Accelerate => (v + ACCEL * h).min(speed),
                Phase::Walk(_) => speed,
                Phase::Dwell(_) => 0.0,
            };
            dist += 0.5 * (v + v_next) * h;
            v = v_next;
        }
    }
    out
}

/// Constant speed with an Ornstein-Uhlenbeck turn rate (stationary std `omega_max / 2`).
fn curve(
    rng: &mut StreamRng,
    start: [f64; 2],
    heading: f64,
    speed: f64,
    omega_max: f64,
    dt: f64,
    n: usize,
) -> Vec<[f64; 2]> {
    const REVERSION: f64 = 0.8;
    let h = dt / SUBSTEPS as f64;
    let diffusion = 0.5 * omega_max * (2.0 * REVERSION).sqrt();
    let mut omega = 0.0;
    let mut th = heading;
    let mut p = start;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(p);
        for _ in 0..SUBSTEPS {
            let xi: f64 = rng.sample(rand_distr::StandardNormal);
            omega += -REVERSION * omega * h + diffusion * h.sqrt() * xi;
            omega = omega.clamp(-omega_max.max(1e-9) * 2.0, omega_max.max(1e-9) * 2.0);
            let th_next = th + omega * h;
            let mid = 0.5 * (th + th_next);
            p = [p[0] + speed * h * mid.cos(), p[1] + speed * h * mid.sin()];
            th = th_next;
        }
    }
    out
}
