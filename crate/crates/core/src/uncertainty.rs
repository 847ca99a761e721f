//! Monte-Carlo confidence levels, confidence sets and sharpness.
//!
//! The confidence level of a point `p` under a mixture `D` is the probability
//! mass of the region where the density is at least `D(p)`. It is estimated
//! from `N` draws `z ~ D` as the fraction with `D(z) >= D(p)`. Confidence sets
//! are the matching superlevel sets: the density threshold is the empirical
//! quantile of the sampled densities, and the set is rasterised on a grid.

use std::collections::HashMap;
use std::io::Write;

use crate::error::{Error, Result};
use crate::mdn::{self, GaussComponent, MixtureDensity, MixtureForecast};
use crate::rng::{self, StreamRng};

pub const DEFAULT_SAMPLES: usize = 10_000;
pub const DEFAULT_CELL_SIZE: f64 = 0.05;
pub const DEFAULT_LEVELS: [f64; 2] = [0.68, 0.95];
/// Largest grid a confidence set may rasterise.
pub const CELL_BUDGET: u64 = 10_000_000;
const MIN_SAMPLES: usize = 100;

/// A mixture together with the sorted log densities of `N` of its own draws.
#[derive(Debug, Clone)]
pub struct SampledMixture {
    density: MixtureDensity,
    /// Ascending.
    sample_log_density: Vec<f64>,
}

impl SampledMixture {
    pub fn new(
        components: &[GaussComponent],
        n_samples: usize,
        rng: &mut StreamRng,
    ) -> Result<Self> {
        if n_samples < MIN_SAMPLES {
            return Err(Error::InvalidConfig(format!(
                "need at least {MIN_SAMPLES} Monte-Carlo samples, got {n_samples}"
            )));
        }
        let density = MixtureDensity::new(components)?;
        let points: Vec<[f64; 2]> = (0..n_samples)
            .map(|_| mdn::sample_point(components, rng))
            .collect();
        let mut sample_log_density = vec![0.0; n_samples];
        density.log_density_batch(&points, &mut sample_log_density);
        sample_log_density.sort_unstable_by(f64::total_cmp);
        Ok(Self {
            density,
            sample_log_density,
        })
    }

    pub fn density(&self) -> &MixtureDensity {
        &self.density
    }

    pub fn n_samples(&self) -> usize {
        self.sample_log_density.len()
    }

    /// Estimated confidence level `1 - alpha(p)`: share of draws at least as dense as `p`.
    pub fn confidence_level(&self, p: [f64; 2]) -> f64 {
        let lp = self.density.log_density(p);
        let below = self.sample_log_density.partition_point(|&l| l < lp);
        (self.sample_log_density.len() - below) as f64 / self.sample_log_density.len() as f64
    }

    /// Log-density threshold whose superlevel set holds a share `q` of the draws.
    pub fn log_threshold(&self, q: f64) -> f64 {
        let n = self.sample_log_density.len();
        let k = ((q * n as f64).ceil() as usize).clamp(1, n);
        self.sample_log_density[n - k]
    }
}

fn check_level(q: f64) -> Result<()> {
    if q > 0.0 && q < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "confidence level must be in (0, 1), got {q}"
        )))
    }
}

/// Confidence level of `p` estimated from `n_samples` seeded draws.
pub fn confidence_level(
    components: &[GaussComponent],
    p: [f64; 2],
    n_samples: usize,
    seed: u64,
) -> Result<f64> {
    confidence_level_with(
        components,
        p,
        n_samples,
        &mut rng::stream(seed, "confidence", 0),
    )
}

/// Single-query form of [`SampledMixture::confidence_level`] that skips the sort.
pub fn confidence_level_with(
    components: &[GaussComponent],
    p: [f64; 2],
    n_samples: usize,
    rng: &mut StreamRng,
) -> Result<f64> {
    if n_samples < MIN_SAMPLES {
        return Err(Error::InvalidConfig(format!(
            "need at least {MIN_SAMPLES} Monte-Carlo samples, got {n_samples}"
        )));
    }
    let density = MixtureDensity::new(components)?;
    let lp = density.log_density(p);
    const CHUNK: usize = 512;
    let mut points = Vec::with_capacity(CHUNK);
    let mut logs = vec![0.0; CHUNK];
    let mut hits = 0;
    let mut left = n_samples;
    while left > 0 {
        let n = left.min(CHUNK);
        points.clear();
        points.extend((0..n).map(|_| mdn::sample_point(components, rng)));
        density.log_density_batch(&points, &mut logs[..n]);
        hits += logs[..n].iter().filter(|&&l| l >= lp).count();
        left -= n;
    }
    Ok(hits as f64 / n_samples as f64)
}

/// Rasterised superlevel set of a mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceSet {
    pub level: f64,
    pub horizon: usize,
    pub density_threshold: f64,
    pub log_density_threshold: f64,
    pub cell_size: f64,
    /// Centre of grid cell `(0, 0)`.
    pub origin: [f64; 2],
    /// Grid indices `(ix, iy)` of the cells inside the set.
    pub cells: Vec<(u32, u32)>,
    pub area: f64,
}

impl ConfidenceSet {
    pub fn cell_center(&self, (ix, iy): (u32, u32)) -> [f64; 2] {
        [
            self.origin[0] + ix as f64 * self.cell_size,
            self.origin[1] + iy as f64 * self.cell_size,
        ]
    }
}

/// Grid aligned to multiples of the cell size covering every component mean
/// plus eight of the largest standard deviations.
#[derive(Debug, Clone, Copy)]
struct Grid {
    origin: [f64; 2],
    nx: usize,
    ny: usize,
    cell: f64,
}

impl Grid {
    fn covering(components: &[GaussComponent], cell: f64) -> Result<Self> {
        if !(cell.is_finite() && cell > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "cell size must be positive, got {cell}"
            )));
        }
        let reach = 8.0 * components.iter().flat_map(|c| c.std).fold(0.0, f64::max);
        let mut origin = [0.0; 2];
        let mut counts = [0u64; 2];
        for a in 0..2 {
            let lo = components
                .iter()
                .map(|c| c.mean[a])
                .fold(f64::INFINITY, f64::min)
                - reach;
            let hi = components
                .iter()
                .map(|c| c.mean[a])
                .fold(f64::NEG_INFINITY, f64::max)
                + reach;
            let first = (lo / cell).floor();
            let last = (hi / cell).ceil();
            if !(first.is_finite() && last.is_finite()) {
                return Err(Error::GridBudgetExceeded {
                    cells: u64::MAX,
                    budget: CELL_BUDGET,
                });
            }
            origin[a] = (first + 0.5) * cell;
            counts[a] = (last - first).max(1.0).min(u64::MAX as f64 / 4.0) as u64;
        }
        let cells = counts[0].saturating_mul(counts[1]);
        if cells > CELL_BUDGET {
            return Err(Error::GridBudgetExceeded {
                cells,
                budget: CELL_BUDGET,
            });
        }
        Ok(Self {
            origin,
            nx: counts[0] as usize,
            ny: counts[1] as usize,
            cell,
        })
    }

    fn center(&self, ix: usize, iy: usize) -> [f64; 2] {
        [
            self.origin[0] + ix as f64 * self.cell,
            self.origin[1] + iy as f64 * self.cell,
        ]
    }

    /// Log density at every cell centre, x-major.
    fn log_densities(&self, density: &MixtureDensity) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.nx * self.ny);
        for ix in 0..self.nx {
            for iy in 0..self.ny {
                out.push(density.log_density(self.center(ix, iy)));
            }
        }
        out
    }
}

fn rasterise(
    sampled: &SampledMixture,
    grid: &Grid,
    grid_log: &[f64],
    level: f64,
    horizon: usize,
) -> ConfidenceSet {
    let threshold = sampled.log_threshold(level);
    let cells: Vec<(u32, u32)> = grid_log
        .iter()
        .enumerate()
        .filter(|(_, &l)| l >= threshold)
        .map(|(k, _)| ((k / grid.ny) as u32, (k % grid.ny) as u32))
        .collect();
    ConfidenceSet {
        level,
        horizon,
        density_threshold: threshold.exp(),
        log_density_threshold: threshold,
        cell_size: grid.cell,
        origin: grid.origin,
        area: cells.len() as f64 * grid.cell * grid.cell,
        cells,
    }
}

/// Confidence set of level `q` for a single mixture.
pub fn confidence_set(
    components: &[GaussComponent],
    q: f64,
    n_samples: usize,
    cell_size: f64,
    seed: u64,
) -> Result<ConfidenceSet> {
    check_level(q)?;
    let mut rng = rng::stream(seed, "confidence", 0);
    let sampled = SampledMixture::new(components, n_samples, &mut rng)?;
    let grid = Grid::covering(components, cell_size)?;
    let grid_log = grid.log_densities(sampled.density());
    Ok(rasterise(&sampled, &grid, &grid_log, q, 0))
}

/// Confidence sets of several levels for one horizon's mixture. Draws come
/// from the `(seed, horizon)` substream and are shared across levels, so the
/// sets are nested.
pub fn horizon_confidence_sets(
    components: &[GaussComponent],
    horizon: usize,
    levels: &[f64],
    n_samples: usize,
    cell_size: f64,
    seed: u64,
) -> Result<Vec<ConfidenceSet>> {
    levels.iter().try_for_each(|&q| check_level(q))?;
    let mut rng = rng::stream(seed, "confidence-set", horizon as u64);
    let sampled = SampledMixture::new(components, n_samples, &mut rng)?;
    let grid = Grid::covering(components, cell_size)?;
    let grid_log = grid.log_densities(sampled.density());
    Ok(levels
        .iter()
        .map(|&q| rasterise(&sampled, &grid, &grid_log, q, horizon))
        .collect())
}

/// [`horizon_confidence_sets`] for every horizon, `sets[horizon][level]`.
pub fn forecast_confidence_sets(
    forecast: &MixtureForecast,
    levels: &[f64],
    n_samples: usize,
    cell_size: f64,
    seed: u64,
) -> Result<Vec<Vec<ConfidenceSet>>> {
    forecast
        .horizons
        .iter()
        .enumerate()
        .map(|(h, comps)| horizon_confidence_sets(comps, h, levels, n_samples, cell_size, seed))
        .collect()
}

/// Confidence-set areas and their growth rates.
#[derive(Debug, Clone, PartialEq)]
pub struct SharpnessReport {
    pub levels: Vec<f64>,
    pub dt: f64,
    /// `areas[level][horizon]` in m^2.
    pub areas: Vec<Vec<f64>>,
    /// Per level, mean over horizons of `area / (h * dt)` in m^2/s.
    pub aggregate: Vec<f64>,
}

impl SharpnessReport {
    /// Aggregate sharpness for `level`, if it was computed.
    pub fn at(&self, level: f64) -> Option<f64> {
        self.levels
            .iter()
            .position(|&l| (l - level).abs() < 1e-12)
            .map(|i| self.aggregate[i])
    }
}

/// Mean over horizons `h = 1..=m` of `area_h / (h * dt)`.
pub fn aggregate_sharpness(areas: &[f64], dt: f64) -> f64 {
    if areas.is_empty() {
        return 0.0;
    }
    areas
        .iter()
        .enumerate()
        .map(|(i, a)| a / ((i + 1) as f64 * dt))
        .sum::<f64>()
        / areas.len() as f64
}

pub fn sharpness(
    forecast: &MixtureForecast,
    levels: &[f64],
    n_samples: usize,
    cell_size: f64,
    seed: u64,
) -> Result<SharpnessReport> {
    let sets = forecast_confidence_sets(forecast, levels, n_samples, cell_size, seed)?;
    let areas: Vec<Vec<f64>> = (0..levels.len())
        .map(|k| sets.iter().map(|per_h| per_h[k].area).collect())
        .collect();
    Ok(SharpnessReport {
        levels: levels.to_vec(),
        dt: forecast.dt,
        aggregate: areas
            .iter()
            .map(|a| aggregate_sharpness(a, forecast.dt))
            .collect(),
        areas,
    })
}

/// Closed boundary polylines of a confidence set (marching squares over the
/// cell-centre lattice). Points are in the mixture's frame.
pub fn confidence_contours(
    components: &[GaussComponent],
    set: &ConfidenceSet,
) -> Result<Vec<Vec<[f64; 2]>>> {
    let density = MixtureDensity::new(components)?;
    let log_t = set.log_density_threshold;
    let (Some(max_x), Some(max_y)) = (
        set.cells.iter().map(|c| c.0).max(),
        set.cells.iter().map(|c| c.1).max(),
    ) else {
        return Ok(Vec::new());
    };
    let min_x = set.cells.iter().map(|c| c.0).min().unwrap_or(0);
    let min_y = set.cells.iter().map(|c| c.1).min().unwrap_or(0);
    // Lattice over the occupied bounding box with one padding node per side.
    let nx = (max_x - min_x) as usize + 3;
    let ny = (max_y - min_y) as usize + 3;
    let node_pos = |i: usize, j: usize| -> [f64; 2] {
        [
            set.origin[0] + (min_x as f64 + i as f64 - 1.0) * set.cell_size,
            set.origin[1] + (min_y as f64 + j as f64 - 1.0) * set.cell_size,
        ]
    };
    let mut value = vec![0.0; nx * ny];
    for i in 0..nx {
        for j in 0..ny {
            value[i * ny + j] = if i == 0 || j == 0 || i == nx - 1 || j == ny - 1 {
                -1.0
            } else {
                density.log_density(node_pos(i, j)) - log_t
            };
        }
    }
    let v = |i: usize, j: usize| value[i * ny + j];

    // Edge keys: (i, j, 0) horizontal edge (i,j)-(i+1,j); (i, j, 1) vertical edge (i,j)-(i,j+1).
    type Edge = (usize, usize, u8);
    let crossing = |e: Edge| -> [f64; 2] {
        let (a, b) = match e.2 {
            0 => ((e.0, e.1), (e.0 + 1, e.1)),
            _ => ((e.0, e.1), (e.0, e.1 + 1)),
        };
        let (va, vb) = (v(a.0, a.1), v(b.0, b.1));
        let t = if va == vb {
            0.5
        } else {
            (va / (va - vb)).clamp(0.0, 1.0)
        };
        let (pa, pb) = (node_pos(a.0, a.1), node_pos(b.0, b.1));
        [pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1])]
    };
    let mut segments: Vec<(Edge, Edge)> = Vec::new();
    for i in 0..nx - 1 {
        for j in 0..ny - 1 {
            let inside = [
                v(i, j) >= 0.0,
                v(i + 1, j) >= 0.0,
                v(i + 1, j + 1) >= 0.0,
                v(i, j + 1) >= 0.0,
            ];
            let bottom = (i, j, 0);
            let right = (i + 1, j, 1);
            let top = (i, j + 1, 0);
            let left = (i, j, 1);
            let case = inside
                .iter()
                .enumerate()
                .fold(0u8, |acc, (k, &b)| acc | (u8::from(b) << k));
            let centre_in = (v(i, j) + v(i + 1, j) + v(i + 1, j + 1) + v(i, j + 1)) >= 0.0;
            match case {
                0 | 15 => {}
                1 | 14 => segments.push((left, bottom)),
                2 | 13 => segments.push((bottom, right)),
                3 | 12 => segments.push((left, right)),
                4 | 11 => segments.push((right, top)),
                6 | 9 => segments.push((bottom, top)),
                7 | 8 => segments.push((left, top)),
                5 if centre_in => segments.extend([(left, top), (bottom, right)]),
                5 => segments.extend([(left, bottom), (right, top)]),
                10 if centre_in => segments.extend([(left, bottom), (right, top)]),
                10 => segments.extend([(left, top), (bottom, right)]),
                _ => unreachable!(),
            }
        }
    }

    let mut by_edge: HashMap<Edge, Vec<usize>> = HashMap::new();
    for (k, (a, b)) in segments.iter().enumerate() {
        by_edge.entry(*a).or_default().push(k);
        by_edge.entry(*b).or_default().push(k);
    }
    let mut used = vec![false; segments.len()];
    let mut contours = Vec::new();
    for start in 0..segments.len() {
        if used[start] {
            continue;
        }
        used[start] = true;
        let (first, mut cursor) = segments[start];
        let mut line = vec![crossing(first), crossing(cursor)];
        while cursor != first {
            let next = by_edge[&cursor].iter().copied().find(|&k| !used[k]);
            let Some(k) = next else { break };
            used[k] = true;
            let (a, b) = segments[k];
            cursor = if a == cursor { b } else { a };
            line.push(crossing(cursor));
        }
        contours.push(line);
    }
    Ok(contours)
}

/// CSV rows `h,q,cell_x,cell_y` (cell centres).
pub fn write_sets_csv<W: Write>(mut w: W, sets: &[ConfidenceSet]) -> std::io::Result<()> {
    writeln!(w, "h,q,cell_x,cell_y")?;
    for s in sets {
        for &c in &s.cells {
            let [x, y] = s.cell_center(c);
            writeln!(w, "{},{},{},{}", s.horizon + 1, s.level, x, y)?;
        }
    }
    Ok(())
}
