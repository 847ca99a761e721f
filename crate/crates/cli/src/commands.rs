//! The subcommands. Each writes its outputs and a `run-manifest.txt` under the
//! output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use htp_core::data::{self, DatasetSplit, SplitName, WindowConfig};
use htp_core::geometry::{make_inputs, resample_track};
use htp_core::metrics::{self, CalibrationCurve, CalibrationOptions, ScoreRow};
use htp_core::model::{self, TrainConfig};
use htp_core::uncertainty::{self, SampledMixture};
use htp_core::{rng, synth, trajectory_csv, EgoSample, Error, MixtureForecast, ModelParams};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::svg;

pub type CliResult<T> = Result<T, CliError>;

const FORWARD_CHUNK: usize = 256;

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn create_out_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Resolved config as `key = value` lines, preceded by commented provenance
/// lines, so the file can be passed back through `--config`.
fn write_run_manifest(
    out_dir: &Path,
    command: &str,
    inputs: &[(&str, &Path)],
    cfg: &RunConfig,
) -> CliResult<()> {
    let mut s = format!(
        "# command = {command}\n# version = {}\n",
        env!("CARGO_PKG_VERSION")
    );
    for (role, path) in inputs {
        let digest = data::file_digest(path)?;
        let _ = writeln!(s, "# {role} = {} sha256:{digest}", path.display());
    }
    s.push_str(&cfg.to_kv());
    write_file(&out_dir.join("run-manifest.txt"), s)
}

fn split(splits: &[DatasetSplit], name: SplitName) -> &DatasetSplit {
    splits
        .iter()
        .find(|s| s.name == name)
        .expect("load_dataset returns every split")
}

fn forecasts(params: &ModelParams, samples: &[EgoSample]) -> CliResult<Vec<MixtureForecast>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(FORWARD_CHUNK) {
        let inputs: Vec<&[[f64; 4]]> = chunk.iter().map(|s| s.input.as_slice()).collect();
        out.extend(params.forward_batch(&inputs)?);
    }
    Ok(out)
}

/// Horizon indices for times in seconds, rounded to the nearest step and
/// dropped when out of range.
fn horizon_indices(times_s: &[f64], dt: f64, m: usize) -> Vec<usize> {
    let mut out: Vec<usize> = times_s
        .iter()
        .map(|t| (t / dt).round() as i64 - 1)
        .filter(|&h| h >= 0 && (h as usize) < m)
        .map(|h| h as usize)
        .collect();
    out.dedup();
    out
}

fn input_steps(seconds: f64, dt: f64) -> usize {
    ((seconds / dt).round() as usize).max(2)
}

pub fn synth(cfg: &RunConfig, out_dir: &Path) -> CliResult<PathBuf> {
    create_out_dir(out_dir)?;
    let tracks = synth::generate_synthetic(&cfg.synth_config()?)?;
    let path = out_dir.join("tracks.csv");
    let mut buf = Vec::new();
    trajectory_csv::write_tracks(&mut buf, &tracks).map_err(|e| CliError::io(&path, e))?;
    write_file(&path, buf)?;
    write_run_manifest(out_dir, "synth", &[("output", &path)], cfg)?;
    println!("wrote {} tracks to {}", tracks.len(), path.display());
    Ok(path)
}

pub fn train(cfg: &RunConfig, data_paths: &[PathBuf], out_dir: &Path) -> CliResult<ModelParams> {
    create_out_dir(out_dir)?;
    let splits = data::load_dataset(data_paths, cfg.rate_hz, cfg.window(), &cfg.split_spec()?)?;
    write_file(
        &out_dir.join("splits.toml"),
        data::manifest_of(&splits).to_toml(),
    )?;
    let train_set = split(&splits, SplitName::Train).samples();
    let eval_set = split(&splits, SplitName::TrainEval).samples();
    if train_set.is_empty() {
        return Err(Error::EmptyDataset.into());
    }
    let train_cfg: TrainConfig = cfg.train_config();
    let init = ModelParams::init(cfg.model_config(), cfg.seed)?;
    eprintln!(
        "training on {} samples ({} for evaluation), {} parameters",
        train_set.len(),
        eval_set.len(),
        init.num_params()
    );

    let mut log = String::from("epoch,lr,train_loss,eval_loss\n");
    let every = (train_cfg.epochs / 10).max(1);
    let result = model::train(init, &train_set, &train_cfg, &eval_set, |e| {
        let eval = e.eval_loss.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(log, "{},{},{},{}", e.epoch, e.lr, e.train_loss, eval);
        if (e.epoch + 1) % every == 0 {
            eprintln!(
                "epoch {}/{}: train {:.4} eval {eval}",
                e.epoch + 1,
                train_cfg.epochs,
                e.train_loss
            );
        }
    });
    write_file(&out_dir.join("loss.csv"), &log)?;
    let inputs: Vec<(&str, &Path)> = data_paths.iter().map(|p| ("data", p.as_path())).collect();
    write_run_manifest(out_dir, "train", &inputs, cfg)?;
    match result {
        Ok(out) => {
            model::save_checkpoint(&out.params, &out_dir.join("model.ckpt"))?;
            Ok(out.params)
        }
        Err(aborted) => {
            model::save_checkpoint(&aborted.last_good, &out_dir.join("model.last_good.ckpt"))?;
            Err(CliError::TrainAborted {
                epoch: aborted.epoch,
                source: aborted.error,
            })
        }
    }
}

pub fn predict(cfg: &RunConfig, checkpoint: &Path, input: &Path, out_dir: &Path) -> CliResult<()> {
    let params = model::load_checkpoint(checkpoint)?;
    create_out_dir(out_dir)?;
    let mc = *params.config();
    let mut windows = Vec::new();
    for track in trajectory_csv::read_tracks(input)? {
        match resample_track(&track, 1.0 / mc.dt) {
            Ok(t) => windows.extend(make_inputs(&t, cfg.n_in, cfg.stride)),
            Err(e @ Error::TrackTooShort { .. }) => eprintln!("skipping: {e}"),
            Err(e) => return Err(e.into()),
        }
    }
    if windows.is_empty() {
        return Err(Error::EmptyDataset.into());
    }
    let forecasts = forecasts(&params, &windows)?;

    let mut mix = String::from("window,track_id,h,m,c,mu_x,mu_y,sigma_x,sigma_y,rho\n");
    let mut contours = String::from("window,track_id,h,q,ring,x,y\n");
    let report = horizon_indices(&cfg.report_horizons, mc.dt, mc.num_horizons);
    for (w, (sample, f)) in windows.iter().zip(&forecasts).enumerate() {
        for (h, comps) in f.horizons.iter().enumerate() {
            for (m, c) in comps.iter().enumerate() {
                let _ = writeln!(
                    mix,
                    "{w},{},{},{},{},{},{},{},{},{}",
                    sample.track_id,
                    h + 1,
                    m + 1,
                    c.weight,
                    c.mean[0],
                    c.mean[1],
                    c.std[0],
                    c.std[1],
                    c.corr
                );
            }
        }
        let seed = rng::derive_seed(cfg.seed, "predict", w as u64);
        for &h in &report {
            let comps = &f.horizons[h];
            let sets = uncertainty::horizon_confidence_sets(
                comps,
                h,
                &cfg.levels,
                cfg.n_samples,
                cfg.cell_size,
                seed,
            )?;
            for set in &sets {
                for (ring, points) in uncertainty::confidence_contours(comps, set)?
                    .iter()
                    .enumerate()
                {
                    for p in points {
                        let [x, y] = sample.anchor.to_world(*p);
                        let _ = writeln!(
                            contours,
                            "{w},{},{},{},{ring},{x:.6},{y:.6}",
                            sample.track_id,
                            h + 1,
                            set.level
                        );
                    }
                }
            }
        }
    }
    write_file(&out_dir.join("forecast.csv"), mix)?;
    write_file(&out_dir.join("contours.csv"), contours)?;
    write_run_manifest(
        out_dir,
        "predict",
        &[("checkpoint", checkpoint), ("input", input)],
        cfg,
    )?;
    println!("wrote forecasts for {} windows", windows.len());
    Ok(())
}

/// Scores of one evaluation pass plus what the artifacts need.
#[derive(Debug, Clone)]
pub struct EvalPass {
    pub scores: ScoreRow,
    pub curve: CalibrationCurve,
    /// Mean confidence-set area `[level][horizon]` over the sharpness subset.
    pub mean_areas: Vec<Vec<f64>>,
}

pub fn evaluate_samples(
    cfg: &RunConfig,
    params: &ModelParams,
    samples: &[EgoSample],
) -> CliResult<EvalPass> {
    let forecasts = forecasts(params, samples)?;
    let pairs: Vec<(&MixtureForecast, &[[f64; 2]])> = forecasts
        .iter()
        .zip(samples)
        .map(|(f, s)| (f, s.future_gt.as_slice()))
        .collect();
    let opts = CalibrationOptions {
        n_samples: cfg.n_samples,
        seed: cfg.seed,
        levels: metrics::level_grid(),
        min_pairs: cfg.min_pairs,
    };
    let curve = metrics::calibration_curve(&pairs, &opts)?;
    let reliability = metrics::reliability_scores(&curve);

    let subset = cfg.sharpness_pairs.clamp(1, forecasts.len());
    let m = params.config().num_horizons;
    let mut mean_areas = vec![vec![0.0; m]; cfg.levels.len()];
    let mut aggregate = vec![0.0; cfg.levels.len()];
    for j in 0..subset {
        let i = j * forecasts.len() / subset;
        let seed = rng::derive_seed(cfg.seed, "sharpness", i as u64);
        let rep = uncertainty::sharpness(
            &forecasts[i],
            &cfg.levels,
            cfg.n_samples,
            cfg.cell_size,
            seed,
        )?;
        for (l, areas) in rep.areas.iter().enumerate() {
            aggregate[l] += rep.aggregate[l] / subset as f64;
            for (h, a) in areas.iter().enumerate() {
                mean_areas[l][h] += a / subset as f64;
            }
        }
    }
    let at = |q: f64| {
        cfg.levels
            .iter()
            .position(|&l| (l - q).abs() < 1e-12)
            .map_or(f64::NAN, |i| aggregate[i])
    };

    let mode = cfg.hypothesis_mode()?;
    let (mut ade, mut fde) = (0.0, 0.0);
    for (i, (f, s)) in forecasts.iter().zip(samples).enumerate() {
        let seed = rng::derive_seed(cfg.seed, "min-ade", i as u64);
        let (a, b) = metrics::min_ade_fde_with(f, &s.future_gt, cfg.k, seed, mode)?;
        ade += a / samples.len() as f64;
        fde += b / samples.len() as f64;
    }
    Ok(EvalPass {
        scores: ScoreRow {
            r_avg: reliability.r_avg,
            r_min: reliability.r_min,
            s68: at(0.68),
            s95: at(0.95),
            min_ade: ade,
            min_fde: fde,
            k: cfg.k,
        },
        curve,
        mean_areas,
    })
}

pub fn evaluate(
    cfg: &RunConfig,
    checkpoint: &Path,
    data_paths: &[PathBuf],
    out_dir: &Path,
) -> CliResult<EvalPass> {
    let params = model::load_checkpoint(checkpoint)?;
    create_out_dir(out_dir)?;
    let mc = *params.config();
    let window = WindowConfig {
        n_in: cfg.n_in,
        m_fc: mc.num_horizons,
        stride: cfg.stride,
    };
    let splits = data::load_dataset(data_paths, 1.0 / mc.dt, window, &cfg.split_spec()?)?;
    let samples = split(&splits, cfg.eval_split()?).samples();
    if samples.is_empty() {
        return Err(Error::EmptyDataset.into());
    }
    let full = evaluate_samples(cfg, &params, &samples)?;

    let mut scores = Vec::new();
    full.scores
        .write_csv(&mut scores)
        .map_err(|e| CliError::io(out_dir.join("scores.csv"), e))?;
    write_file(&out_dir.join("scores.csv"), scores)?;
    let mut calibration = Vec::new();
    full.curve
        .write_csv(&mut calibration)
        .map_err(|e| CliError::io(out_dir.join("calibration.csv"), e))?;
    write_file(&out_dir.join("calibration.csv"), calibration)?;
    let report = horizon_indices(&cfg.report_horizons, mc.dt, mc.num_horizons);
    write_file(
        &out_dir.join("reliability.svg"),
        svg::reliability_diagram(&full.curve, &report),
    )?;
    let mut sharp = String::from("horizon_s,q,mean_area_m2\n");
    for (l, areas) in full.mean_areas.iter().enumerate() {
        for (h, a) in areas.iter().enumerate() {
            let _ = writeln!(
                sharp,
                "{},{},{a:.6}",
                ((h + 1) as f64 * mc.dt * 1e6).round() / 1e6,
                cfg.levels[l]
            );
        }
    }
    write_file(&out_dir.join("sharpness.csv"), sharp)?;

    if !cfg.input_horizon.is_empty() {
        let mut rows = format!("input_horizon_s,{}\n", metrics::SCORES_HEADER);
        for &seconds in &cfg.input_horizon {
            let len = input_steps(seconds, mc.dt);
            let cut: Vec<EgoSample> = samples.iter().map(|s| s.truncate_input(len)).collect();
            let pass = evaluate_samples(cfg, &params, &cut)?;
            let _ = writeln!(rows, "{seconds},{}", pass.scores.csv_fields());
        }
        write_file(&out_dir.join("scores_by_input_horizon.csv"), rows)?;
    }
    let mut inputs: Vec<(&str, &Path)> = vec![("checkpoint", checkpoint)];
    inputs.extend(data_paths.iter().map(|p| ("data", p.as_path())));
    write_run_manifest(out_dir, "evaluate", &inputs, cfg)?;
    println!("{}\n{}", metrics::SCORES_HEADER, full.scores.csv_fields());
    Ok(full)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Timing {
    pub median_ms: f64,
    pub p95_ms: f64,
}

impl Timing {
    fn of(mut ms: Vec<f64>) -> Self {
        ms.sort_unstable_by(f64::total_cmp);
        let n = ms.len();
        let median = if n % 2 == 1 {
            ms[n / 2]
        } else {
            0.5 * (ms[n / 2 - 1] + ms[n / 2])
        };
        let p95 = ms[((0.95 * n as f64).ceil() as usize).clamp(1, n) - 1];
        Self {
            median_ms: median,
            p95_ms: p95,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchReport {
    pub forward: Timing,
    pub post: Timing,
    pub total: Timing,
}

fn machine_descriptor() -> String {
    let cpu = fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split_once(':'))
                .map(|(_, v)| v.trim().to_owned())
        })
        .unwrap_or_else(|| "unknown".into());
    let threads = std::thread::available_parallelism().map_or(0, |n| n.get());
    format!(
        "os = {}\narch = {}\ncpu = {cpu}\nlogical_cpus = {threads}\nprofile = {}\n",
        std::env::consts::OS,
        std::env::consts::ARCH,
        if cfg!(debug_assertions) {
            "debug"
        } else {
            "release"
        }
    )
}

/// Times the forward pass on one batch and the post-processing that turns the
/// forecasts into confidence sets: density thresholds for every level at the
/// reported horizons, estimated from `bench_samples` draws per mixture.
pub fn bench(cfg: &RunConfig, checkpoint: &Path, out_dir: &Path) -> CliResult<BenchReport> {
    let params = model::load_checkpoint(checkpoint)?;
    create_out_dir(out_dir)?;
    let mc = *params.config();
    if cfg.bench_reps == 0 || cfg.bench_batch == 0 {
        return Err(CliError::Usage(
            "bench_reps and bench_batch must be positive".into(),
        ));
    }
    let mut synth_cfg = cfg.synth_config()?;
    synth_cfg.n_tracks = cfg.bench_batch;
    synth_cfg.rate_hz = 1.0 / mc.dt;
    synth_cfg.duration_s = (cfg.n_in + 1) as f64 * mc.dt;
    let windows: Vec<EgoSample> = synth::generate_synthetic(&synth_cfg)?
        .iter()
        .filter_map(|t| make_inputs(t, cfg.n_in, usize::MAX).pop())
        .collect();
    let inputs: Vec<&[[f64; 4]]> = windows.iter().map(|s| s.input.as_slice()).collect();
    let report = horizon_indices(&cfg.report_horizons, mc.dt, mc.num_horizons);

    let run_once = |rep: usize| -> CliResult<(f64, f64)> {
        let t0 = Instant::now();
        let forecasts = params.forward_batch(&inputs)?;
        let t1 = Instant::now();
        let mut rng = rng::stream(cfg.seed, "bench", rep as u64);
        let mut sink = 0.0;
        for f in &forecasts {
            for &h in &report {
                let sampled = SampledMixture::new(&f.horizons[h], cfg.bench_samples, &mut rng)?;
                sink += cfg
                    .levels
                    .iter()
                    .map(|&q| sampled.log_threshold(q))
                    .sum::<f64>();
            }
        }
        std::hint::black_box(sink);
        let t2 = Instant::now();
        Ok(((t1 - t0).as_secs_f64() * 1e3, (t2 - t1).as_secs_f64() * 1e3))
    };
    for rep in 0..cfg.bench_warmup {
        run_once(rep)?;
    }
    let mut fwd = Vec::with_capacity(cfg.bench_reps);
    let mut post = Vec::with_capacity(cfg.bench_reps);
    for rep in 0..cfg.bench_reps {
        let (a, b) = run_once(cfg.bench_warmup + rep)?;
        fwd.push(a);
        post.push(b);
    }
    let total: Vec<f64> = fwd.iter().zip(&post).map(|(a, b)| a + b).collect();
    let out = BenchReport {
        forward: Timing::of(fwd),
        post: Timing::of(post),
        total: Timing::of(total),
    };

    let mut csv = String::from("stage,median_ms,p95_ms,reps,batch\n");
    for (name, t) in [
        ("forward", out.forward),
        ("post", out.post),
        ("total", out.total),
    ] {
        let _ = writeln!(
            csv,
            "{name},{:.4},{:.4},{},{}",
            t.median_ms,
            t.p95_ms,
            cfg.bench_reps,
            windows.len()
        );
    }
    write_file(&out_dir.join("bench.csv"), &csv)?;
    write_file(&out_dir.join("machine.txt"), machine_descriptor())?;
    write_run_manifest(out_dir, "bench", &[("checkpoint", checkpoint)], cfg)?;
    print!("{csv}");
    Ok(out)
}
