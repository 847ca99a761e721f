//! Run configuration: defaults, a flat `key = value` file, then command-line flags.

use std::path::Path;

use htp_core::data::{SplitName, SplitSpec, WindowConfig};
use htp_core::mdn::ActivationConfig;
use htp_core::metrics::HypothesisMode;
use htp_core::synth::{MotionMix, SynthConfig};
use htp_core::{ModelConfig, TrainConfig};

use crate::error::CliError;

/// Scalar or list value stored in a [`RunConfig`] field.
pub trait ConfigValue: Sized {
    fn parse_value(s: &str) -> Result<Self, String>;
    fn render(&self) -> String;
}

macro_rules! scalar_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> Result<Self, String> {
                s.trim().parse().map_err(|e| format!("cannot parse {s:?}: {e}"))
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}
scalar_value!(u64, usize, f64);

impl ConfigValue for String {
    fn parse_value(s: &str) -> Result<Self, String> {
        Ok(s.trim().to_owned())
    }
    fn render(&self) -> String {
        self.clone()
    }
}

/// Comma-separated; the empty string is the empty list.
impl<T: ConfigValue> ConfigValue for Vec<T> {
    fn parse_value(s: &str) -> Result<Self, String> {
        if s.trim().is_empty() {
            return Ok(Vec::new());
        }
        s.split(',').map(T::parse_value).collect()
    }
    fn render(&self) -> String {
        self.iter().map(T::render).collect::<Vec<_>>().join(",")
    }
}

macro_rules! run_config {
    ($($(#[doc = $doc:literal])* $key:ident: $ty:ty = $default:expr;)*) => {
        /// Every tunable of every subcommand. Unused keys are ignored by a subcommand.
        #[derive(Debug, Clone, PartialEq)]
        pub struct RunConfig {
            $($(#[doc = $doc])* pub $key: $ty,)*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                Self { $($key: $default,)* }
            }
        }

        impl RunConfig {
            pub const KEYS: &'static [&'static str] = &[$(stringify!($key)),*];

            pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
                match key {
                    $(stringify!($key) => {
                        self.$key = <$ty as ConfigValue>::parse_value(value).map_err(|e| format!("{key}: {e}"))?
                    })*
                    _ => return Err(format!("unknown key {key:?}")),
                }
                Ok(())
            }

            /// All keys in declaration order, one `key = value` line each.
            pub fn to_kv(&self) -> String {
                let mut out = String::new();
                $(out.push_str(&format!("{} = {}\n", stringify!($key), self.$key.render()));)*
                out
            }
        }

        /// Flag form of every config key; a flag wins over the config file.
        #[derive(Debug, Clone, Default, clap::Args)]
        pub struct Overrides {
            $($(#[doc = $doc])* #[arg(long, value_name = "VALUE")] pub $key: Option<String>,)*
        }

        impl Overrides {
            pub fn pairs(&self) -> Vec<(&'static str, &str)> {
                let mut out = Vec::new();
                $(if let Some(v) = &self.$key { out.push((stringify!($key), v.as_str())); })*
                out
            }
        }
    };
}

run_config! {
    /// Root seed for every random stream.
    seed: u64 = 0;
    /// Resampling rate for training data and synthetic tracks.
    rate_hz: f64 = 10.0;
    /// Input window length in samples.
    n_in: usize = 32;
    /// Forecast horizons in samples.
    m_fc: usize = 48;
    /// Step between consecutive windows of one track.
    stride: usize = 10;
    /// Split role per --data file (train, train_eval, test); empty splits by track-id hash.
    split_roles: Vec<String> = Vec::new();
    train_frac: f64 = 0.7;
    train_eval_frac: f64 = 0.1;
    test_frac: f64 = 0.2;
    synth_tracks: usize = 600;
    synth_duration_s: f64 = 12.0;
    /// Weights of constant-velocity, turn, stop-and-go and curved tracks.
    synth_mix: Vec<f64> = vec![0.4, 0.3, 0.3, 0.0];
    synth_noise: f64 = 0.05;
    hidden_dim: usize = 64;
    num_layers: usize = 8;
    num_components: usize = 3;
    eps_sigma: f64 = 1e-6;
    eps_rho: f64 = 0.999;
    sigma_offset: f64 = 1.0;
    epochs: usize = 2500;
    batch_size: usize = 1024;
    lr_init: f64 = 1e-3;
    lr_final: f64 = 1e-7;
    /// Global gradient-norm clip; 0 disables.
    clip_norm: f64 = 5.0;
    /// Input lengths (samples) drawn per mini-batch; empty trains on full windows.
    input_lengths: Vec<usize> = Vec::new();
    /// Monte-Carlo draws per confidence-level estimate.
    n_samples: usize = 10_000;
    cell_size: f64 = 0.05;
    /// Confidence-set levels q.
    levels: Vec<f64> = vec![0.68, 0.95];
    /// Hypotheses for minADE/minFDE.
    k: usize = 20;
    /// independent or shared_component.
    hypotheses: String = "independent".into();
    min_pairs: usize = 30;
    /// Forecasts whose confidence sets are rasterised for sharpness.
    sharpness_pairs: usize = 32;
    /// Horizons (s) drawn in the reliability diagram and exported as contours.
    report_horizons: Vec<f64> = vec![1.0, 2.0, 3.0];
    /// Extra evaluation passes with inputs cut to these lengths (s).
    input_horizon: Vec<f64> = Vec::new();
    /// Split evaluated by `evaluate`.
    eval_split: String = "test".into();
    bench_reps: usize = 100;
    bench_warmup: usize = 10;
    bench_batch: usize = 128;
    /// Draws per mixture in the benchmarked post-processing.
    bench_samples: usize = 256;
}

/// Parses `key = value` lines. Blank lines and lines starting with `#` are
/// skipped; a key may appear once.
pub fn parse_kv(text: &str, source: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| CliError::Config {
            path: source.to_owned(),
            line: i + 1,
            message,
        };
        let Some((key, value)) = line.split_once('=') else {
            return Err(err(format!("expected key = value, got {line:?}")));
        };
        let key = key.trim();
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(err(format!("invalid key {key:?}")));
        }
        if out.iter().any(|(k, _)| k == key) {
            return Err(err(format!("duplicate key {key:?}")));
        }
        out.push((key.to_owned(), value.trim().to_owned()));
    }
    Ok(out)
}

impl RunConfig {
    /// Defaults, then the config file, then flags.
    pub fn resolve(file: Option<&Path>, overrides: &Overrides) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let source = path.display().to_string();
            for (i, (key, value)) in parse_kv(&text, &source)?.into_iter().enumerate() {
                cfg.set(&key, &value).map_err(|message| CliError::Config {
                    path: source.clone(),
                    line: line_of_key(&text, &key).unwrap_or(i + 1),
                    message,
                })?;
            }
        }
        for (key, value) in overrides.pairs() {
            cfg.set(key, value)
                .map_err(|e| CliError::Usage(format!("--{}: {e}", key.replace('_', "-"))))?;
        }
        Ok(cfg)
    }

    pub fn window(&self) -> WindowConfig {
        WindowConfig {
            n_in: self.n_in,
            m_fc: self.m_fc,
            stride: self.stride,
        }
    }

    pub fn split_spec(&self) -> Result<SplitSpec, CliError> {
        if self.split_roles.is_empty() {
            return Ok(SplitSpec::Fractional {
                train: self.train_frac,
                train_eval: self.train_eval_frac,
                test: self.test_frac,
            });
        }
        self.split_roles
            .iter()
            .map(|r| {
                r.parse::<SplitName>()
                    .map_err(|e| CliError::Usage(format!("split_roles: {e}")))
            })
            .collect::<Result<_, _>>()
            .map(SplitSpec::ByFile)
    }

    pub fn eval_split(&self) -> Result<SplitName, CliError> {
        self.eval_split
            .parse()
            .map_err(|e| CliError::Usage(format!("eval_split: {e}")))
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            hidden_dim: self.hidden_dim,
            num_layers: self.num_layers,
            num_components: self.num_components,
            num_horizons: self.m_fc,
            dt: 1.0 / self.rate_hz,
            activation: ActivationConfig {
                eps_sigma: self.eps_sigma,
                eps_rho: self.eps_rho,
                sigma_offset: self.sigma_offset,
            },
            ..Default::default()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr_init: self.lr_init,
            lr_final: self.lr_final,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            clip_norm: (self.clip_norm > 0.0).then_some(self.clip_norm),
            input_lengths: self.input_lengths.clone(),
        }
    }

    pub fn synth_config(&self) -> Result<SynthConfig, CliError> {
        let [constant_velocity, turn, stop_go, curve] = self.synth_mix[..] else {
            return Err(CliError::Usage(format!(
                "synth_mix needs 4 weights (cv, turn, stop-go, curve), got {}",
                self.synth_mix.len()
            )));
        };
        Ok(SynthConfig {
            n_tracks: self.synth_tracks,
            duration_s: self.synth_duration_s,
            rate_hz: self.rate_hz,
            mix: MotionMix {
                constant_velocity,
                turn,
                stop_go,
                curve,
            },
            noise_sigma: self.synth_noise,
            seed: self.seed,
            ..Default::default()
        })
    }

    pub fn hypothesis_mode(&self) -> Result<HypothesisMode, CliError> {
        match self.hypotheses.as_str() {
            "independent" => Ok(HypothesisMode::Independent),
            "shared_component" => Ok(HypothesisMode::SharedComponent),
            other => Err(CliError::Usage(format!(
                "hypotheses must be independent or shared_component, got {other:?}"
            ))),
        }
    }
}

fn line_of_key(text: &str, key: &str) -> Option<usize> {
    text.lines()
        .position(|l| {
            l.split_once('=').is_some_and(|(k, _)| k.trim() == key)
                && !l.trim_start().starts_with('#')
        })
        .map(|i| i + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_parsing() {
        let text = "# comment\n\nseed = 4\n  hidden_dim=16  \nlevels = 0.5, 0.9\n";
        let kv = parse_kv(text, "cfg").unwrap();
        assert_eq!(kv.len(), 3);
        assert_eq!(kv[1], ("hidden_dim".into(), "16".into()));
        assert!(matches!(
            parse_kv("a = 1\nbroken\n", "cfg"),
            Err(CliError::Config { line: 2, .. })
        ));
        assert!(matches!(
            parse_kv("a = 1\na = 2\n", "cfg"),
            Err(CliError::Config { line: 2, .. })
        ));
        assert!(matches!(
            parse_kv("a b = 1\n", "cfg"),
            Err(CliError::Config { line: 1, .. })
        ));
    }

    #[test]
    fn file_then_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(
            &path,
            "seed = 4\nhidden_dim = 16\nlevels = 0.5,0.9\ninput_lengths =\n",
        )
        .unwrap();
        let flags = Overrides {
            hidden_dim: Some("8".into()),
            ..Default::default()
        };
        let cfg = RunConfig::resolve(Some(&path), &flags).unwrap();
        assert_eq!((cfg.seed, cfg.hidden_dim), (4, 8));
        assert_eq!(cfg.levels, vec![0.5, 0.9]);
        assert!(cfg.input_lengths.is_empty());

        std::fs::write(&path, "seed = 1\nepochs = many\n").unwrap();
        let err = RunConfig::resolve(Some(&path), &Overrides::default()).unwrap_err();
        assert!(matches!(err, CliError::Config { line: 2, .. }), "{err}");
        std::fs::write(&path, "no_such_key = 1\n").unwrap();
        assert!(RunConfig::resolve(Some(&path), &Overrides::default()).is_err());
    }

    #[test]
    fn rendered_config_parses_back() {
        let mut cfg = RunConfig::default();
        cfg.set("input_lengths", "5,8,32").unwrap();
        cfg.set("lr_final", "1e-7").unwrap();
        let mut back = RunConfig::default();
        for (k, v) in parse_kv(&cfg.to_kv(), "kv").unwrap() {
            back.set(&k, &v).unwrap();
        }
        assert_eq!(cfg, back);
        assert_eq!(RunConfig::KEYS.len(), cfg.to_kv().lines().count());
    }

    #[test]
    fn derived_configs() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.model_config().num_horizons, 48);
        assert!((cfg.model_config().dt - 0.1).abs() < 1e-15);
        assert_eq!(cfg.train_config().clip_norm, Some(5.0));
        assert!(matches!(
            cfg.split_spec().unwrap(),
            SplitSpec::Fractional { .. }
        ));
        let mut bad = cfg.clone();
        bad.synth_mix = vec![1.0];
        assert!(bad.synth_config().is_err());
        bad.hypotheses = "joint".into();
        assert!(bad.hypothesis_mode().is_err());
    }
}
