//! Run configuration: built-in defaults, then an optional TOML file, then
//! command-line flags, each layer overriding the previous one.

use std::path::Path;
use std::str::FromStr;

use clap::Args;
use serde::Deserialize;
use sfr_core::metric::LrSchedule;
use sfr_core::PyramidSpec;

use crate::exit::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub alpha: f64,
    pub beta: f64,
    pub margin: f64,
    pub kernels: Vec<usize>,
    pub normalize: bool,
    pub p: usize,
    pub k: usize,
    pub epochs: usize,
    pub lr: f64,
    pub lr_schedule: LrSchedule,
    pub seed: u64,
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            alpha: sfr_core::DEFAULT_ALPHA,
            beta: sfr_core::DEFAULT_BETA,
            margin: sfr_core::DEFAULT_MARGIN,
            kernels: vec![1, 2, 3, 4],
            normalize: true,
            p: 32,
            k: 4,
            epochs: 20,
            lr: 0.01,
            lr_schedule: LrSchedule::StepDecay {
                factor: 0.5,
                interval: 50,
            },
            seed: 7,
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

impl RunConfig {
    pub fn pyramid(&self) -> Result<PyramidSpec, CliError> {
        PyramidSpec::new(self.kernels.clone(), 1).map_err(|e| CliError::input(e.to_string()))
    }

    fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::input(msg));
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return bad(format!("margin must be non-negative, got {}", self.margin));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be non-negative, got {}", self.lr));
        }
        if self.p < 2 || self.k < 2 {
            return bad(format!("P and K must both be at least 2, got {} and {}", self.p, self.k));
        }
        if self.workers == 0 {
            return bad("worker count must be at least 1".into());
        }
        self.pyramid().map(|_| ())
    }
}

/// Parses `constant` or `step:FACTOR:INTERVAL`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleArg(pub LrSchedule);

impl FromStr for ScheduleArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "constant" {
            return Ok(ScheduleArg(LrSchedule::Constant));
        }
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            ["step", factor, interval] => {
                let factor: f64 = factor.parse().map_err(|e| format!("step factor: {e}"))?;
                let interval: usize = interval.parse().map_err(|e| format!("step interval: {e}"))?;
                if !(factor > 0.0 && factor <= 1.0) || interval == 0 {
                    return Err("step decay needs a factor in (0, 1] and a positive interval".into());
                }
                Ok(ScheduleArg(LrSchedule::StepDecay { factor, interval }))
            }
            _ => Err(format!("expected `constant` or `step:FACTOR:INTERVAL`, got {s:?}")),
        }
    }
}

/// Comma-separated kernel sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelsArg(pub Vec<usize>);

impl FromStr for KernelsArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.split(',')
            .map(|k| k.trim().parse::<usize>().map_err(|e| format!("kernel {k:?}: {e}")))
            .collect::<Result<_, _>>()
            .map(KernelsArg)
    }
}

/// Flags shared by every command.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML file with any of the settings below; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<std::path::PathBuf>,
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    #[arg(long, global = true)]
    pub beta: Option<f64>,
    #[arg(long, global = true)]
    pub margin: Option<f64>,
    /// Comma-separated pyramid kernel sizes, e.g. `1,2,3,4`.
    #[arg(long, global = true)]
    pub kernels: Option<KernelsArg>,
    #[arg(long, global = true, overrides_with = "no_normalize")]
    pub normalize: bool,
    #[arg(long, global = true, overrides_with = "normalize")]
    pub no_normalize: bool,
    #[arg(long, global = true)]
    pub p: Option<usize>,
    #[arg(long, global = true)]
    pub k: Option<usize>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    /// `constant` or `step:FACTOR:INTERVAL`.
    #[arg(long, global = true)]
    pub lr_schedule: Option<ScheduleArg>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct FileConfig {
    alpha: Option<f64>,
    beta: Option<f64>,
    margin: Option<f64>,
    kernels: Option<Vec<usize>>,
    normalize: Option<bool>,
    p: Option<usize>,
    k: Option<usize>,
    epochs: Option<usize>,
    lr: Option<f64>,
    lr_schedule: Option<String>,
    seed: Option<u64>,
    workers: Option<usize>,
}

fn read_file(path: &Path) -> Result<FileConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::input(format!("config {}: {e}", path.display())))
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            let f = read_file(path)?;
            let schedule = f
                .lr_schedule
                .map(|s| s.parse::<ScheduleArg>().map_err(CliError::input))
                .transpose()?;
            apply(&mut cfg.alpha, f.alpha);
            apply(&mut cfg.beta, f.beta);
            apply(&mut cfg.margin, f.margin);
            apply(&mut cfg.kernels, f.kernels);
            apply(&mut cfg.normalize, f.normalize);
            apply(&mut cfg.p, f.p);
            apply(&mut cfg.k, f.k);
            apply(&mut cfg.epochs, f.epochs);
            apply(&mut cfg.lr, f.lr);
            apply(&mut cfg.lr_schedule, schedule.map(|s| s.0));
            apply(&mut cfg.seed, f.seed);
            apply(&mut cfg.workers, f.workers);
        }
        apply(&mut cfg.alpha, self.alpha);
        apply(&mut cfg.beta, self.beta);
        apply(&mut cfg.margin, self.margin);
        apply(&mut cfg.kernels, self.kernels.clone().map(|k| k.0));
        if self.normalize {
            cfg.normalize = true;
        }
        if self.no_normalize {
            cfg.normalize = false;
        }
        apply(&mut cfg.p, self.p);
        apply(&mut cfg.k, self.k);
        apply(&mut cfg.epochs, self.epochs);
        apply(&mut cfg.lr, self.lr);
        apply(&mut cfg.lr_schedule, self.lr_schedule.map(|s| s.0));
        apply(&mut cfg.seed, self.seed);
        apply(&mut cfg.workers, self.workers);
        cfg.validate()?;
        Ok(cfg)
    }
}

fn apply<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}
