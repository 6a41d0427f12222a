//! Run configuration: defaults, then the environment seed, then a
//! `key = value` config file, then command-line flags.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use confrec::calibration::{MeanMode, DEFAULT_TAU_GRID};
use confrec::{ReliabilityMode, TrainConfig};

pub const SEED_ENV: &str = "CONF_REC_SEED";

/// Flags shared by every subcommand. Unset flags fall back to the config
/// file, then to defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// `key = value` file; keys are flag names without the leading dashes
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Dataset file (adjacency list or user<TAB>item pairs)
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Checkpoint to read (evaluate, reliability, tune-tau)
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    /// Seed for the split, initialization and sampling [env: CONF_REC_SEED]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Training epochs [default: 100]
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    /// Triples per mini-batch [default: 256]
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    /// Adam learning rate [default: 0.01]
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    /// Embedding dimension [default: 32]
    #[arg(long, global = true)]
    pub dim: Option<usize>,
    /// Propagation layers [default: 2]
    #[arg(long, global = true)]
    pub layers: Option<usize>,
    /// L2 weight on layer-0 embeddings [default: 1e-4]
    #[arg(long, global = true)]
    pub l2: Option<f64>,
    /// Weight of the confidence penalty on negatives, 0 disables it [default: 0.1]
    #[arg(long, global = true)]
    pub conf_weight: Option<f64>,
    /// Negatives sampled per positive [default: 1]
    #[arg(long, global = true)]
    pub negatives: Option<usize>,
    /// Stop after this many epochs without a validation Precision@N gain (0 = off)
    #[arg(long, global = true)]
    pub patience: Option<usize>,
    /// Length of the recommendation lists [default: 20]
    #[arg(long, global = true)]
    pub topn: Option<usize>,
    /// Calibration temperature [default: 1]
    #[arg(long, global = true)]
    pub tau: Option<f64>,
    /// Comma-separated temperatures searched by tune-tau
    #[arg(long, global = true)]
    pub tau_grid: Option<String>,
    /// Also report calibrated scores
    #[arg(long, global = true)]
    pub calibrate: bool,
    /// Ratings the calibration mean is taken over: candidates | all
    #[arg(long, global = true)]
    pub mean_mode: Option<String>,
    /// item | user-mean
    #[arg(long, global = true)]
    pub reliability_mode: Option<String>,
    /// Output directory
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (results do not depend on this)
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub train: TrainConfig,
    pub patience: usize,
    pub topn: usize,
    pub tau: f64,
    pub tau_grid: Vec<f64>,
    pub calibrate: bool,
    pub mean_mode: MeanMode,
    pub reliability_mode: ReliabilityMode,
    pub out: PathBuf,
    pub threads: Option<usize>,
}

const KEYS: &[&str] = &[
    "data",
    "checkpoint",
    "seed",
    "epochs",
    "batch-size",
    "lr",
    "dim",
    "layers",
    "l2",
    "conf-weight",
    "negatives",
    "patience",
    "topn",
    "tau",
    "tau-grid",
    "calibrate",
    "mean-mode",
    "reliability-mode",
    "out",
    "threads",
];

pub fn parse_config_file(text: &str, path: &Path) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("{}:{}: expected `key = value`", path.display(), n + 1))?;
        let key = k.trim().replace('_', "-");
        if !KEYS.contains(&key.as_str()) {
            bail!("{}:{}: unknown key `{}`", path.display(), n + 1, k.trim());
        }
        map.insert(key, v.trim().to_owned());
    }
    Ok(map)
}

fn parse_tau_grid(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .with_context(|| format!("bad temperature `{}` in grid", t.trim()))
        })
        .collect()
}

fn parse_mean_mode(s: &str) -> Result<MeanMode> {
    match s {
        "candidates" => Ok(MeanMode::Candidates),
        "all" => Ok(MeanMode::All),
        other => bail!("mean mode must be `candidates` or `all`, got `{other}`"),
    }
}

fn parse_bool(s: &str) -> Result<bool> {
    match s {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => bail!("expected a boolean, got `{other}`"),
    }
}

struct Layered<'a> {
    file: BTreeMap<String, String>,
    file_path: Option<&'a Path>,
}

impl Layered<'_> {
    fn pick<T>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.file.get(key) {
            Some(raw) => raw.parse().map_err(|e| {
                anyhow!(
                    "{}: bad value `{raw}` for `{key}`: {e}",
                    self.file_path
                        .map(|p| p.display().to_string())
                        .unwrap_or_default()
                )
            }),
            None => Ok(default),
        }
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.file.get(key).map(String::as_str)
    }
}

impl RunConfig {
    pub fn resolve(flags: &Flags) -> Result<Self> {
        let file = match &flags.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("cannot read config file {}", path.display()))?;
                parse_config_file(&text, path)?
            }
            None => BTreeMap::new(),
        };
        let layered = Layered {
            file,
            file_path: flags.config.as_deref(),
        };
        let defaults = TrainConfig::default();

        let env_seed = match std::env::var(SEED_ENV) {
            Ok(v) => Some(
                v.trim()
                    .parse::<u64>()
                    .with_context(|| format!("{SEED_ENV}=`{v}` is not an unsigned integer"))?,
            ),
            Err(_) => None,
        };
        let seed = layered.pick(flags.seed, "seed", env_seed.unwrap_or(defaults.seed))?;

        let train = TrainConfig {
            epochs: layered.pick(flags.epochs, "epochs", defaults.epochs)?,
            batch_size: layered.pick(flags.batch_size, "batch-size", defaults.batch_size)?,
            learning_rate: layered.pick(flags.lr, "lr", defaults.learning_rate)?,
            embed_dim: layered.pick(flags.dim, "dim", defaults.embed_dim)?,
            layers: layered.pick(flags.layers, "layers", defaults.layers)?,
            l2_weight: layered.pick(flags.l2, "l2", defaults.l2_weight)?,
            conf_weight: layered.pick(flags.conf_weight, "conf-weight", defaults.conf_weight)?,
            negatives: layered.pick(flags.negatives, "negatives", defaults.negatives)?,
            seed,
        };

        let tau_grid = match (&flags.tau_grid, layered.raw("tau-grid")) {
            (Some(s), _) => parse_tau_grid(s)?,
            (None, Some(s)) => parse_tau_grid(s)?,
            (None, None) => DEFAULT_TAU_GRID.to_vec(),
        };
        let mean_mode = match (&flags.mean_mode, layered.raw("mean-mode")) {
            (Some(s), _) => parse_mean_mode(s)?,
            (None, Some(s)) => parse_mean_mode(s)?,
            (None, None) => MeanMode::Candidates,
        };
        let reliability_mode = match (&flags.reliability_mode, layered.raw("reliability-mode")) {
            (Some(s), _) => s.parse()?,
            (None, Some(s)) => s.parse()?,
            (None, None) => ReliabilityMode::Item,
        };
        let calibrate = flags.calibrate
            || layered
                .raw("calibrate")
                .map(parse_bool)
                .transpose()?
                .unwrap_or(false);

        let config = Self {
            data: flags
                .data
                .clone()
                .or_else(|| layered.raw("data").map(PathBuf::from)),
            checkpoint: flags
                .checkpoint
                .clone()
                .or_else(|| layered.raw("checkpoint").map(PathBuf::from)),
            train,
            patience: layered.pick(flags.patience, "patience", 0)?,
            topn: layered.pick(flags.topn, "topn", 20)?,
            tau: layered.pick(flags.tau, "tau", 1.0)?,
            tau_grid,
            calibrate,
            mean_mode,
            reliability_mode,
            out: layered.pick(flags.out.clone(), "out", PathBuf::from("."))?,
            threads: match flags.threads {
                Some(t) => Some(t),
                None => layered.raw("threads").map(str::parse).transpose()?,
            },
        };
        if config.topn == 0 {
            bail!("--topn must be >= 1");
        }
        Ok(config)
    }
}
