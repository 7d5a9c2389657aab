//! Flat `key = value` run configuration. Keys are kebab-case, `#` starts a
//! comment, unknown or repeated keys are rejected. Command-line overrides are
//! applied after the file.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use dgrmil_core::model::Architecture;
use dgrmil_core::train::TrainConfig;

use crate::benchmark::Benchmark;
use crate::error::{CliError, CliResult};

/// On-disk layout of the `data` and `val-data` files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    Csv,
    Benchmark(Benchmark),
}

impl FromStr for DataFormat {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        if s == "csv" {
            Ok(DataFormat::Csv)
        } else {
            s.parse().map(DataFormat::Benchmark)
        }
    }
}

impl std::fmt::Display for DataFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DataFormat::Csv => f.write_str("csv"),
            DataFormat::Benchmark(b) => write!(f, "{b}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub val_data: Option<PathBuf>,
    pub format: DataFormat,
    pub out_dir: PathBuf,
    /// Standardize features with statistics of the training data.
    pub normalize: bool,
    pub train: TrainConfig,
    /// Cross-validation folds.
    pub folds: usize,
    /// Cross-validation repeats; repeat `r` uses seed `seed + r`.
    pub repeats: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: None,
            val_data: None,
            format: DataFormat::Csv,
            out_dir: PathBuf::from("run"),
            normalize: true,
            train: TrainConfig::default(),
            folds: 10,
            repeats: 1,
        }
    }
}

/// Every accepted key, in snapshot order.
pub const KEYS: &[&str] = &[
    "data",
    "val-data",
    "format",
    "out-dir",
    "normalize",
    "architecture",
    "embed-dim",
    "num-globals",
    "num-heads",
    "dropout",
    "epochs",
    "base-lr",
    "warmup-lr-start",
    "lr-warmup-epochs",
    "weight-decay",
    "momentum",
    "seed",
    "center-momentum",
    "lambda-tri",
    "lambda-div",
    "margin",
    "jitter",
    "loss-warmup-epochs",
    "folds",
    "repeats",
];

fn parse<T: FromStr>(key: &str, value: &str) -> CliResult<T> {
    value.parse().map_err(|_| CliError::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty() && value != "none").then(|| PathBuf::from(value))
}

pub fn architecture_name(a: Architecture) -> &'static str {
    match a {
        Architecture::DgrMil => "dgr-mil",
        Architecture::AbMil => "ab-mil",
    }
}

pub fn parse_architecture(value: &str) -> CliResult<Architecture> {
    match value {
        "dgr-mil" => Ok(Architecture::DgrMil),
        "ab-mil" => Ok(Architecture::AbMil),
        other => Err(CliError::Config(format!("architecture {other:?} is not dgr-mil or ab-mil"))),
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let value = value.trim();
        let t = &mut self.train;
        match key {
            "data" => self.data = parse_path(value),
            "val-data" => self.val_data = parse_path(value),
            "format" => self.format = value.parse()?,
            "out-dir" => self.out_dir = PathBuf::from(value),
            "normalize" => self.normalize = parse(key, value)?,
            "architecture" => t.architecture = parse_architecture(value)?,
            "embed-dim" => t.embed_dim = if value == "auto" { None } else { Some(parse(key, value)?) },
            "num-globals" => t.num_globals = parse(key, value)?,
            "num-heads" => t.num_heads = parse(key, value)?,
            "dropout" => t.dropout = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "base-lr" => t.base_lr = parse(key, value)?,
            "warmup-lr-start" => t.warmup_lr_start = parse(key, value)?,
            "lr-warmup-epochs" => t.lr_warmup_epochs = parse(key, value)?,
            "weight-decay" => t.weight_decay = parse(key, value)?,
            "momentum" => t.momentum = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "center-momentum" => t.center_momentum = parse(key, value)?,
            "lambda-tri" => t.objective.lambda_tri = parse(key, value)?,
            "lambda-div" => t.objective.lambda_div = parse(key, value)?,
            "margin" => t.objective.margin = parse(key, value)?,
            "jitter" => t.objective.jitter = parse(key, value)?,
            "loss-warmup-epochs" => t.objective.warmup_epochs = parse(key, value)?,
            "folds" => self.folds = parse(key, value)?,
            "repeats" => self.repeats = parse(key, value)?,
            other => return Err(CliError::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map_or_else(|| "none".to_string(), |p| p.display().to_string());
        let t = &self.train;
        match key {
            "data" => path(&self.data),
            "val-data" => path(&self.val_data),
            "format" => self.format.to_string(),
            "out-dir" => self.out_dir.display().to_string(),
            "normalize" => self.normalize.to_string(),
            "architecture" => architecture_name(t.architecture).to_string(),
            "embed-dim" => t.embed_dim.map_or_else(|| "auto".to_string(), |l| l.to_string()),
            "num-globals" => t.num_globals.to_string(),
            "num-heads" => t.num_heads.to_string(),
            "dropout" => t.dropout.to_string(),
            "epochs" => t.epochs.to_string(),
            "base-lr" => t.base_lr.to_string(),
            "warmup-lr-start" => t.warmup_lr_start.to_string(),
            "lr-warmup-epochs" => t.lr_warmup_epochs.to_string(),
            "weight-decay" => t.weight_decay.to_string(),
            "momentum" => t.momentum.to_string(),
            "seed" => t.seed.to_string(),
            "center-momentum" => t.center_momentum.to_string(),
            "lambda-tri" => t.objective.lambda_tri.to_string(),
            "lambda-div" => t.objective.lambda_div.to_string(),
            "margin" => t.objective.margin.to_string(),
            "jitter" => t.objective.jitter.to_string(),
            "loss-warmup-epochs" => t.objective.warmup_epochs.to_string(),
            "folds" => self.folds.to_string(),
            "repeats" => self.repeats.to_string(),
            _ => unreachable!("KEYS lists only handled keys"),
        }
    }

    /// Applies `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> CliResult<()> {
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", i + 1)))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(CliError::Config(format!("line {}: key {key:?} repeated", i + 1)));
            }
            self.set(key, value).map_err(|e| CliError::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn parse_text(text: &str) -> CliResult<Self> {
        let mut c = RunConfig::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        RunConfig::parse_text(&text)
    }

    /// Applies `key=value` overrides.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> CliResult<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("override {o:?} is not key=value")))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    /// Every key with its current value; parses back to an equal config.
    pub fn to_text(&self) -> String {
        KEYS.iter().map(|k| format!("{k} = {}\n", self.get(k))).collect()
    }

    pub fn validate(&self) -> CliResult<()> {
        self.train.validate()?;
        if self.folds < 2 {
            return Err(CliError::Config(format!("folds {} must be at least 2", self.folds)));
        }
        if self.repeats == 0 {
            return Err(CliError::Config("repeats must be at least 1".into()));
        }
        Ok(())
    }
}
