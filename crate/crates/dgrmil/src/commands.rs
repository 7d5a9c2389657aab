//! The work behind each subcommand, separated from argument parsing.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use dgrmil_core::data::{generate_synthetic, Dataset, SyntheticSpec, ZScore};
use dgrmil_core::diversity::{pairwise_rate_reduction, DiversityReport, RateConfig};
use dgrmil_core::model::{footprint, Footprint, ModelConfig};
use dgrmil_core::train::{metrics_from_scores, predict, train, EvalMetrics, TrainOutcome};

use crate::bags::{load_csv, save_csv};
use crate::benchmark::load_mil_benchmark;
use crate::config::{DataFormat, RunConfig};
use crate::cv::{run_repeated_cv, RepeatedCv};
use crate::error::{CliError, CliResult};
use crate::params_io::{self, SavedModel};
use crate::reports::{self, AttentionRow, HeadSelect, RowSelect};

pub const HISTORY_FILE: &str = "history.csv";
pub const PARAMS_FILE: &str = "params.bin";
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved";

/// Loads a dataset; benchmark cardinality warnings go to stderr.
pub fn load_dataset(path: &Path, format: DataFormat) -> CliResult<Dataset> {
    match format {
        DataFormat::Csv => load_csv(path),
        DataFormat::Benchmark(b) => {
            let loaded = load_mil_benchmark(path, b)?;
            for w in &loaded.warnings {
                eprintln!("warning: {w}");
            }
            Ok(loaded.dataset)
        }
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::write(dir, e))
}

fn require_data(cfg: &RunConfig) -> CliResult<&Path> {
    cfg.data.as_deref().ok_or_else(|| CliError::Data("no dataset path given (set data = <path>)".into()))
}

fn check_width(model: &ModelConfig, dataset: &Dataset) -> CliResult<()> {
    if model.input_dim != dataset.feature_dim {
        return Err(CliError::Config(format!(
            "dimension mismatch: model expects {} features, dataset {} has {}",
            model.input_dim, dataset.name, dataset.feature_dim
        )));
    }
    Ok(())
}

fn normalized(model: &SavedModel, dataset: &Dataset) -> CliResult<Dataset> {
    check_width(&model.params.config, dataset)?;
    match &model.normalization {
        Some(z) => Ok(z.apply(dataset)?),
        None => Ok(dataset.clone()),
    }
}

#[derive(Debug)]
pub struct TrainRun {
    pub outcome: TrainOutcome,
    /// The configuration with every default and the embedding width filled in.
    pub resolved: RunConfig,
    pub out_dir: PathBuf,
}

/// Trains on `data` (validating on `val-data` when given) and writes the
/// resolved config, `history.csv` and the params file into `out-dir`.
pub fn cmd_train(cfg: &RunConfig) -> CliResult<TrainRun> {
    cfg.validate()?;
    let train_set = load_dataset(require_data(cfg)?, cfg.format)?;
    let val_set = cfg.val_data.as_deref().map(|p| load_dataset(p, cfg.format)).transpose()?;
    if let Some(v) = &val_set {
        if v.feature_dim != train_set.feature_dim {
            return Err(CliError::Config(format!(
                "dimension mismatch: training data has {} features, validation data {}",
                train_set.feature_dim, v.feature_dim
            )));
        }
    }
    let mut resolved = cfg.clone();
    resolved.train.embed_dim = Some(cfg.train.model_config(train_set.feature_dim).embed_dim);
    create_dir(&cfg.out_dir)?;
    let snapshot = cfg.out_dir.join(RESOLVED_CONFIG_FILE);
    fs::write(&snapshot, resolved.to_text()).map_err(|e| CliError::write(&snapshot, e))?;

    let (train_set, val_set, normalization) = if cfg.normalize {
        let z = ZScore::fit(&train_set)?;
        let val = val_set.map(|v| z.apply(&v)).transpose()?;
        (z.apply(&train_set)?, val, Some(z))
    } else {
        (train_set, val_set, None)
    };
    let outcome = train(&train_set, val_set.as_ref(), &resolved.train)?;
    reports::write_history(&cfg.out_dir.join(HISTORY_FILE), &outcome.history)?;
    let saved = SavedModel { params: outcome.params.clone(), normalization };
    params_io::save(&saved, &cfg.out_dir.join(PARAMS_FILE))?;
    Ok(TrainRun { outcome, resolved, out_dir: cfg.out_dir.clone() })
}

/// Scores every bag, writing `scores.csv` and `metrics.csv` into `out_dir`.
pub fn cmd_eval(params_path: &Path, data_path: &Path, format: DataFormat, out_dir: &Path) -> CliResult<EvalMetrics> {
    let model = params_io::load(params_path)?;
    let dataset = normalized(&model, &load_dataset(data_path, format)?)?;
    let scores = predict(&model.params, &dataset)?;
    let metrics = metrics_from_scores(&scores);
    create_dir(out_dir)?;
    reports::write_scores(&out_dir.join("scores.csv"), &scores)?;
    reports::write_metrics(&out_dir.join("metrics.csv"), &metrics)?;
    Ok(metrics)
}

pub fn cmd_attn_export(
    params_path: &Path,
    data_path: &Path,
    format: DataFormat,
    head: HeadSelect,
    row: RowSelect,
    out: &Path,
) -> CliResult<Vec<AttentionRow>> {
    let model = params_io::load(params_path)?;
    let dataset = normalized(&model, &load_dataset(data_path, format)?)?;
    let rows = reports::attention_rows(&model.params, &dataset, head, row)?;
    reports::write_attention(out, &rows)?;
    Ok(rows)
}

/// Within-class coding rates and positive-set rate reduction of the raw
/// features. With a params file, the Gram similarity of its learnable global
/// vectors is added.
pub fn cmd_diversity(
    data_path: &Path,
    format: DataFormat,
    rate: RateConfig,
    params_path: Option<&Path>,
    out_dir: &Path,
) -> CliResult<DiversityReport> {
    let dataset = load_dataset(data_path, format)?;
    if let Some(bag) = dataset.bags.iter().find(|b| b.instance_labels.is_none()) {
        return Err(CliError::Data(format!(
            "bag {} has no instance labels; the diversity report needs them to isolate positive instances \
             (use canonical CSV with per-instance labels, e.g. from `dgrmil synth`)",
            bag.id
        )));
    }
    let vectors = match params_path {
        None => None,
        Some(p) => {
            let model = params_io::load(p)?;
            let g = model
                .params
                .global_aggregator()
                .ok_or_else(|| CliError::Config("the gated baseline has no global vectors".into()))?
                .globals
                .clone();
            Some(g.slice_rows(1, g.rows() - 1))
        }
    };
    let report = DiversityReport::build_with(&dataset.bags, vectors.as_ref(), rate, |sets, cfg| {
        let pairs: Vec<(usize, usize)> =
            (0..sets.len()).flat_map(|i| (i + 1..sets.len()).map(move |j| (i, j))).collect();
        pairs.par_iter().map(|&(i, j)| pairwise_rate_reduction(&sets[i], &sets[j], cfg)).collect()
    })?;
    create_dir(out_dir)?;
    reports::write_diversity(out_dir, &report)?;
    Ok(report)
}

pub fn cmd_synth(spec: &SyntheticSpec, out: &Path) -> CliResult<Dataset> {
    spec.validate()?;
    let dataset = generate_synthetic(spec)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    save_csv(&dataset, out)?;
    Ok(dataset)
}

pub fn cmd_footprint(model: &ModelConfig, ns: &[usize]) -> CliResult<Vec<(usize, Footprint)>> {
    model.validate()?;
    Ok(ns.iter().map(|&n| (n, footprint(model, n))).collect())
}

/// Repeated CV with seeds `seed..seed + repeats`; writes `cv_folds.csv`,
/// `cv_summary.csv` and the resolved config. Features are standardized per
/// fold from that fold's training part.
pub fn cmd_cv(cfg: &RunConfig) -> CliResult<RepeatedCv> {
    cfg.validate()?;
    let dataset = load_dataset(require_data(cfg)?, cfg.format)?;
    let mut resolved = cfg.clone();
    resolved.train.embed_dim = Some(cfg.train.model_config(dataset.feature_dim).embed_dim);
    create_dir(&cfg.out_dir)?;
    let snapshot = cfg.out_dir.join(RESOLVED_CONFIG_FILE);
    fs::write(&snapshot, resolved.to_text()).map_err(|e| CliError::write(&snapshot, e))?;
    let seeds: Vec<u64> = (0..cfg.repeats as u64).map(|r| cfg.train.seed.wrapping_add(r)).collect();
    let cv = run_repeated_cv(&dataset, cfg.folds, &seeds, &resolved.train)?;
    reports::write_cv_folds(&cfg.out_dir.join("cv_folds.csv"), &cv.repeats)?;
    reports::write_cv_summary(
        &cfg.out_dir.join("cv_summary.csv"),
        &[("accuracy", Some(cv.accuracy)), ("f1", Some(cv.f1)), ("auc", cv.auc)],
    )?;
    Ok(cv)
}
