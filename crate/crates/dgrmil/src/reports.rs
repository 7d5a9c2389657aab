//! CSV artifacts: training history, predictions, metrics, attention maps,
//! cross-validation tables and diversity reports.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use dgrmil_core::data::Dataset;
use dgrmil_core::diversity::{DiversityReport, RateUnit};
use dgrmil_core::model::{forward, Architecture, ModelParams, Mode};
use dgrmil_core::train::{BagScore, CvReport, EpochRecord, EvalMetrics, MeanStd};
use dgrmil_core::Matrix;

use crate::error::{CliError, CliResult};

fn write_table(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> CliResult<()> {
    let file = File::create(path).map_err(|e| CliError::write(path, e))?;
    write_table_to(BufWriter::new(file), header, rows).map_err(|e| CliError::write(path, e))
}

pub(crate) fn write_table_to(
    out: impl Write,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<(), csv::Error> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

pub const HISTORY_HEADER: &[&str] =
    &["epoch", "lr", "loss_total", "loss_ce", "loss_tri", "loss_div", "val_acc", "val_f1", "val_auc"];

fn history_row(r: &EpochRecord) -> Vec<String> {
    let v = r.val.as_ref();
    vec![
        r.epoch.to_string(),
        r.lr.to_string(),
        r.loss_total.to_string(),
        r.loss_ce.to_string(),
        r.loss_tri.to_string(),
        r.loss_div.to_string(),
        opt(v.map(|m| m.accuracy)),
        opt(v.map(|m| m.f1)),
        opt(v.and_then(|m| m.auc)),
    ]
}

/// `history.csv`; validation columns are empty without a validation set.
pub fn write_history(path: &Path, history: &[EpochRecord]) -> CliResult<()> {
    write_table(path, HISTORY_HEADER, history.iter().map(history_row))
}

pub fn write_scores(path: &Path, scores: &[BagScore]) -> CliResult<()> {
    write_table(
        path,
        &["bag_id", "label", "probability", "predicted"],
        scores.iter().map(|s| vec![s.bag_id.clone(), s.label.to_string(), s.probability.to_string(), s.predicted.to_string()]),
    )
}

pub const METRICS_HEADER: &[&str] = &["accuracy", "f1", "auc", "tp", "fp", "tn", "fn"];

fn metrics_row(m: &EvalMetrics) -> Vec<String> {
    vec![
        m.accuracy.to_string(),
        m.f1.to_string(),
        opt(m.auc),
        m.tp.to_string(),
        m.fp.to_string(),
        m.tn.to_string(),
        m.fn_.to_string(),
    ]
}

pub fn write_metrics(path: &Path, m: &EvalMetrics) -> CliResult<()> {
    write_table(path, METRICS_HEADER, [metrics_row(m)])
}

/// One row per (repeat, fold) with the held-out metrics.
pub fn write_cv_folds(path: &Path, reports: &[(u64, CvReport)]) -> CliResult<()> {
    let mut header = vec!["seed", "fold"];
    header.extend_from_slice(METRICS_HEADER);
    header.extend_from_slice(&["train_bags", "val_bags", "test_bags"]);
    let rows = reports.iter().flat_map(|(seed, r)| {
        r.folds.iter().map(move |f| {
            let mut row = vec![seed.to_string(), f.fold.to_string()];
            row.extend(metrics_row(&f.metrics));
            row.extend([f.train_bags.len(), f.val_bags.len(), f.test_bags.len()].map(|n| n.to_string()));
            row
        })
    });
    write_table(path, &header, rows)
}

pub fn write_cv_summary(path: &Path, summary: &[(&str, Option<MeanStd>)]) -> CliResult<()> {
    write_table(
        path,
        &["metric", "mean", "std"],
        summary.iter().map(|(name, ms)| vec![name.to_string(), opt(ms.map(|m| m.mean)), opt(ms.map(|m| m.std))]),
    )
}

/// Which attention head to export.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadSelect {
    Index(usize),
    /// Arithmetic mean over heads.
    Mean,
}

impl FromStr for HeadSelect {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        if s == "mean" {
            return Ok(HeadSelect::Mean);
        }
        s.parse()
            .map(HeadSelect::Index)
            .map_err(|_| CliError::Config(format!("head {s:?} is neither an index nor \"mean\"")))
    }
}

/// Which query row of the cross-attention to export.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowSelect {
    /// The classification token (the gated weights for the baseline).
    Token,
    /// Global vector `k` in `1..=K`.
    Global(usize),
}

impl FromStr for RowSelect {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        if s == "token" {
            return Ok(RowSelect::Token);
        }
        s.strip_prefix("global")
            .map(|k| k.trim_start_matches([':', '-', '=']))
            .and_then(|k| k.parse().ok())
            .map(RowSelect::Global)
            .ok_or_else(|| CliError::Config(format!("row {s:?} is neither \"token\" nor \"global:<k>\"")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRow {
    pub bag_id: String,
    pub instance_id: String,
    pub score: f64,
}

/// Eval-mode attention of the selected query row over each bag's instances.
pub fn attention_rows(
    params: &ModelParams,
    dataset: &Dataset,
    head: HeadSelect,
    row: RowSelect,
) -> CliResult<Vec<AttentionRow>> {
    let c = &params.config;
    let heads = match c.architecture {
        Architecture::DgrMil => c.num_heads,
        Architecture::AbMil => 1,
    };
    if let HeadSelect::Index(h) = head {
        if h >= heads {
            return Err(CliError::Config(format!("head {h} out of range, model has {heads}")));
        }
    }
    if let RowSelect::Global(k) = row {
        if c.architecture == Architecture::AbMil {
            return Err(CliError::Config("the gated baseline has no global vectors".into()));
        }
        if k == 0 || k > c.num_globals {
            return Err(CliError::Config(format!("global {k} out of range 1..={}", c.num_globals)));
        }
    }
    let mut out = Vec::with_capacity(dataset.instance_count());
    for bag in &dataset.bags {
        let fwd = forward(bag, params, Mode::Eval)?;
        let per_head: Vec<&[f64]> = match row {
            RowSelect::Token => fwd.attention_scores.iter().map(Vec::as_slice).collect(),
            RowSelect::Global(k) => fwd.cross_attention.iter().map(|a: &Matrix| a.row(k)).collect(),
        };
        for i in 0..bag.len() {
            let score = match head {
                HeadSelect::Index(h) => per_head[h][i],
                HeadSelect::Mean => per_head.iter().map(|r| r[i]).sum::<f64>() / per_head.len() as f64,
            };
            out.push(AttentionRow { bag_id: bag.id.clone(), instance_id: bag.instance_ids[i].clone(), score });
        }
    }
    Ok(out)
}

pub fn write_attention(path: &Path, rows: &[AttentionRow]) -> CliResult<()> {
    write_table(
        path,
        &["bag_id", "instance_id", "score"],
        rows.iter().map(|r| vec![r.bag_id.clone(), r.instance_id.clone(), r.score.to_string()]),
    )
}

fn unit_name(u: RateUnit) -> &'static str {
    match u {
        RateUnit::Nats => "nats",
        RateUnit::Bits => "bits",
    }
}

/// Writes `rates.csv`, `rate_reduction.csv` (every ordered pair of positive
/// bags) and, when present, `gram.csv` (1-based global indices) into `dir`.
/// Every rates row carries ε² and the unit.
pub fn write_diversity(dir: &Path, report: &DiversityReport) -> CliResult<()> {
    let eps = report.config.epsilon_sq.to_string();
    let unit = unit_name(report.config.unit);
    write_table(
        &dir.join("rates.csv"),
        &["bag_id", "class", "n_instances", "rate", "epsilon_sq", "unit"],
        report.per_bag_rates.iter().map(|r| {
            vec![
                r.bag_id.clone(),
                r.class.to_string(),
                r.n_instances.to_string(),
                r.rate.to_string(),
                eps.clone(),
                unit.to_string(),
            ]
        }),
    )?;
    let ids = &report.positive_bags;
    let m = &report.rate_reduction_matrix;
    write_table(
        &dir.join("rate_reduction.csv"),
        &["bag_i", "bag_j", "delta_r"],
        ids.iter().enumerate().flat_map(|(i, a)| {
            ids.iter().enumerate().map(move |(j, b)| vec![a.clone(), b.clone(), m.get(i, j).to_string()])
        }),
    )?;
    if let Some(g) = &report.gram_similarity {
        let k = g.rows();
        write_table(
            &dir.join("gram.csv"),
            &["row", "col", "value"],
            (0..k).flat_map(|i| (0..k).map(move |j| vec![(i + 1).to_string(), (j + 1).to_string(), g.get(i, j).to_string()])),
        )?;
    }
    Ok(())
}
