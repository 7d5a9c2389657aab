//! Repeated stratified cross-validation with folds trained concurrently.
//! Each fold's seed depends only on (repeat seed, fold), so the thread
//! schedule never changes results.

use rayon::prelude::*;

use dgrmil_core::data::{stratified_kfold, Dataset};
use dgrmil_core::train::{run_fold, summarize, CvReport, FoldResult, MeanStd, TrainConfig};

use crate::error::{CliError, CliResult};

pub fn run_cv_parallel(dataset: &Dataset, k: usize, config: &TrainConfig) -> CliResult<CvReport> {
    let plan = stratified_kfold(dataset, k, config.seed)?;
    let folds = (0..k)
        .into_par_iter()
        .map(|f| run_fold(dataset, &plan, config, f))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(summarize(folds)?)
}

#[derive(Debug, Clone)]
pub struct RepeatedCv {
    /// Per repeat: its seed and report.
    pub repeats: Vec<(u64, CvReport)>,
    /// Pooled over every fold of every repeat.
    pub accuracy: MeanStd,
    pub f1: MeanStd,
    pub auc: Option<MeanStd>,
}

/// `k`-fold CV once per seed; fold plan and training both use that seed.
pub fn run_repeated_cv(dataset: &Dataset, k: usize, seeds: &[u64], config: &TrainConfig) -> CliResult<RepeatedCv> {
    if seeds.is_empty() {
        return Err(CliError::Config("cross-validation needs at least one seed".into()));
    }
    let plans = seeds.iter().map(|&s| stratified_kfold(dataset, k, s)).collect::<Result<Vec<_>, _>>()?;
    let jobs: Vec<(usize, usize)> = (0..seeds.len()).flat_map(|r| (0..k).map(move |f| (r, f))).collect();
    let results: Vec<FoldResult> = jobs
        .par_iter()
        .map(|&(r, f)| run_fold(dataset, &plans[r], &TrainConfig { seed: seeds[r], ..config.clone() }, f))
        .collect::<Result<Vec<_>, _>>()?;
    let mut repeats = Vec::with_capacity(seeds.len());
    let mut chunks = results.into_iter();
    for &seed in seeds {
        let folds: Vec<FoldResult> = chunks.by_ref().take(k).collect();
        repeats.push((seed, summarize(folds)?));
    }
    let all: Vec<&FoldResult> = repeats.iter().flat_map(|(_, r)| &r.folds).collect();
    let pick = |f: fn(&FoldResult) -> Option<f64>| all.iter().filter_map(|r| f(r)).collect::<Vec<_>>();
    let accuracy = MeanStd::of(&pick(|r| Some(r.metrics.accuracy))).expect("at least one fold");
    let f1 = MeanStd::of(&pick(|r| Some(r.metrics.f1))).expect("at least one fold");
    let auc = MeanStd::of(&pick(|r| r.metrics.auc));
    Ok(RepeatedCv { repeats, accuracy, f1, auc })
}
