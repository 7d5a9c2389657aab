//! SGD training with warmup-cosine learning rate and warmup-gated losses,
//! bag-level evaluation metrics and cross-validation.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::ops::ControlFlow;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{stratified_holdout, zscore_fit_apply, Dataset, FoldPlan};
use crate::error::{Error, Result};
use crate::model::{build_forward, forward, Architecture, ModelConfig, ModelParams, Mode, Weights};
use crate::numerics::{Graph, Matrix, Var};
use crate::objectives::{
    diversity_loss_graph, total_loss, triplet_loss_graph, CenterTracker, ObjectiveConfig, DEFAULT_MOMENTUM,
};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub base_lr: f64,
    pub warmup_lr_start: f64,
    pub lr_warmup_epochs: usize,
    pub weight_decay: f64,
    /// Heavy-ball momentum of the optimizer; 0 is plain SGD.
    pub momentum: f64,
    pub dropout: f64,
    pub seed: u64,
    pub architecture: Architecture,
    /// Number of global vectors K.
    pub num_globals: usize,
    pub num_heads: usize,
    /// Embedding width L; chosen from the input width when `None`.
    pub embed_dim: Option<usize>,
    pub center_momentum: f64,
    pub objective: ObjectiveConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            base_lr: 5e-4,
            warmup_lr_start: 1e-5,
            lr_warmup_epochs: 20,
            weight_decay: 1e-4,
            momentum: 0.0,
            dropout: ModelConfig::DEFAULT_DROPOUT,
            seed: 0,
            architecture: Architecture::DgrMil,
            num_globals: ModelConfig::DEFAULT_GLOBALS,
            num_heads: ModelConfig::DEFAULT_HEADS,
            embed_dim: None,
            center_momentum: DEFAULT_MOMENTUM,
            objective: ObjectiveConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.epochs > 0 && self.epochs < self.lr_warmup_epochs {
            return fail(format!("epochs {} shorter than lr warmup {}", self.epochs, self.lr_warmup_epochs));
        }
        for (name, v) in [("base_lr", self.base_lr), ("warmup_lr_start", self.warmup_lr_start)] {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("{name} {v} must be positive"));
            }
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return fail(format!("weight_decay {} must be nonnegative", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if !(0.0..1.0).contains(&self.center_momentum) {
            return fail(format!("center momentum {} outside [0, 1)", self.center_momentum));
        }
        self.objective.validate()
    }

    pub fn model_config(&self, input_dim: usize) -> ModelConfig {
        let mut c = ModelConfig::for_input_dim(input_dim).with_architecture(self.architecture);
        if let Some(l) = self.embed_dim {
            c.embed_dim = l;
            c.gated_hidden = (l / 2).max(1);
        }
        c.num_globals = self.num_globals;
        c.num_heads = self.num_heads;
        c.dropout = self.dropout;
        c
    }
}

/// Linear warmup from `warmup_lr_start` to `base_lr`, then half-cosine decay to 0.
pub fn lr_at(epoch: usize, config: &TrainConfig) -> f64 {
    let w = config.lr_warmup_epochs;
    if epoch < w {
        let t = epoch as f64 / w as f64;
        return config.warmup_lr_start + (config.base_lr - config.warmup_lr_start) * t;
    }
    let span = config.epochs.saturating_sub(w);
    if span == 0 {
        return config.base_lr;
    }
    let t = (epoch - w) as f64 / span as f64;
    config.base_lr * 0.5 * (1.0 + libm::cos(core::f64::consts::PI * t))
}

/// `p ← p − lr·(∂L/∂p + weight_decay·p)`. Nothing is updated if any gradient is non-finite.
pub fn sgd_step(params: &mut Weights<Matrix>, grads: &Weights<Matrix>, lr: f64, weight_decay: f64) -> Result<()> {
    let names = params.names();
    let bad = grads.leaves().iter().position(|g| !g.is_finite());
    if let Some(i) = bad {
        return Err(Error::NonFinite { param: names[i].clone() });
    }
    let grads = grads.leaves();
    let mut i = 0;
    params.for_each_mut(&mut |p: &mut Matrix| {
        let g = grads[i];
        for (pv, gv) in p.as_mut_slice().iter_mut().zip(g.as_slice()) {
            *pv -= lr * (gv + weight_decay * *pv);
        }
        i += 1;
    });
    Ok(())
}

/// Stochastic gradient descent with optional heavy-ball momentum:
/// `v ← μ·v + ∂L/∂p + weight_decay·p`, `p ← p − lr·v`. With `μ = 0` every
/// step is exactly [`sgd_step`].
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub weight_decay: f64,
    pub momentum: f64,
    velocity: Option<Weights<Matrix>>,
}

impl Sgd {
    pub fn new(weight_decay: f64, momentum: f64) -> Self {
        Sgd { weight_decay, momentum, velocity: None }
    }

    pub fn step(&mut self, params: &mut Weights<Matrix>, grads: &Weights<Matrix>, lr: f64) -> Result<()> {
        if self.momentum == 0.0 {
            return sgd_step(params, grads, lr, self.weight_decay);
        }
        let names = params.names();
        if let Some(i) = grads.leaves().iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite { param: names[i].clone() });
        }
        let velocity = self.velocity.get_or_insert_with(|| grads.map(&mut |g: &Matrix| Matrix::zeros(g.rows(), g.cols())));
        let (mu, wd) = (self.momentum, self.weight_decay);
        let grads = grads.leaves();
        let current = params.leaves();
        let mut i = 0;
        velocity.for_each_mut(&mut |v: &mut Matrix| {
            let terms = grads[i].as_slice().iter().zip(current[i].as_slice());
            for (vv, (gv, pv)) in v.as_mut_slice().iter_mut().zip(terms) {
                *vv = mu * *vv + gv + wd * pv;
            }
            i += 1;
        });
        let velocity = velocity.leaves();
        let mut i = 0;
        params.for_each_mut(&mut |p: &mut Matrix| {
            for (pv, vv) in p.as_mut_slice().iter_mut().zip(velocity[i].as_slice()) {
                *pv -= lr * vv;
            }
            i += 1;
        });
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalMetrics {
    pub accuracy: f64,
    pub f1: f64,
    /// `None` when only one class is present.
    pub auc: Option<f64>,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

/// Per-bag prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct BagScore {
    pub bag_id: String,
    pub label: u8,
    pub probability: f64,
    pub predicted: u8,
}

pub fn predict(params: &ModelParams, dataset: &Dataset) -> Result<Vec<BagScore>> {
    dataset
        .bags
        .iter()
        .map(|bag| {
            let out = forward(bag, params, Mode::Eval)?;
            Ok(BagScore {
                bag_id: bag.id.clone(),
                label: bag.label,
                probability: out.positive_probability(),
                predicted: out.predicted_label(),
            })
        })
        .collect()
}

/// Probability that a random positive outranks a random negative, ties counting ½.
pub fn auc(labels: &[u8], scores: &[f64]) -> Option<f64> {
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // average 1-based rank of the tie group
        let rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += rank * order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

pub fn metrics_from_scores(scores: &[BagScore]) -> EvalMetrics {
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for s in scores {
        match (s.label, s.predicted) {
            (1, 1) => tp += 1,
            (0, 1) => fp += 1,
            (0, _) => tn += 1,
            _ => fn_ += 1,
        }
    }
    let total = scores.len().max(1) as f64;
    let f1_den = 2 * tp + fp + fn_;
    let labels: Vec<u8> = scores.iter().map(|s| s.label).collect();
    let probs: Vec<f64> = scores.iter().map(|s| s.probability).collect();
    EvalMetrics {
        accuracy: (tp + tn) as f64 / total,
        f1: if f1_den == 0 { 0.0 } else { 2.0 * tp as f64 / f1_den as f64 },
        auc: auc(&labels, &probs),
        tp,
        fp,
        tn,
        fn_,
    }
}

pub fn evaluate(params: &ModelParams, dataset: &Dataset) -> Result<EvalMetrics> {
    if dataset.is_empty() {
        return Err(Error::Data(format!("dataset {} is empty", dataset.name)));
    }
    Ok(metrics_from_scores(&predict(params, dataset)?))
}

/// Mean losses over one epoch plus validation metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_ce: f64,
    pub loss_tri: f64,
    pub loss_div: f64,
    pub val: Option<EvalMetrics>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters after the epoch with the best validation AUC (the last
    /// epoch without a validation set).
    pub params: ModelParams,
    pub best_epoch: Option<usize>,
    pub history: Vec<EpochRecord>,
    pub tracker: CenterTracker,
}

/// Loss values of one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub total: f64,
    pub ce: f64,
    pub tri: f64,
    pub div: f64,
}

/// Builds the full objective for one bag and returns its root and component values.
/// With `update_centers`, centers move toward the bag's instance embeddings before the losses.
#[allow(clippy::too_many_arguments)]
pub(crate) fn build_objective(
    g: &mut Graph,
    w: &Weights<Var>,
    bag: &crate::model::Bag,
    model: &ModelConfig,
    objective: &ObjectiveConfig,
    tracker: &mut CenterTracker,
    update_centers: bool,
    epoch: usize,
    mode: &mut Mode<'_>,
) -> Result<(Var, StepLosses)> {
    let out = build_forward(g, &bag.features, w, model, mode)?;
    if update_centers {
        tracker.update_center(bag.label, g.value(out.instances))?;
    }
    let ce = g.cross_entropy(out.logits, bag.label as usize)?;
    let (tri, div) = match out.globals {
        Some(globals) => {
            let tri = triplet_loss_graph(g, globals, tracker, objective.margin)?;
            let div = diversity_loss_graph(g, globals, objective.jitter)?;
            (tri, Some(div))
        }
        None => (None, None),
    };
    let value = |g: &Graph, v: Option<Var>| v.map_or(0.0, |v| g.scalar(v));
    let losses = {
        let (ce_v, tri_v, div_v) = (g.scalar(ce), value(g, tri), value(g, div));
        StepLosses { total: total_loss(ce_v, tri_v, div_v, objective, epoch), ce: ce_v, tri: tri_v, div: div_v }
    };
    let mut root = ce;
    if epoch >= objective.warmup_epochs {
        for (term, lambda) in [(tri, objective.lambda_tri), (div, objective.lambda_div)] {
            if let Some(t) = term {
                if lambda != 0.0 {
                    let scaled = g.scale(t, lambda);
                    root = g.add(root, scaled)?;
                }
            }
        }
    }
    Ok((root, losses))
}

/// Eval-mode objective of one bag and its gradient for every weight, with
/// the centers held fixed at `tracker`.
pub fn objective_gradients(
    params: &ModelParams,
    bag: &crate::model::Bag,
    tracker: &CenterTracker,
    objective: &ObjectiveConfig,
    epoch: usize,
) -> Result<(StepLosses, Weights<Matrix>)> {
    let mut g = Graph::new();
    let w = params.weights.map(&mut |m| g.param(m.clone()));
    let mut fixed = tracker.clone();
    let (root, losses) =
        build_objective(&mut g, &w, bag, &params.config, objective, &mut fixed, false, epoch, &mut Mode::Eval)?;
    let mut grads = g.backward(root)?;
    let grad_weights = w.map(&mut |&v: &Var| grads.take(v).unwrap_or_else(|| Matrix::zeros(g.value(v).rows(), g.value(v).cols())));
    Ok((losses, grad_weights))
}

/// One gradient step on one bag.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    params: &mut ModelParams,
    bag: &crate::model::Bag,
    tracker: &mut CenterTracker,
    objective: &ObjectiveConfig,
    epoch: usize,
    lr: f64,
    optimizer: &mut Sgd,
    rng: &mut ChaCha8Rng,
) -> Result<StepLosses> {
    let mut g = Graph::new();
    // The weights move into the graph for the step and are moved back below.
    let mut lent = Vec::new();
    params.weights.for_each_mut(&mut |m: &mut Matrix| lent.push(core::mem::replace(m, Matrix::zeros(0, 0))));
    let mut lent = lent.into_iter();
    let w = params.weights.map(&mut |_| g.param(lent.next().expect("one value per leaf")));
    let result = step_gradients(&mut g, &w, bag, &params.config, tracker, objective, epoch, rng);
    let vars = w.leaves();
    let mut i = 0;
    params.weights.for_each_mut(&mut |m: &mut Matrix| {
        *m = g.take_value(*vars[i]);
        i += 1;
    });
    let (losses, grads) = result?;
    optimizer.step(&mut params.weights, &grads, lr)?;
    Ok(losses)
}

#[allow(clippy::too_many_arguments)]
fn step_gradients(
    g: &mut Graph,
    w: &Weights<Var>,
    bag: &crate::model::Bag,
    config: &ModelConfig,
    tracker: &mut CenterTracker,
    objective: &ObjectiveConfig,
    epoch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(StepLosses, Weights<Matrix>)> {
    let (root, losses) = build_objective(g, w, bag, config, objective, tracker, true, epoch, &mut Mode::Train(rng))?;
    if !losses.total.is_finite() || !g.scalar(root).is_finite() {
        return Err(Error::NonFiniteLoss { epoch, bag: bag.id.clone() });
    }
    let mut grads = g.backward(root)?;
    let grad_weights = w.map(&mut |&v: &Var| grads.take(v).unwrap_or_else(|| Matrix::zeros(g.value(v).rows(), g.value(v).cols())));
    Ok((losses, grad_weights))
}

/// Trains from a fresh initialization seeded by `config.seed`.
pub fn train(train_set: &Dataset, val_set: Option<&Dataset>, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let params = ModelParams::init(config.model_config(train_set.feature_dim), config.seed)?;
    train_with_observer(params, train_set, val_set, config, |_| ControlFlow::Continue(()))
}

/// Trains the supplied parameters, calling `on_epoch` after every epoch.
/// Returning `Break` stops training after that epoch; the learning-rate
/// schedule still follows `config.epochs`.
pub fn train_with_observer(
    mut params: ModelParams,
    train_set: &Dataset,
    val_set: Option<&Dataset>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord) -> ControlFlow<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let (neg, pos) = train_set.class_counts();
    if neg == 0 || pos == 0 {
        return Err(Error::Config(format!(
            "training set {} must contain both classes ({neg} negative, {pos} positive)",
            train_set.name
        )));
    }
    if train_set.feature_dim != params.config.input_dim {
        return Err(Error::Config(format!(
            "dataset has {} features, model expects {}",
            train_set.feature_dim, params.config.input_dim
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5e_ed0f_7a1e);
    let mut tracker = CenterTracker::new(params.config.embed_dim, config.center_momentum);
    let mut optimizer = Sgd::new(config.weight_decay, config.momentum);
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..config.epochs {
        let lr = lr_at(epoch, config);
        order.shuffle(&mut rng);
        let mut sums = StepLosses { total: 0.0, ce: 0.0, tri: 0.0, div: 0.0 };
        for &i in &order {
            let bag = &train_set.bags[i];
            let l = train_step(&mut params, bag, &mut tracker, &config.objective, epoch, lr, &mut optimizer, &mut rng)?;
            sums.total += l.total;
            sums.ce += l.ce;
            sums.tri += l.tri;
            sums.div += l.div;
        }
        let n = train_set.len() as f64;
        let val = val_set.map(|v| evaluate(&params, v)).transpose()?;
        let score = val.as_ref().map(|m| m.auc.unwrap_or(m.accuracy));
        let record = EpochRecord {
            epoch,
            lr,
            loss_total: sums.total / n,
            loss_ce: sums.ce / n,
            loss_tri: sums.tri / n,
            loss_div: sums.div / n,
            val,
        };
        let flow = on_epoch(&record);
        history.push(record);
        if let Some(s) = score {
            if best.as_ref().is_none_or(|(b, _, _)| s >= *b) {
                best = Some((s, epoch, params.clone()));
            }
        }
        if flow.is_break() {
            break;
        }
    }
    let (params, best_epoch) = match best {
        Some((_, e, p)) => (p, Some(e)),
        None => (params, history.len().checked_sub(1)),
    };
    Ok(TrainOutcome { params, best_epoch, history, tracker })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    pub metrics: EvalMetrics,
    pub train_bags: Vec<String>,
    pub val_bags: Vec<String>,
    pub test_bags: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and population standard deviation; `None` for no values.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(MeanStd { mean, std: libm::sqrt(var) })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub folds: Vec<FoldResult>,
    pub accuracy: MeanStd,
    pub f1: MeanStd,
    /// Over folds where AUC is defined.
    pub auc: Option<MeanStd>,
}

/// Fraction of each training fold held out for model selection.
pub const INNER_VALIDATION_FRACTION: f64 = 0.1;

/// Seed of fold `fold` derived from the run seed, independent of execution order.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(fold as u64 + 1)
}

/// Trains on the fold's training bags (minus an inner validation split) with
/// normalization fitted on the inner training part, and tests on the fold.
pub fn run_fold(dataset: &Dataset, plan: &FoldPlan, config: &TrainConfig, fold: usize) -> Result<FoldResult> {
    let (train_idx, test_idx) = plan.split(dataset, fold)?;
    let seed = fold_seed(config.seed, fold);
    let (inner_train, inner_val) = stratified_holdout(dataset, &train_idx, INNER_VALIDATION_FRACTION, seed);
    let (train_set, rest, _) =
        zscore_fit_apply(&dataset.subset(&inner_train), &[&dataset.subset(&inner_val), &dataset.subset(&test_idx)])?;
    let val = (!rest[0].is_empty()).then_some(&rest[0]);
    let fold_config = TrainConfig { seed, ..config.clone() };
    let outcome = train(&train_set, val, &fold_config)?;
    let metrics = evaluate(&outcome.params, &rest[1])?;
    let ids = |idx: &[usize]| idx.iter().map(|&i| dataset.bags[i].id.clone()).collect();
    Ok(FoldResult {
        fold,
        metrics,
        train_bags: ids(&inner_train),
        val_bags: ids(&inner_val),
        test_bags: ids(&test_idx),
    })
}

pub fn summarize(mut folds: Vec<FoldResult>) -> Result<CvReport> {
    folds.sort_by_key(|f| f.fold);
    let pick = |f: fn(&EvalMetrics) -> f64| folds.iter().map(|r| f(&r.metrics)).collect::<Vec<_>>();
    let accuracy = MeanStd::of(&pick(|m| m.accuracy)).ok_or_else(|| Error::Data("no folds".into()))?;
    let f1 = MeanStd::of(&pick(|m| m.f1)).ok_or_else(|| Error::Data("no folds".into()))?;
    let aucs: Vec<f64> = folds.iter().filter_map(|r| r.metrics.auc).collect();
    Ok(CvReport { auc: MeanStd::of(&aucs), folds, accuracy, f1 })
}

/// Runs every fold sequentially.
pub fn run_cv(dataset: &Dataset, plan: &FoldPlan, config: &TrainConfig) -> Result<CvReport> {
    let folds = (0..plan.k).map(|f| run_fold(dataset, plan, config, f)).collect::<Result<Vec<_>>>()?;
    summarize(folds)
}

#[cfg(test)]
mod tests;
