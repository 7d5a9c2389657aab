//! Bag collections, synthetic diverse-bag generation, stratified folds and
//! feature standardization.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::Bag;
use crate::numerics::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub feature_dim: usize,
    pub bags: Vec<Bag>,
}

impl Dataset {
    /// Validates every bag, a shared feature width and unique bag ids.
    pub fn new(name: impl Into<String>, feature_dim: usize, bags: Vec<Bag>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for bag in &bags {
            bag.validate()?;
            if bag.feature_dim() != feature_dim {
                return Err(Error::Data(format!(
                    "bag {} has {} features, dataset has {feature_dim}",
                    bag.id,
                    bag.feature_dim()
                )));
            }
            if !seen.insert(bag.id.as_str()) {
                return Err(Error::Data(format!("duplicate bag id {}", bag.id)));
            }
        }
        Ok(Dataset { name: name.into(), feature_dim, bags })
    }

    pub fn len(&self) -> usize {
        self.bags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bags.is_empty()
    }

    /// `(negative, positive)` bag counts.
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.bags.iter().filter(|b| b.label == 1).count();
        (self.bags.len() - pos, pos)
    }

    pub fn instance_count(&self) -> usize {
        self.bags.iter().map(Bag::len).sum()
    }

    /// Bags at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            feature_dim: self.feature_dim,
            bags: indices.iter().map(|&i| self.bags[i].clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_pos_bags: usize,
    pub n_neg_bags: usize,
    /// Inclusive range of instances per bag.
    pub instances_per_bag: (usize, usize),
    pub feature_dim: usize,
    pub n_pos_clusters: usize,
    /// Fraction of instances in a positive bag drawn from its cluster.
    pub pos_fraction: f64,
    /// Distance between any two of the cluster means and the background mean.
    pub cluster_separation: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_pos_bags: 50,
            n_neg_bags: 50,
            instances_per_bag: (100, 100),
            feature_dim: 10,
            n_pos_clusters: 3,
            pos_fraction: 0.05,
            cluster_separation: 4.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.n_pos_clusters == 0 {
            return fail("n_pos_clusters must be at least 1".into());
        }
        if !(self.pos_fraction > 0.0 && self.pos_fraction <= 1.0) {
            return fail(format!("pos_fraction {} outside (0, 1]", self.pos_fraction));
        }
        let (lo, hi) = self.instances_per_bag;
        if lo == 0 || lo > hi {
            return fail(format!("instances per bag range {lo}..={hi} is empty or zero"));
        }
        if self.feature_dim <= self.n_pos_clusters {
            return fail(format!(
                "feature_dim {} must exceed n_pos_clusters {} to separate all clusters from the background",
                self.feature_dim, self.n_pos_clusters
            ));
        }
        if !(self.cluster_separation >= 0.0 && self.cluster_separation.is_finite()) {
            return fail(format!("cluster_separation {} must be nonnegative", self.cluster_separation));
        }
        Ok(())
    }

    /// Cluster of the `i`-th positive bag (round-robin).
    pub fn cluster_of(&self, pos_bag_index: usize) -> usize {
        pos_bag_index % self.n_pos_clusters
    }

    /// Number of cluster instances in a positive bag of size `n`.
    pub fn positives_in(&self, n: usize) -> usize {
        (libm::round(self.pos_fraction * n as f64) as usize).clamp(1, n)
    }

    /// Mean of cluster `c`: `(s/√2)(e_{c+1} − e₀)`, so the background (origin)
    /// and all cluster means are pairwise `s` apart.
    pub fn cluster_mean(&self, c: usize) -> Vec<f64> {
        let a = self.cluster_separation / core::f64::consts::SQRT_2;
        let mut m = vec![0.0; self.feature_dim];
        m[0] = -a;
        m[c + 1] = a;
        m
    }
}

/// Positive bags `pos-NNNN` (cluster assigned round-robin) followed by
/// negative bags `neg-NNNN`; all covariances are the identity.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.feature_dim;
    let means: Vec<Vec<f64>> = (0..spec.n_pos_clusters).map(|c| spec.cluster_mean(c)).collect();
    let mut bags = Vec::with_capacity(spec.n_pos_bags + spec.n_neg_bags);
    let (lo, hi) = spec.instances_per_bag;
    for (label, count) in [(1u8, spec.n_pos_bags), (0, spec.n_neg_bags)] {
        for i in 0..count {
            let n = rng.random_range(lo..=hi);
            let mut labels = vec![0u8; n];
            if label == 1 {
                let k = spec.positives_in(n);
                labels[..k].iter_mut().for_each(|l| *l = 1);
                labels.shuffle(&mut rng);
            }
            let mean = (label == 1).then(|| &means[spec.cluster_of(i)]);
            let mut features = Matrix::zeros(n, d);
            for r in 0..n {
                for c in 0..d {
                    let z: f64 = rng.sample(StandardNormal);
                    let shift = match mean {
                        Some(m) if labels[r] == 1 => m[c],
                        _ => 0.0,
                    };
                    features.set(r, c, z + shift);
                }
            }
            let prefix = if label == 1 { "pos" } else { "neg" };
            let bag = Bag::new(format!("{prefix}-{i:04}"), features, label)?.with_instance_labels(labels)?;
            bags.push(bag);
        }
    }
    Dataset::new("synthetic", d, bags)
}

/// Assignment of bags to cross-validation folds.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub assignments: BTreeMap<String, usize>,
}

impl FoldPlan {
    /// Dataset indices `(train, test)` for fold `fold`, in dataset order.
    pub fn split(&self, dataset: &Dataset, fold: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (i, bag) in dataset.bags.iter().enumerate() {
            match self.assignments.get(&bag.id) {
                Some(&f) if f == fold => test.push(i),
                Some(_) => train.push(i),
                None => return Err(Error::Data(format!("bag {} missing from fold plan", bag.id))),
            }
        }
        Ok((train, test))
    }
}

/// Shuffles each class with `seed` and deals its bags round-robin over the
/// folds, the positive class continuing where the negative class stopped.
pub fn stratified_kfold(dataset: &Dataset, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Config(format!("fold count {k} must be at least 2")));
    }
    let (neg, pos) = dataset.class_counts();
    if neg < k || pos < k {
        return Err(Error::Data(format!("{k} folds need at least {k} bags per class, have {neg} negative and {pos} positive")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignments = BTreeMap::new();
    let mut next = 0;
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..dataset.len()).filter(|&i| dataset.bags[i].label == class).collect();
        idx.shuffle(&mut rng);
        for i in idx {
            assignments.insert(dataset.bags[i].id.clone(), next % k);
            next += 1;
        }
    }
    Ok(FoldPlan { k, seed, assignments })
}

/// Stratified split of `indices` into `(train, held_out)` with about
/// `fraction` of each class held out (at least one per class when possible).
pub fn stratified_holdout(dataset: &Dataset, indices: &[usize], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut held = Vec::new();
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = indices.iter().copied().filter(|&i| dataset.bags[i].label == class).collect();
        idx.shuffle(&mut rng);
        let take = if idx.len() >= 2 { (libm::round(fraction * idx.len() as f64) as usize).clamp(1, idx.len() - 1) } else { 0 };
        held.extend_from_slice(&idx[..take]);
        train.extend_from_slice(&idx[take..]);
    }
    train.sort_unstable();
    held.sort_unstable();
    (train, held)
}

/// Per-feature standardization statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ZScore {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub const STD_FLOOR: f64 = 1e-8;

impl ZScore {
    /// Mean and population standard deviation over all instances, std floored at 1e-8.
    pub fn fit(train: &Dataset) -> Result<Self> {
        let n = train.instance_count();
        if n == 0 {
            return Err(Error::Data("cannot fit normalization on an empty dataset".into()));
        }
        let d = train.feature_dim;
        let mut mean = vec![0.0; d];
        for bag in &train.bags {
            for r in 0..bag.len() {
                mean.iter_mut().zip(bag.features.row(r)).for_each(|(m, v)| *m += v);
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for bag in &train.bags {
            for r in 0..bag.len() {
                for (c, v) in bag.features.row(r).iter().enumerate() {
                    let dv = v - mean[c];
                    var[c] += dv * dv;
                }
            }
        }
        let std = var.iter().map(|v| libm::sqrt(v / n as f64).max(STD_FLOOR)).collect();
        Ok(ZScore { mean, std })
    }

    pub fn apply(&self, dataset: &Dataset) -> Result<Dataset> {
        if dataset.feature_dim != self.mean.len() {
            return Err(Error::Data(format!(
                "normalization fitted on {} features, dataset has {}",
                self.mean.len(),
                dataset.feature_dim
            )));
        }
        let mut out = dataset.clone();
        for bag in &mut out.bags {
            for r in 0..bag.features.rows() {
                for (c, v) in bag.features.row_mut(r).iter_mut().enumerate() {
                    *v = (*v - self.mean[c]) / self.std[c];
                }
            }
        }
        Ok(out)
    }
}

/// Fits statistics on `train` and applies them to `train` and every entry of `others`.
pub fn zscore_fit_apply(train: &Dataset, others: &[&Dataset]) -> Result<(Dataset, Vec<Dataset>, ZScore)> {
    let stats = ZScore::fit(train)?;
    let normalized = stats.apply(train)?;
    let rest = others.iter().map(|d| stats.apply(d)).collect::<Result<Vec<_>>>()?;
    Ok((normalized, rest, stats))
}
