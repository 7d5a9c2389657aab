//! Training losses: cross-entropy, triplet alignment against momentum bag
//! centers, log-determinant diversity, and their warmup-gated combination.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numerics::{cross_entropy_value, Graph, Matrix, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveConfig {
    pub lambda_tri: f64,
    pub lambda_div: f64,
    /// Triplet hinge margin.
    pub margin: f64,
    /// Diagonal jitter added to the Gram matrix before the log-determinant.
    pub jitter: f64,
    /// Epochs trained on cross-entropy alone.
    pub warmup_epochs: usize,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig { lambda_tri: 0.1, lambda_div: 0.1, margin: 0.3, jitter: 1e-10, warmup_epochs: 20 }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !(finite_nonneg(self.lambda_tri) && finite_nonneg(self.lambda_div) && finite_nonneg(self.margin)) {
            return Err(Error::Config(format!(
                "loss weights and margin must be nonnegative (lambda_tri {}, lambda_div {}, margin {})",
                self.lambda_tri, self.lambda_div, self.margin
            )));
        }
        if !(self.jitter > 0.0 && self.jitter.is_finite()) {
            return Err(Error::Config(format!("jitter {} must be positive", self.jitter)));
        }
        Ok(())
    }
}

/// Momentum-updated mean embeddings of positive and negative bags.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterTracker {
    pub pos_center: Vec<f64>,
    pub neg_center: Vec<f64>,
    pub momentum: f64,
    pub pos_initialized: bool,
    pub neg_initialized: bool,
}

pub const DEFAULT_MOMENTUM: f64 = 0.4;

impl CenterTracker {
    pub fn new(dim: usize, momentum: f64) -> Self {
        CenterTracker {
            pos_center: vec![0.0; dim],
            neg_center: vec![0.0; dim],
            momentum,
            pos_initialized: false,
            neg_initialized: false,
        }
    }

    pub fn is_ready(&self) -> bool {
        self.pos_initialized && self.neg_initialized
    }

    /// Moves the center of the bag's class toward the mean of its instance
    /// embeddings; the first update assigns the mean directly.
    pub fn update_center(&mut self, bag_label: u8, instance_embeddings: &Matrix) -> Result<()> {
        if instance_embeddings.rows() == 0 {
            return Err(Error::Data("center update with an empty bag".into()));
        }
        if instance_embeddings.cols() != self.pos_center.len() {
            return Err(Error::dims(
                "update_center",
                instance_embeddings.shape(),
                (instance_embeddings.rows(), self.pos_center.len()),
            ));
        }
        let mean = instance_embeddings.mean_rows();
        let (center, initialized) = if bag_label == 1 {
            (&mut self.pos_center, &mut self.pos_initialized)
        } else {
            (&mut self.neg_center, &mut self.neg_initialized)
        };
        if *initialized {
            momentum_update(center, mean.as_slice(), self.momentum);
        } else {
            center.copy_from_slice(mean.as_slice());
            *initialized = true;
        }
        Ok(())
    }
}

/// `c ← m·c + (1 − m)·b`.
pub fn momentum_update(center: &mut [f64], batch_mean: &[f64], m: f64) {
    for (c, &b) in center.iter_mut().zip(batch_mean) {
        *c = m * *c + (1.0 - m) * b;
    }
}

/// Triplet loss value; `skipped` is set when a center is not yet initialized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripletLoss {
    pub value: f64,
    pub skipped: bool,
}

/// `Σ_k [d(g_k, pos) − d(g_k, neg) + μ]₊` with `d = 1 − cos`, on a graph.
/// Returns `None` when a center is uninitialized.
pub fn triplet_loss_graph(g: &mut Graph, globals: Var, tracker: &CenterTracker, margin: f64) -> Result<Option<Var>> {
    if !tracker.is_ready() {
        return Ok(None);
    }
    let l = g.value(globals).cols();
    if tracker.pos_center.len() != l {
        return Err(Error::dims("triplet_loss", g.value(globals).shape(), (1, tracker.pos_center.len())));
    }
    let pos = unit(&tracker.pos_center)?;
    let neg = unit(&tracker.neg_center)?;
    // d₊ − d₋ = cos(g, neg) − cos(g, pos)
    let diff = Matrix::from_fn(l, 1, |r, _| neg[r] - pos[r]);
    let diff = g.constant(diff);
    let normed = g.row_normalize(globals)?;
    let gap = g.matmul(normed, diff)?;
    let shifted = g.add_scalar(gap, margin);
    let hinge = g.relu(shifted);
    Ok(Some(g.sum(hinge)))
}

fn unit(v: &[f64]) -> Result<Vec<f64>> {
    let n = crate::numerics::linalg::norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::DegenerateVector { op: "triplet_loss" });
    }
    Ok(v.iter().map(|x| x / n).collect())
}

pub fn triplet_loss(globals: &Matrix, tracker: &CenterTracker, margin: f64) -> Result<TripletLoss> {
    let mut g = Graph::new();
    let v = g.constant(globals.clone());
    Ok(match triplet_loss_graph(&mut g, v, tracker, margin)? {
        Some(loss) => TripletLoss { value: g.scalar(loss), skipped: false },
        None => TripletLoss { value: 0.0, skipped: true },
    })
}

/// `−log det(ĜĜᵀ + εI)` with `Ĝ` the row-normalized globals, on a graph.
pub fn diversity_loss_graph(g: &mut Graph, globals: Var, epsilon: f64) -> Result<Var> {
    let k = g.value(globals).rows();
    if k == 0 {
        return Err(Error::Config("diversity loss needs at least one global vector".into()));
    }
    let normed = g.row_normalize(globals)?;
    let gram = g.matmul_nt(normed, normed)?;
    let jittered = if epsilon == 0.0 {
        gram
    } else {
        let jitter = g.constant(Matrix::from_diag(&vec![epsilon; k]));
        g.add(gram, jitter)?
    };
    let logdet = g.logdet_psd(jittered)?;
    Ok(g.scale(logdet, -1.0))
}

pub fn diversity_loss(globals: &Matrix, epsilon: f64) -> Result<f64> {
    let mut g = Graph::new();
    let v = g.constant(globals.clone());
    let loss = diversity_loss_graph(&mut g, v, epsilon)?;
    Ok(g.scalar(loss))
}

/// `−log softmax(logits)[label]`.
pub fn cross_entropy(logits: &[f64], label: u8) -> f64 {
    cross_entropy_value(logits, label as usize)
}

/// Cross-entropy alone during warmup, the weighted sum afterwards.
pub fn total_loss(ce: f64, tri: f64, div: f64, config: &ObjectiveConfig, epoch: usize) -> f64 {
    if epoch < config.warmup_epochs {
        ce
    } else {
        ce + config.lambda_tri * tri + config.lambda_div * div
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::linalg::cosine_similarity;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tracker(pos: &[f64], neg: &[f64]) -> CenterTracker {
        let mut t = CenterTracker::new(pos.len(), DEFAULT_MOMENTUM);
        t.update_center(1, &Matrix::row_vector(pos)).unwrap();
        t.update_center(0, &Matrix::row_vector(neg)).unwrap();
        t
    }

    #[test]
    fn momentum_update_example() {
        let mut t = tracker(&[1.0, 1.0], &[0.0, 1.0]);
        let neg_before = t.neg_center.clone();
        t.update_center(1, &Matrix::zeros(3, 2)).unwrap();
        assert!((t.pos_center[0] - 0.4).abs() < 1e-15 && (t.pos_center[1] - 0.4).abs() < 1e-15);
        assert_eq!(t.neg_center, neg_before);
    }

    #[test]
    fn negative_bag_leaves_positive_center() {
        let mut t = tracker(&[0.3, -0.7], &[1.0, 2.0]);
        let before: Vec<u64> = t.pos_center.iter().map(|v| v.to_bits()).collect();
        t.update_center(0, &Matrix::filled(2, 2, 5.0)).unwrap();
        let after: Vec<u64> = t.pos_center.iter().map(|v| v.to_bits()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn first_update_assigns_mean() {
        let mut t = CenterTracker::new(2, DEFAULT_MOMENTUM);
        let x = Matrix::from_rows(&[&[1.0, 4.0], &[3.0, 0.0]]).unwrap();
        t.update_center(1, &x).unwrap();
        assert_eq!(t.pos_center, vec![2.0, 2.0]);
        assert!(t.pos_initialized && !t.neg_initialized);
    }

    #[test]
    fn triplet_inactive_hinge() {
        let t = tracker(&[1.0, 0.0], &[-1.0, 0.0]);
        let g = Matrix::row_vector(&[2.0, 0.0]);
        assert_eq!(triplet_loss(&g, &t, 0.2).unwrap().value, 0.0);
    }

    #[test]
    fn triplet_hinge_arithmetic() {
        // d₊ = 0.5 (cos 0.5), d₋ = 0.3 (cos 0.7), μ = 0.2 → 0.4
        let g = [1.0, 0.0];
        let pos = [0.5, libm::sqrt(0.75)];
        let neg = [0.7, libm::sqrt(1.0 - 0.49)];
        let t = tracker(&pos, &neg);
        let v = triplet_loss(&Matrix::row_vector(&g), &t, 0.2).unwrap().value;
        assert!((v - 0.4).abs() < 1e-12, "{v}");
    }

    #[test]
    fn triplet_equal_centers_zero_margin() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let t = tracker(&c, &c);
        let g = Matrix::from_fn(3, 4, |_, _| rng.random_range(-1.0..1.0));
        assert_eq!(triplet_loss(&g, &t, 0.0).unwrap().value, 0.0);
    }

    #[test]
    fn triplet_skipped_until_both_centers() {
        let mut t = CenterTracker::new(2, DEFAULT_MOMENTUM);
        t.update_center(1, &Matrix::row_vector(&[1.0, 0.0])).unwrap();
        let r = triplet_loss(&Matrix::row_vector(&[1.0, 1.0]), &t, 0.3).unwrap();
        assert_eq!(r, TripletLoss { value: 0.0, skipped: true });
        let t = tracker(&[1.0, 0.0], &[0.0, 1.0]);
        assert!(triplet_loss(&Matrix::zeros(1, 2), &t, 0.3).is_err());
    }

    #[test]
    fn triplet_matches_scalar_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = |rng: &mut ChaCha8Rng| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let t = tracker(&r(&mut rng), &r(&mut rng));
        let g = Matrix::from_fn(4, 5, |_, _| rng.random_range(-1.0..1.0));
        let want: f64 = (0..4)
            .map(|k| {
                let dp = 1.0 - cosine_similarity(g.row(k), &t.pos_center).unwrap();
                let dn = 1.0 - cosine_similarity(g.row(k), &t.neg_center).unwrap();
                (dp - dn + 0.3).max(0.0)
            })
            .sum();
        assert!((triplet_loss(&g, &t, 0.3).unwrap().value - want).abs() < 1e-12);
    }

    #[test]
    fn diversity_examples() {
        let eye = Matrix::from_rows(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]).unwrap();
        assert!(diversity_loss(&eye, 0.0).unwrap().abs() < 1e-15);
        let cos_half = Matrix::from_rows(&[&[1.0, 0.0], &[0.5, libm::sqrt(0.75)]]).unwrap();
        let v = diversity_loss(&cos_half, 0.0).unwrap();
        assert!((v + libm::log(0.75)).abs() < 1e-12 && (v - 0.2877).abs() < 1e-4);
        let same = Matrix::from_rows(&[&[0.6, 0.8], &[0.6, 0.8]]).unwrap();
        let eps = 1e-10;
        let v = diversity_loss(&same, eps).unwrap();
        let want = -libm::log(2.0 * eps + eps * eps);
        assert!((v - want).abs() / want < 1e-4 && (v - 22.33).abs() < 0.01, "{v}");
        assert!(diversity_loss(&Matrix::zeros(2, 3), eps).is_err());
    }

    #[test]
    fn diversity_rescaling_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Matrix::from_fn(3, 6, |_, _| rng.random_range(-1.0..1.0));
        let mut scaled = g.clone();
        scaled.row_mut(1).iter_mut().for_each(|v| *v *= 3.0);
        let a = diversity_loss(&g, 1e-10).unwrap();
        let b = diversity_loss(&scaled, 1e-10).unwrap();
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn cross_entropy_examples() {
        let ln2 = core::f64::consts::LN_2;
        assert!((cross_entropy(&[0.0, 0.0], 0) - ln2).abs() < 1e-15);
        assert!((cross_entropy(&[0.0, 0.0], 1) - ln2).abs() < 1e-15);
        let v = cross_entropy(&[30.0, -30.0], 0);
        assert!(v.is_finite() && v < 1e-20);
        let e1 = core::f64::consts::E;
        let want = -libm::log(e1 * e1 / (e1 + e1 * e1));
        assert!((cross_entropy(&[1.0, 2.0], 1) - want).abs() < 1e-14 && (want - 0.3133).abs() < 1e-4);
    }

    #[test]
    fn total_loss_gating() {
        let c = ObjectiveConfig::default();
        assert_eq!(total_loss(0.7, 5.0, 9.0, &c, 5), 0.7);
        assert!((total_loss(1.0, 2.0, 3.0, &c, 20) - 1.5).abs() < 1e-15);
        let zero = ObjectiveConfig { lambda_tri: 0.0, lambda_div: 0.0, ..c };
        for epoch in [0, 19, 20, 199] {
            assert_eq!(total_loss(0.25, 2.0, 3.0, &zero, epoch), 0.25);
        }
    }

    #[test]
    fn config_validation() {
        assert!(ObjectiveConfig::default().validate().is_ok());
        assert!(ObjectiveConfig { jitter: 0.0, ..Default::default() }.validate().is_err());
        assert!(ObjectiveConfig { lambda_div: -1.0, ..Default::default() }.validate().is_err());
    }
}
