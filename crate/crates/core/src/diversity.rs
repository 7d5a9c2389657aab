//! Rate-distortion diversity measures (coding rate, subspace rate, rate
//! reduction) and Gram-matrix similarity of vector sets.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::Bag;
use crate::numerics::linalg::logdet_spd;
use crate::numerics::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateUnit {
    Nats,
    Bits,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateConfig {
    /// Tolerable mean squared distortion ε².
    pub epsilon_sq: f64,
    pub unit: RateUnit,
}

impl Default for RateConfig {
    fn default() -> Self {
        RateConfig { epsilon_sq: 0.25, unit: RateUnit::Nats }
    }
}

impl RateConfig {
    pub fn new(epsilon_sq: f64) -> Result<Self> {
        let c = RateConfig { epsilon_sq, ..Default::default() };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon_sq > 0.0 && self.epsilon_sq.is_finite()) {
            return Err(Error::Config(format!("epsilon_sq {} must be positive", self.epsilon_sq)));
        }
        Ok(())
    }

    fn from_nats(&self, v: f64) -> f64 {
        match self.unit {
            RateUnit::Nats => v,
            RateUnit::Bits => v / core::f64::consts::LN_2,
        }
    }
}

/// `½ log det(I + d/(nε²) X Xᵀ)` for a d x n matrix whose columns are samples.
/// The determinant is taken in whichever of the d x d or n x n forms is smaller.
/// Columns are put in lexicographic order first, so the result does not
/// depend on sample order even in the last bit.
pub fn coding_rate(x: &Matrix, config: &RateConfig) -> Result<f64> {
    config.validate()?;
    let (d, n) = x.shape();
    if d == 0 || n == 0 {
        return Err(Error::Data(format!("coding rate of a {d}x{n} matrix")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        (0..d).map(|r| x.get(r, a).total_cmp(&x.get(r, b))).find(|o| o.is_ne()).unwrap_or(core::cmp::Ordering::Equal)
    });
    let x = &x.select_cols(&order);
    let scale = d as f64 / (n as f64 * config.epsilon_sq);
    let gram = if d <= n { x.matmul_nt(x)? } else { x.matmul_tn(x)? };
    let m = Matrix::from_fn(gram.rows(), gram.cols(), |r, c| {
        let v = scale * 0.5 * (gram.get(r, c) + gram.get(c, r));
        if r == c {
            1.0 + v
        } else {
            v
        }
    });
    Ok(config.from_nats(0.5 * logdet_spd(&m)?))
}

fn check_indices(set: &[usize], n: usize, what: &str) -> Result<()> {
    if set.is_empty() {
        return Err(Error::Data(format!("{what} index set is empty")));
    }
    if let Some(&bad) = set.iter().find(|&&i| i >= n) {
        return Err(Error::Data(format!("{what} index {bad} out of range for {n} columns")));
    }
    Ok(())
}

/// Coding rate of the columns `set` of `x`, normalized by `|set|`.
pub fn subspace_rate(x: &Matrix, set: &[usize], config: &RateConfig) -> Result<f64> {
    check_indices(set, x.cols(), "subspace")?;
    coding_rate(&x.select_cols(set), config)
}

/// `R(X[:, C1 ∪ C2]) − Σᵢ |Cᵢ|/n' · R(X[:, Cᵢ])` with `n' = |C1| + |C2|`.
pub fn rate_reduction(x: &Matrix, c1: &[usize], c2: &[usize], config: &RateConfig) -> Result<f64> {
    check_indices(c1, x.cols(), "first")?;
    check_indices(c2, x.cols(), "second")?;
    let mut union: Vec<usize> = c1.iter().chain(c2).copied().collect();
    union.sort_unstable();
    if union.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Data("index sets overlap or repeat a column".into()));
    }
    let total = union.len() as f64;
    let whole = subspace_rate(x, &union, config)?;
    let r1 = subspace_rate(x, c1, config)?;
    let r2 = subspace_rate(x, c2, config)?;
    Ok(whole - (c1.len() as f64 / total * r1 + c2.len() as f64 / total * r2))
}

/// Rate reduction between two sample sets given as rows (instances x features).
pub fn pairwise_rate_reduction(a: &Matrix, b: &Matrix, config: &RateConfig) -> Result<f64> {
    let x = Matrix::vstack(&[a, b])?.transpose();
    let first: Vec<usize> = (0..a.rows()).collect();
    let second: Vec<usize> = (a.rows()..a.rows() + b.rows()).collect();
    rate_reduction(&x, &first, &second, config)
}

/// `G Gᵀ`, over unit-normalized rows when `normalize` is set.
pub fn gram_similarity(g: &Matrix, normalize: bool) -> Result<Matrix> {
    if g.rows() == 0 {
        return Err(Error::Data("gram similarity of an empty set".into()));
    }
    let src = if normalize {
        let mut m = g.clone();
        for r in 0..m.rows() {
            let row = m.row_mut(r);
            let n = crate::numerics::linalg::norm(row);
            if n == 0.0 || !n.is_finite() {
                return Err(Error::DegenerateVector { op: "gram_similarity" });
            }
            row.iter_mut().for_each(|v| *v /= n);
        }
        m
    } else {
        g.clone()
    };
    let mut out = src.matmul_nt(&src)?;
    for r in 0..out.rows() {
        for c in 0..r {
            let v = 0.5 * (out.get(r, c) + out.get(c, r));
            out.set(r, c, v);
            out.set(c, r, v);
        }
        if normalize {
            out.set(r, r, 1.0);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BagRate {
    pub bag_id: String,
    /// Instance class whose samples were coded.
    pub class: u8,
    pub n_instances: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiversityReport {
    pub config: RateConfig,
    pub per_bag_rates: Vec<BagRate>,
    /// Bags indexing `rate_reduction_matrix`: those with positive instances.
    pub positive_bags: Vec<String>,
    pub rate_reduction_matrix: Matrix,
    pub gram_similarity: Option<Matrix>,
}

/// Instances of `bag` whose instance label equals `class`.
pub fn class_instances(bag: &Bag, class: u8) -> Result<Matrix> {
    let labels = bag
        .instance_labels
        .as_ref()
        .ok_or_else(|| Error::Data(format!("bag {} has no instance labels", bag.id)))?;
    let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
    Ok(bag.features.select_rows(&idx))
}

impl DiversityReport {
    /// Within-class coding rate of every bag, and pairwise rate reduction
    /// between the positive-instance sets of bags that have any.
    pub fn build(bags: &[Bag], vectors: Option<&Matrix>, config: RateConfig) -> Result<Self> {
        Self::build_with(bags, vectors, config, |sets, config| {
            let mut cells = Vec::new();
            for i in 0..sets.len() {
                for j in i + 1..sets.len() {
                    cells.push(pairwise_rate_reduction(&sets[i], &sets[j], config)?);
                }
            }
            Ok(cells)
        })
    }

    /// As [`DiversityReport::build`], with the upper-triangle cells (row-major,
    /// `i < j`) computed by `pairs`, which may evaluate them concurrently.
    pub fn build_with(
        bags: &[Bag],
        vectors: Option<&Matrix>,
        config: RateConfig,
        pairs: impl FnOnce(&[Matrix], &RateConfig) -> Result<Vec<f64>>,
    ) -> Result<Self> {
        config.validate()?;
        let mut per_bag_rates = Vec::new();
        let mut positive_bags = Vec::new();
        let mut positive_sets = Vec::new();
        for bag in bags {
            for class in [0u8, 1] {
                let x = class_instances(bag, class)?;
                if x.rows() == 0 {
                    continue;
                }
                let rate = coding_rate(&x.transpose(), &config)?;
                per_bag_rates.push(BagRate { bag_id: bag.id.clone(), class, n_instances: x.rows(), rate });
                if class == 1 {
                    positive_bags.push(bag.id.clone());
                    positive_sets.push(x);
                }
            }
        }
        let m = positive_sets.len();
        let cells = pairs(&positive_sets, &config)?;
        if cells.len() != m * m.saturating_sub(1) / 2 {
            return Err(Error::Data(format!("expected {} rate-reduction cells, got {}", m * m.saturating_sub(1) / 2, cells.len())));
        }
        let mut matrix = Matrix::zeros(m, m);
        let mut it = cells.into_iter();
        for i in 0..m {
            for j in i + 1..m {
                let v = it.next().unwrap_or(0.0);
                matrix.set(i, j, v);
                matrix.set(j, i, v);
            }
        }
        let gram_similarity = vectors.map(|g| gram_similarity(g, true)).transpose()?;
        Ok(DiversityReport { config, per_bag_rates, positive_bags, rate_reduction_matrix: matrix, gram_similarity })
    }
}
