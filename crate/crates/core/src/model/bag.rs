use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// A labeled multiset of instance feature vectors, one instance per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    pub id: String,
    pub features: Matrix,
    pub label: u8,
    pub instance_ids: Vec<String>,
    pub instance_labels: Option<Vec<u8>>,
}

impl Bag {
    /// Builds a bag with instance ids `0..n` and no instance labels.
    pub fn new(id: impl Into<String>, features: Matrix, label: u8) -> Result<Self> {
        let ids = (0..features.rows()).map(|i| i.to_string()).collect();
        let bag = Bag { id: id.into(), features, label, instance_ids: ids, instance_labels: None };
        bag.validate()?;
        Ok(bag)
    }

    /// Attaches instance labels; the bag label must be their OR.
    pub fn with_instance_labels(mut self, labels: Vec<u8>) -> Result<Self> {
        self.instance_labels = Some(labels);
        self.validate()?;
        Ok(self)
    }

    pub fn with_instance_ids(mut self, ids: Vec<String>) -> Result<Self> {
        self.instance_ids = ids;
        self.validate()?;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.features.rows();
        let fail = |msg: String| Err(Error::Data(format!("bag {}: {msg}", self.id)));
        if n == 0 {
            return fail("no instances".into());
        }
        if !self.features.is_finite() {
            return fail("non-finite feature".into());
        }
        if self.label > 1 {
            return fail(format!("label {} not in {{0, 1}}", self.label));
        }
        if self.instance_ids.len() != n {
            return fail(format!("{} instance ids for {n} instances", self.instance_ids.len()));
        }
        if let Some(labels) = &self.instance_labels {
            if labels.len() != n {
                return fail(format!("{} instance labels for {n} instances", labels.len()));
            }
            if labels.iter().any(|&l| l > 1) {
                return fail("instance label not in {0, 1}".into());
            }
            let any_pos = labels.contains(&1);
            if any_pos != (self.label == 1) {
                return fail(format!("label {} disagrees with instance labels", self.label));
            }
        }
        Ok(())
    }

    /// Copy with instances reordered so that row `i` is old row `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Bag {
        Bag {
            id: self.id.clone(),
            features: self.features.select_rows(order),
            label: self.label,
            instance_ids: order.iter().map(|&i| self.instance_ids[i].clone()).collect(),
            instance_labels: self.instance_labels.as_ref().map(|l| order.iter().map(|&i| l[i]).collect()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_must_match_instance_labels() {
        let f = Matrix::zeros(2, 3);
        assert!(Bag::new("a", f.clone(), 1).unwrap().with_instance_labels(alloc::vec![0, 1]).is_ok());
        assert!(Bag::new("a", f.clone(), 0).unwrap().with_instance_labels(alloc::vec![0, 1]).is_err());
        assert!(Bag::new("a", f.clone(), 1).unwrap().with_instance_labels(alloc::vec![0, 0]).is_err());
        assert!(Bag::new("a", f, 0).unwrap().with_instance_labels(alloc::vec![0]).is_err());
    }

    #[test]
    fn rejects_empty_and_non_finite() {
        assert!(Bag::new("a", Matrix::zeros(0, 3), 0).is_err());
        let mut f = Matrix::zeros(1, 2);
        f.set(0, 1, f64::NAN);
        assert!(Bag::new("a", f, 0).is_err());
    }
}
