//! Dense matrices, linear-algebra kernels and reverse-mode differentiation.

mod autodiff;
pub mod linalg;
mod matrix;

pub use autodiff::{cross_entropy_value, Gradients, Graph, Var};
pub use linalg::{cosine_similarity, logdet_psd, pinv, softmax_rows};
pub use matrix::Matrix;


#[cfg(test)]
pub(crate) mod gradcheck;
