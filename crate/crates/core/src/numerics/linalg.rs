//! Small dense linear-algebra kernels: row softmax, symmetric eigendecomposition,
//! singular value decomposition, pseudo-inverse and log-determinants.
//!
//! All decompositions are Jacobi-type. They are quadratically convergent and very
//! accurate for the small matrices this crate deals with (K x K Gram matrices,
//! Nyström landmark kernels), which matters more here than asymptotic speed.

use alloc::vec::Vec;

use super::Matrix;
use crate::error::{Error, Result};

/// Eigenvalues below this are treated as singular by [`logdet_psd`].
pub const SINGULAR_EIGENVALUE: f64 = 1e-14;
/// Absolute asymmetry tolerated by [`logdet_psd`].
pub const SYMMETRY_TOLERANCE: f64 = 1e-8;

const MAX_SWEEPS: usize = 100;

/// Row-wise softmax with per-row max subtraction.
pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = libm::exp(*v - max);
        total += *v;
    }
    let inv = 1.0 / total;
    row.iter_mut().for_each(|v| *v *= inv);
}

/// Eigendecomposition of a symmetric matrix, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    /// Columns are the eigenvectors matching `values`.
    pub vectors: Matrix,
}

impl SymmetricEigen {
    /// `V · diag(f(λ)) · Vᵀ`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> Matrix {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for r in 0..n {
            for c in 0..n {
                let v = scaled.get(r, c) * f(self.values[c]);
                scaled.set(r, c, v);
            }
        }
        scaled.matmul_nt(&self.vectors).expect("square eigenvector basis")
    }
}

/// Cyclic Jacobi eigensolver. The input is symmetrized before iterating.
pub fn symmetric_eigen(s: &Matrix) -> Result<SymmetricEigen> {
    let n = s.rows();
    if n != s.cols() {
        return Err(Error::dims("symmetric_eigen", s.shape(), s.shape()));
    }
    let mut a = Matrix::from_fn(n, n, |i, j| 0.5 * (s.get(i, j) + s.get(j, i)));
    let mut v = Matrix::identity(n);
    let scale = a.frobenius_norm().max(f64::MIN_POSITIVE);

    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a.get(i, j) * a.get(i, j);
            }
        }
        if libm::sqrt(off) <= 1e-17 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + libm::sqrt(theta * theta + 1.0));
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / libm::sqrt(t * t + 1.0);
                let sn = t * c;
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - sn * akq);
                    a.set(k, q, sn * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - sn * aqk);
                    a.set(q, k, sn * apk + c * aqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - sn * vkq);
                    v.set(k, q, sn * vkp + c * vkq);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a.get(x, x).total_cmp(&a.get(y, y)));
    let values = order.iter().map(|&i| a.get(i, i)).collect();
    let vectors = Matrix::from_fn(n, n, |r, c| v.get(r, order[c]));
    Ok(SymmetricEigen { values, vectors })
}

/// Thin singular value decomposition `A = U · diag(σ) · Vᵀ`, σ descending.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub singular_values: Vec<f64>,
    pub v: Matrix,
}

/// One-sided (Hestenes) Jacobi SVD.
pub fn svd(a: &Matrix) -> Svd {
    if a.rows() < a.cols() {
        let t = svd(&a.transpose());
        return Svd { u: t.v, singular_values: t.singular_values, v: t.u };
    }
    let (m, n) = a.shape();
    let mut u = a.clone();
    let mut v = Matrix::identity(n);
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for k in 0..m {
                    let up = u.get(k, p);
                    let uq = u.get(k, q);
                    alpha += up * up;
                    beta += uq * uq;
                    gamma += up * uq;
                }
                if gamma.abs() <= 1e-15 * libm::sqrt(alpha * beta) || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + libm::sqrt(1.0 + zeta * zeta));
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / libm::sqrt(1.0 + t * t);
                let s = c * t;
                for k in 0..m {
                    let up = u.get(k, p);
                    let uq = u.get(k, q);
                    u.set(k, p, c * up - s * uq);
                    u.set(k, q, s * up + c * uq);
                }
                for k in 0..n {
                    let vp = v.get(k, p);
                    let vq = v.get(k, q);
                    v.set(k, p, c * vp - s * vq);
                    v.set(k, q, s * vp + c * vq);
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = (0..n)
        .map(|c| libm::sqrt((0..m).map(|r| u.get(r, c) * u.get(r, c)).sum::<f64>()))
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]));
    let singular_values: Vec<f64> = order.iter().map(|&i| norms[i]).collect();
    let u_sorted = Matrix::from_fn(m, n, |r, c| {
        let s = norms[order[c]];
        if s > 0.0 { u.get(r, order[c]) / s } else { 0.0 }
    });
    let v_sorted = Matrix::from_fn(n, n, |r, c| v.get(r, order[c]));
    Svd { u: u_sorted, singular_values, v: v_sorted }
}

/// Moore–Penrose pseudo-inverse. Singular values below
/// `max(rows, cols) · ε_mach · σ_max` are treated as zero.
pub fn pinv(m: &Matrix) -> Matrix {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Matrix::zeros(cols, rows);
    }
    let d = svd(m);
    let smax = d.singular_values.first().copied().unwrap_or(0.0);
    let tol = rows.max(cols) as f64 * f64::EPSILON * smax;
    // V · diag(1/σ) · Uᵀ
    let r = d.singular_values.len();
    let mut vs = d.v.clone();
    for c in 0..r {
        let s = d.singular_values[c];
        let inv = if s > tol { 1.0 / s } else { 0.0 };
        for row in 0..vs.rows() {
            let x = vs.get(row, c) * inv;
            vs.set(row, c, x);
        }
    }
    vs.matmul_nt(&d.u).expect("svd factor shapes agree")
}

/// Log-determinant of a symmetric positive semi-definite matrix.
///
/// Returns the value together with the eigendecomposition, which callers use to
/// form the gradient `S⁻¹`.
pub fn logdet_psd_eigen(s: &Matrix) -> Result<(f64, SymmetricEigen)> {
    if s.rows() != s.cols() {
        return Err(Error::dims("logdet_psd", s.shape(), s.shape()));
    }
    let asym = s.asymmetry();
    if asym > SYMMETRY_TOLERANCE * s.max_abs().max(1.0) {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    let eig = symmetric_eigen(s)?;
    if let Some(&min) = eig.values.first() {
        if min < SINGULAR_EIGENVALUE {
            return Err(Error::Singular { eigenvalue: min });
        }
    }
    let value = eig.values.iter().map(|&l| libm::log(l)).sum();
    Ok((value, eig))
}

pub fn logdet_psd(s: &Matrix) -> Result<f64> {
    logdet_psd_eigen(s).map(|(v, _)| v)
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(s: &Matrix) -> Result<Matrix> {
    let n = s.rows();
    if n != s.cols() {
        return Err(Error::dims("cholesky", s.shape(), s.shape()));
    }
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = s.get(j, j);
        for k in 0..j {
            d -= l.get(j, k) * l.get(j, k);
        }
        if d <= 0.0 {
            return Err(Error::Singular { eigenvalue: d });
        }
        let d = libm::sqrt(d);
        l.set(j, j, d);
        for i in (j + 1)..n {
            let mut x = s.get(i, j);
            for k in 0..j {
                x -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, x / d);
        }
    }
    Ok(l)
}

/// Log-determinant of a symmetric positive definite matrix through Cholesky.
pub fn logdet_spd(s: &Matrix) -> Result<f64> {
    let l = cholesky(s)?;
    Ok(2.0 * (0..l.rows()).map(|i| libm::log(l.get(i, i))).sum::<f64>())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

/// `aᵀb / (‖a‖‖b‖)`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dims("cosine_similarity", (1, a.len()), (1, b.len())));
    }
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateVector { op: "cosine_similarity" });
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Determinant through Gaussian elimination with partial pivoting.
    fn lu_det(m: &Matrix) -> f64 {
        let n = m.rows();
        let mut a = m.clone();
        let mut det = 1.0;
        for col in 0..n {
            let pivot = (col..n).max_by(|&x, &y| a.get(x, col).abs().total_cmp(&a.get(y, col).abs())).unwrap();
            if pivot != col {
                for k in 0..n {
                    let t = a.get(col, k);
                    a.set(col, k, a.get(pivot, k));
                    a.set(pivot, k, t);
                }
                det = -det;
            }
            let p = a.get(col, col);
            det *= p;
            for r in (col + 1)..n {
                let f = a.get(r, col) / p;
                for k in col..n {
                    let v = a.get(r, k) - f * a.get(col, k);
                    a.set(r, k, v);
                }
            }
        }
        det
    }

    fn close(a: &Matrix, b: &Matrix) -> f64 {
        a.sub(b).unwrap().frobenius_norm()
    }

    #[test]
    fn softmax_examples() {
        let s = softmax_rows(&Matrix::row_vector(&[0.0, 0.0, 0.0]));
        for v in s.as_slice() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let s = softmax_rows(&Matrix::row_vector(&[1000.0, 1000.0]));
        assert_eq!(s.as_slice(), &[0.5, 0.5]);
        let s = softmax_rows(&Matrix::row_vector(&[0.0, libm::log(3.0)]));
        assert!((s.get(0, 0) - 0.25).abs() < 1e-15);
        assert!((s.get(0, 1) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_rows_sum_to_one_on_large_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = Matrix::from_fn(20, 30, |_, _| rng.random_range(-1e4..1e4));
        let s = softmax_rows(&m);
        for r in 0..s.rows() {
            assert!((s.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(s.row(r).iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn logdet_examples() {
        assert_eq!(logdet_psd(&Matrix::identity(4)).unwrap(), 0.0);
        let v = logdet_psd(&Matrix::from_diag(&[2.0, 3.0])).unwrap();
        assert!((v - libm::log(6.0)).abs() < 1e-14);
    }

    #[test]
    fn logdet_matches_lu_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let a = random(&mut rng, 4, 6);
            let s = a.matmul_nt(&a).unwrap();
            let want = libm::log(lu_det(&s));
            let got = logdet_psd(&s).unwrap();
            assert!(((got - want) / want).abs() < 1e-10, "{got} vs {want}");
            let chol = logdet_spd(&s).unwrap();
            assert!(((chol - want) / want).abs() < 1e-10);
        }
    }

    #[test]
    fn logdet_of_gram_equals_twice_log_singular_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let g = random(&mut rng, 5, 12);
            let gram = g.matmul_nt(&g).unwrap();
            let via_svd: f64 = 2.0 * svd(&g).singular_values.iter().map(|&s| libm::log(s)).sum::<f64>();
            let via_eig = logdet_psd(&gram).unwrap();
            assert!(((via_eig - via_svd) / via_svd).abs() < 1e-8);
        }
    }

    #[test]
    fn logdet_errors() {
        let asym = Matrix::from_rows(&[&[1.0, 0.5], &[0.4, 1.0]]).unwrap();
        assert!(matches!(logdet_psd(&asym), Err(Error::NotSymmetric { .. })));
        let sing = Matrix::from_rows(&[&[1.0, 1.0], &[1.0, 1.0]]).unwrap();
        assert!(matches!(logdet_psd(&sing), Err(Error::Singular { .. })));
    }

    #[test]
    fn eigen_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random(&mut rng, 6, 6);
        let s = a.add(&a.transpose()).unwrap();
        let e = symmetric_eigen(&s).unwrap();
        assert!(close(&e.reconstruct_with(|l| l), &s) < 1e-12);
        assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn pinv_examples() {
        assert!(close(&pinv(&Matrix::identity(3)), &Matrix::identity(3)) < 1e-15);
        let p = pinv(&Matrix::from_diag(&[2.0, 0.0]));
        assert!(close(&p, &Matrix::from_diag(&[0.5, 0.0])) < 1e-15);
    }

    #[test]
    fn pinv_satisfies_penrose_conditions() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for (r, c) in [(3, 5), (5, 3), (4, 4)] {
            let a = random(&mut rng, r, c);
            let p = pinv(&a);
            let apa = a.matmul(&p).unwrap().matmul(&a).unwrap();
            let pap = p.matmul(&a).unwrap().matmul(&p).unwrap();
            let ap = a.matmul(&p).unwrap();
            let pa = p.matmul(&a).unwrap();
            assert!(close(&apa, &a) < 1e-8);
            assert!(close(&pap, &p) < 1e-8);
            assert!(close(&ap, &ap.transpose()) < 1e-8);
            assert!(close(&pa, &pa.transpose()) < 1e-8);
        }
        // Rank-deficient: outer product.
        let u = random(&mut rng, 4, 1);
        let v = random(&mut rng, 1, 3);
        let a = u.matmul(&v).unwrap();
        let p = pinv(&a);
        assert!(close(&a.matmul(&p).unwrap().matmul(&a).unwrap(), &a) < 1e-8);
    }

    #[test]
    fn cosine_examples() {
        let v = [0.3, -1.2, 2.0];
        let neg: alloc::vec::Vec<f64> = v.iter().map(|x| -x).collect();
        assert!((cosine_similarity(&v, &v).unwrap() - 1.0).abs() < 1e-15);
        assert!((cosine_similarity(&v, &neg).unwrap() + 1.0).abs() < 1e-15);
        let c = cosine_similarity(&[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((c - libm::sqrt(2.0) / 2.0).abs() < 1e-15);
        assert!(matches!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::DegenerateVector { .. })));
    }
}
