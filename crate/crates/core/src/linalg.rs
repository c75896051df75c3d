//! Dense least squares and eigen helpers on top of `nalgebra`.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

/// Relative singular-value cutoff below which a direction counts as null.
const RANK_TOL: f64 = 1e-10;

/// Solution of a (possibly ridge-penalised) least-squares problem.
#[derive(Debug, Clone)]
pub struct LsSolution {
    pub coef: DVector<f64>,
    /// Number of singular values treated as non-zero.
    pub rank: usize,
}

impl LsSolution {
    pub fn is_rank_deficient(&self) -> bool {
        self.rank < self.coef.len()
    }
}

/// Minimise `‖y − Xb‖² + λ‖b‖²` through the thin SVD of `X`.
///
/// With `λ = 0` the minimum-norm solution is returned when `X` is rank
/// deficient.
pub fn ridge_svd(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> LsSolution {
    let p = x.ncols();
    if p == 0 || x.nrows() == 0 {
        return LsSolution {
            coef: DVector::zeros(p),
            rank: 0,
        };
    }
    let svd = x.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let s_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cutoff = RANK_TOL * s_max.max(f64::MIN_POSITIVE) * (x.nrows().max(p) as f64);
    let uty = u.transpose() * y;
    let mut scaled = DVector::zeros(svd.singular_values.len());
    let mut rank = 0;
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff {
            rank += 1;
            scaled[k] = s * uty[k] / (s * s + lambda);
        } else if lambda > 0.0 {
            scaled[k] = s * uty[k] / (s * s + lambda);
        }
    }
    LsSolution {
        coef: v_t.transpose() * scaled,
        rank,
    }
}

/// Ordinary least squares (minimum norm when rank deficient).
pub fn lstsq(x: &DMatrix<f64>, y: &DVector<f64>) -> LsSolution {
    ridge_svd(x, y, 0.0)
}

/// Leading `r` eigenpairs of a symmetric matrix, eigenvalues descending.
///
/// Each eigenvector's sign is fixed so its largest-magnitude entry is
/// positive, which keeps repeated fits bit-identical.
pub fn top_eigen(sym: &DMatrix<f64>, r: usize) -> (DMatrix<f64>, Vec<f64>) {
    let n = sym.nrows();
    let r = r.min(n);
    if r == 0 {
        return (DMatrix::zeros(n, 0), Vec::new());
    }
    let eig = sym.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut vecs = DMatrix::zeros(n, r);
    let mut vals = Vec::with_capacity(r);
    for (j, &k) in order.iter().take(r).enumerate() {
        let col = eig.eigenvectors.column(k);
        let mut pivot = 0;
        for i in 0..n {
            if col[i].abs() > col[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            vecs[(i, j)] = sign * col[i];
        }
        vals.push(eig.eigenvalues[k]);
    }
    (vecs, vals)
}
