use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::ridge_svd;

/// Affine predictor `intercept + x·coef`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearModel {
    pub intercept: f64,
    pub coef: Vec<f64>,
    /// Set when the centred design was rank deficient.
    pub rank_deficient: bool,
}

impl LinearModel {
    pub fn predict_row(&self, row: impl IntoIterator<Item = f64>) -> f64 {
        self.intercept + row.into_iter().zip(&self.coef).map(|(x, b)| x * b).sum::<f64>()
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (0..x.nrows())
            .map(|i| self.predict_row(x.row(i).iter().copied()))
            .collect()
    }
}

/// Ridge regression with an unpenalised intercept.
///
/// Columns and targets are centred, then `‖yc − Xc·β‖² + λ‖β‖²` is solved
/// through the SVD of the centred design. At `λ = 0` a rank-deficient design
/// gets the minimum-norm slope vector.
pub fn fit_linear(x: &DMatrix<f64>, y: &[f64], ridge_lambda: f64) -> Result<LinearModel> {
    let (n, p) = x.shape();
    if n != y.len() {
        return Err(Error::DimensionMismatch(alloc::format!(
            "{n} feature rows but {} targets",
            y.len()
        )));
    }
    if n == 0 {
        return Err(Error::TooFewRows { rows: 0, min_leaf: 1 });
    }
    if !(ridge_lambda >= 0.0) {
        return Err(Error::InvalidHyperparameter(alloc::format!(
            "ridge_lambda must be >= 0, got {ridge_lambda}"
        )));
    }
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let col_means: Vec<f64> = (0..p).map(|j| x.column(j).mean()).collect();
    let xc = DMatrix::from_fn(n, p, |i, j| x[(i, j)] - col_means[j]);
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
    let sol = ridge_svd(&xc, &yc, ridge_lambda);
    let rank_deficient = sol.is_rank_deficient();
    if rank_deficient && ridge_lambda == 0.0 {
        log::warn!(
            "linear learner: design has rank {} < {p}; using the minimum-norm solution",
            sol.rank
        );
    }
    let coef: Vec<f64> = sol.coef.iter().copied().collect();
    let intercept = y_mean - col_means.iter().zip(&coef).map(|(m, b)| m * b).sum::<f64>();
    Ok(LinearModel {
        intercept,
        coef,
        rank_deficient,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use alloc::vec;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn exact_line() {
        let x = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        let m = fit_linear(&x, &[2.0, 4.0, 6.0], 0.0).unwrap();
        assert!((m.coef[0] - 2.0).abs() < 1e-9);
        assert!(m.intercept.abs() < 1e-9);
    }

    #[test]
    fn huge_penalty_shrinks_to_mean() {
        let x = DMatrix::from_row_slice(4, 1, &[1.0, 2.0, 3.0, 4.0]);
        let y = [1.0, 3.0, 2.0, 6.0];
        let m = fit_linear(&x, &y, 1e12).unwrap();
        assert!(m.coef[0].abs() < 1e-9);
        assert!((m.intercept - 3.0).abs() < 1e-8);
    }

    #[test]
    fn recovers_planted_coefficients() {
        let mut rng = rng_from(11);
        let beta = [1.5, -2.0, 0.25, 3.0, -0.7];
        let n = 200;
        let x = DMatrix::from_fn(n, 5, |_, _| StandardNormal.sample(&mut rng));
        let y: Vec<f64> = (0..n)
            .map(|i| 0.5 + (0..5).map(|j| x[(i, j)] * beta[j]).sum::<f64>())
            .collect();
        let m = fit_linear(&x, &y, 0.0).unwrap();
        for j in 0..5 {
            assert!((m.coef[j] - beta[j]).abs() < 1e-6);
        }
        assert!((m.intercept - 0.5).abs() < 1e-6);
    }

    #[test]
    fn collinear_design_min_norm() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0]);
        let m = fit_linear(&x, &[2.0, 4.0, 6.0, 8.0], 0.0).unwrap();
        assert!(m.rank_deficient);
        assert!((m.coef[0] - 1.0).abs() < 1e-9 && (m.coef[1] - 1.0).abs() < 1e-9);
        for (p, t) in m.predict(&x).iter().zip(vec![2.0, 4.0, 6.0, 8.0]) {
            assert!((p - t).abs() < 1e-9);
        }
    }
}
