//! Nuisance learners for DML: ridge regression, a random forest and
//! gradient-boosted trees, plus seeded K-fold cross-fitting.
//!
//! One boosting implementation covers both gradient-boosting roles; the
//! forest and the booster share the histogram tree in [`tree`].

mod boosted;
mod forest;
mod linear;
mod tree;

use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use boosted::{Boosted, BoostedParams};
pub use forest::{Forest, ForestParams};
pub use linear::{fit_linear, LinearModel};

use crate::error::{Error, Result};
use crate::par;
use crate::rng::{derive_seed, rng_from};

pub const DEFAULT_RIDGE_LAMBDA: f64 = 1e-6;

/// Which base model, with its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerKind {
    Linear { ridge_lambda: f64 },
    Forest(ForestParams),
    Boosted(BoostedParams),
}

impl LearnerKind {
    pub fn linear() -> Self {
        LearnerKind::Linear {
            ridge_lambda: DEFAULT_RIDGE_LAMBDA,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LearnerKind::Linear { .. } => "linear",
            LearnerKind::Forest(_) => "forest",
            LearnerKind::Boosted(_) => "boosted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerSpec {
    pub kind: LearnerKind,
    pub seed: u64,
}

impl LearnerSpec {
    pub fn new(kind: LearnerKind, seed: u64) -> Self {
        Self { kind, seed }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            kind: self.kind.clone(),
            seed,
        }
    }

    /// Fit on `x` (rows × features) and `y`.
    ///
    /// Tree ensembles fitted on a 0/1 target clip their predictions to [0, 1].
    pub fn fit(&self, x: &DMatrix<f64>, y: &[f64]) -> Result<FittedLearner> {
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch(alloc::format!(
                "{} feature rows but {} targets",
                x.nrows(),
                y.len()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::DimensionMismatch("non-finite value in learner input".into()));
        }
        let binary = y.iter().all(|&v| v == 0.0 || v == 1.0);
        let model = match &self.kind {
            LearnerKind::Linear { ridge_lambda } => Model::Linear(fit_linear(x, y, *ridge_lambda)?),
            LearnerKind::Forest(p) => Model::Forest(Forest::fit(x, y, p, self.seed)?),
            LearnerKind::Boosted(p) => Model::Boosted(Boosted::fit(x, y, p)?),
        };
        let clip = match model {
            Model::Linear(_) => None,
            _ if binary => Some((0.0, 1.0)),
            _ => None,
        };
        Ok(FittedLearner {
            model,
            n_features: x.ncols(),
            clip,
        })
    }
}

#[derive(Debug, Clone)]
enum Model {
    Linear(LinearModel),
    Forest(Forest),
    Boosted(Boosted),
}

/// A fitted, immutable predictor.
#[derive(Debug, Clone)]
pub struct FittedLearner {
    model: Model,
    n_features: usize,
    clip: Option<(f64, f64)>,
}

impl FittedLearner {
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.n_features {
            return Err(Error::DimensionMismatch(alloc::format!(
                "learner fitted on {} features, asked to predict {}",
                self.n_features,
                x.ncols()
            )));
        }
        Ok((0..x.nrows())
            .map(|i| {
                let v = match &self.model {
                    Model::Linear(m) => m.predict_row(x.row(i).iter().copied()),
                    Model::Forest(f) => f.predict_row(x, i),
                    Model::Boosted(b) => b.predict_row(x, i),
                };
                match self.clip {
                    Some((lo, hi)) => v.clamp(lo, hi),
                    None => v,
                }
            })
            .collect())
    }

    pub fn as_linear(&self) -> Option<&LinearModel> {
        match &self.model {
            Model::Linear(m) => Some(m),
            _ => None,
        }
    }
}

/// Seeded fold label for each of `n` rows; fold sizes differ by at most one.
pub fn fold_assignment(n: usize, k_folds: usize, seed: u64) -> Result<Vec<usize>> {
    if k_folds < 2 {
        return Err(Error::InvalidHyperparameter(alloc::format!(
            "k_folds must be >= 2, got {k_folds}"
        )));
    }
    if n / k_folds < 2 {
        return Err(Error::FoldTooSmall {
            fold: k_folds - 1,
            size: n / k_folds,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from(seed));
    let mut folds = alloc::vec![0; n];
    for (pos, &row) in order.iter().enumerate() {
        folds[row] = pos % k_folds;
    }
    Ok(folds)
}

fn select_rows(x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), x.ncols(), |i, j| x[(rows[i], j)])
}

/// Out-of-fold predictions given an explicit fold labelling.
pub fn crossfit_with_folds(
    x: &DMatrix<f64>,
    y: &[f64],
    spec: &LearnerSpec,
    folds: &[usize],
) -> Result<Vec<f64>> {
    let k = folds.iter().copied().max().map_or(0, |m| m + 1);
    let parts = par::map_indexed(k, |f| -> Result<(Vec<usize>, Vec<f64>)> {
        let (test, train): (Vec<usize>, Vec<usize>) = (0..y.len()).partition(|&i| folds[i] == f);
        let x_train = select_rows(x, &train);
        let y_train: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let model = spec
            .with_seed(derive_seed(spec.seed, f as u64))
            .fit(&x_train, &y_train)
            .map_err(|e| Error::LearnerFold {
                fold: f,
                source: alloc::boxed::Box::new(e),
            })?;
        let preds = model.predict(&select_rows(x, &test))?;
        Ok((test, preds))
    });
    let mut out = alloc::vec![f64::NAN; y.len()];
    for part in parts {
        let (rows, preds) = part?;
        for (r, p) in rows.into_iter().zip(preds) {
            out[r] = p;
        }
    }
    Ok(out)
}

/// Each row's prediction comes from a model that never saw that row.
pub fn crossfit_predict(
    x: &DMatrix<f64>,
    y: &[f64],
    spec: &LearnerSpec,
    k_folds: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch(alloc::format!(
            "{} feature rows but {} targets",
            x.nrows(),
            y.len()
        )));
    }
    let folds = fold_assignment(y.len(), k_folds, seed)?;
    crossfit_with_folds(x, y, spec, &folds)
}
