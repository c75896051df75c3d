use alloc::vec::Vec;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::tree::{Binned, Binner, Tree, TreeParams, MAX_BINS};
use crate::error::{Error, Result};
use crate::rng::rng_from;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoostedParams {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for BoostedParams {
    fn default() -> Self {
        Self {
            n_rounds: 200,
            learning_rate: 0.1,
            max_depth: 3,
            min_leaf: 5,
        }
    }
}

impl BoostedParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_rounds == 0 || self.max_depth == 0 || self.min_leaf == 0 {
            return Err(Error::InvalidHyperparameter(
                "boosted n_rounds, max_depth and min_leaf must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::InvalidHyperparameter(alloc::format!(
                "boosted learning_rate must be in (0, 1], got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Stage-wise additive trees fitted to squared-error residuals with shrinkage.
#[derive(Debug, Clone)]
pub struct Boosted {
    base: f64,
    learning_rate: f64,
    trees: Vec<Tree>,
}

impl Boosted {
    pub fn fit(x: &DMatrix<f64>, y: &[f64], params: &BoostedParams) -> Result<Self> {
        params.validate()?;
        let (n, p) = x.shape();
        if n < 2 * params.min_leaf {
            return Err(Error::TooFewRows {
                rows: n,
                min_leaf: params.min_leaf,
            });
        }
        let binner = Binner::fit(x, MAX_BINS);
        let codes = binner.transform(x);
        let data = Binned {
            binner: &binner,
            codes: &codes,
            n_rows: n,
            n_features: p,
        };
        let tree_params = TreeParams {
            max_depth: params.max_depth,
            min_leaf: params.min_leaf,
            mtry: p,
        };
        let base = y.iter().sum::<f64>() / n as f64;
        let mut fitted = alloc::vec![base; n];
        let mut residual = alloc::vec![0.0; n];
        let mut rows: Vec<u32> = (0..n as u32).collect();
        // no subsampling, so the rng is never drawn from
        let mut rng = rng_from(0);
        let mut trees = Vec::with_capacity(params.n_rounds);
        for _ in 0..params.n_rounds {
            for i in 0..n {
                residual[i] = y[i] - fitted[i];
            }
            let tree = Tree::grow(&data, &residual, &mut rows, tree_params, &mut rng);
            for (i, f) in fitted.iter_mut().enumerate() {
                *f += params.learning_rate * tree.predict_row(x, i);
            }
            trees.push(tree);
        }
        Ok(Self {
            base,
            learning_rate: params.learning_rate,
            trees,
        })
    }

    pub fn predict_row(&self, x: &DMatrix<f64>, i: usize) -> f64 {
        self.base
            + self.learning_rate * self.trees.iter().map(|t| t.predict_row(x, i)).sum::<f64>()
    }
}
