use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tree::{Binned, Binner, Tree, TreeParams, MAX_BINS};
use crate::error::{Error, Result};
use crate::par;
use crate::rng::{derive_seed, rng_from};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features tried per split; `None` means `⌊√p⌋` (at least one).
    pub feature_subsample: Option<usize>,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 200,
            max_depth: 8,
            min_leaf: 5,
            feature_subsample: None,
        }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 || self.max_depth == 0 || self.min_leaf == 0 {
            return Err(Error::InvalidHyperparameter(
                "forest n_trees, max_depth and min_leaf must be positive".into(),
            ));
        }
        if self.feature_subsample == Some(0) {
            return Err(Error::InvalidHyperparameter(
                "forest feature_subsample must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Bagged CART regression trees, predictions averaged.
#[derive(Debug, Clone)]
pub struct Forest {
    trees: Vec<Tree>,
}

impl Forest {
    pub fn fit(x: &DMatrix<f64>, y: &[f64], params: &ForestParams, seed: u64) -> Result<Self> {
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
        let mtry = params
            .feature_subsample
            .unwrap_or_else(|| (libm::floor(libm::sqrt(p as f64)) as usize).max(1));
        let tree_params = TreeParams {
            max_depth: params.max_depth,
            min_leaf: params.min_leaf,
            mtry,
        };
        let trees = par::map_indexed(params.n_trees, |t| {
            let data = Binned {
                binner: &binner,
                codes: &codes,
                n_rows: n,
                n_features: p,
            };
            let mut rng = rng_from(derive_seed(seed, t as u64));
            let mut rows: Vec<u32> = (0..n).map(|_| rng.random_range(0..n as u32)).collect();
            Tree::grow(&data, y, &mut rows, tree_params, &mut rng)
        });
        Ok(Self { trees })
    }

    pub fn predict_row(&self, x: &DMatrix<f64>, i: usize) -> f64 {
        self.trees.iter().map(|t| t.predict_row(x, i)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }
}
