//! Missing-data handling, lag/lead features and column scaling, plus the
//! dense balanced-panel view the estimators work on.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dataset::{DateGrid, Observation, PanelDataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImputePolicy {
    /// Carry the last observed value forward; leading gaps take the first
    /// observed value.
    ForwardFill,
    Zero,
    DropUnit,
}

/// Separate policies for the outcome and the covariates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImputationPlan {
    pub outcome: ImputePolicy,
    pub covariates: ImputePolicy,
}

impl Default for ImputationPlan {
    fn default() -> Self {
        Self {
            outcome: ImputePolicy::ForwardFill,
            covariates: ImputePolicy::Zero,
        }
    }
}

impl ImputationPlan {
    pub fn uniform(policy: ImputePolicy) -> Self {
        Self {
            outcome: policy,
            covariates: policy,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ImputationLog {
    /// Cells filled per unit (a missing row counts one cell per column).
    pub filled: BTreeMap<String, usize>,
    pub dropped_units: Vec<String>,
    pub warnings: Vec<String>,
}

impl ImputationLog {
    pub fn total_filled(&self) -> usize {
        self.filled.values().sum()
    }
}

/// Fill every unit onto the full grid (panels) or fill missing cells
/// (cross-sections). Idempotent.
pub fn impute_missing(panel: &PanelDataset, plan: ImputationPlan) -> (PanelDataset, ImputationLog) {
    let grid = panel.grid();
    let width = panel.covariate_columns.len();
    let mut log = ImputationLog::default();
    let mut rows = Vec::with_capacity(panel.rows.len());
    for (unit, slice) in panel.unit_slices() {
        let cells: Vec<Option<&Observation>> = match grid {
            Some(g) => {
                let mut v = vec![None; g.len];
                for r in slice {
                    if let Some(i) = g.index_of(r.date) {
                        v[i] = Some(r);
                    }
                }
                v
            }
            None => slice.iter().map(Some).collect(),
        };
        let dates: Vec<_> = match grid {
            Some(g) => g.dates(),
            None => slice.iter().map(|r| r.date).collect(),
        };
        let outcome: Vec<Option<f64>> = cells.iter().map(|c| c.and_then(|r| r.outcome)).collect();
        let Some((y, mut filled)) = fill_series(&outcome, plan.outcome) else {
            log.warnings.push(format!("unit `{unit}` dropped: outcome cannot be imputed"));
            log.dropped_units.push(unit.to_string());
            continue;
        };
        let mut cov_cols = Vec::with_capacity(width);
        let mut dropped = false;
        for j in 0..width {
            let col: Vec<Option<f64>> = cells.iter().map(|c| c.and_then(|r| r.covariates[j])).collect();
            let series = match fill_series(&col, plan.covariates) {
                Some(s) => Some(s),
                // a covariate never observed for this unit cannot be carried
                None if plan.covariates == ImputePolicy::ForwardFill => fill_series(&col, ImputePolicy::Zero),
                None => None,
            };
            match series {
                Some((v, n)) => {
                    filled += n;
                    cov_cols.push(v);
                }
                None => {
                    dropped = true;
                    break;
                }
            }
        }
        if dropped {
            log.warnings.push(format!("unit `{unit}` dropped: missing covariate values"));
            log.dropped_units.push(unit.to_string());
            continue;
        }
        if filled > 0 {
            log.filled.insert(unit.to_string(), filled);
        }
        for (i, date) in dates.into_iter().enumerate() {
            rows.push(Observation {
                unit_id: unit.to_string(),
                date,
                outcome: Some(y[i]),
                covariates: cov_cols.iter().map(|c| Some(c[i])).collect(),
            });
        }
    }
    (
        PanelDataset {
            outcome_column: panel.outcome_column.clone(),
            covariate_columns: panel.covariate_columns.clone(),
            period: panel.period,
            rows,
        },
        log,
    )
}

/// Filled series and the number of filled cells, or `None` when the unit
/// must be dropped.
fn fill_series(values: &[Option<f64>], policy: ImputePolicy) -> Option<(Vec<f64>, usize)> {
    let missing = values.iter().filter(|v| v.is_none()).count();
    if missing == 0 {
        return Some((values.iter().map(|v| v.unwrap()).collect(), 0));
    }
    match policy {
        ImputePolicy::DropUnit => None,
        ImputePolicy::Zero => Some((values.iter().map(|v| v.unwrap_or(0.0)).collect(), missing)),
        ImputePolicy::ForwardFill => {
            let mut last = values.iter().flatten().copied().next()?;
            let out = values
                .iter()
                .map(|v| {
                    if let Some(x) = v {
                        last = *x;
                    }
                    last
                })
                .collect();
            Some((out, missing))
        }
    }
}

/// Name of the outcome lag column for `k`.
pub fn lag_column(outcome: &str, k: usize) -> String {
    format!("{outcome}_lag{k}")
}

pub fn lead_column(outcome: &str, k: usize) -> String {
    format!("{outcome}_lead{k}")
}

/// Append `<outcome>_lag<k>` and `<outcome>_lead<k>` covariate columns.
/// Cells whose source period falls off the grid are left missing.
pub fn build_lag_features(panel: &PanelDataset, lags: &[usize], leads: &[usize]) -> Result<PanelDataset> {
    let periods = panel.grid().map_or(1, |g| g.len);
    if let Some(&k) = lags.iter().chain(leads).find(|&&k| k == 0 || k >= periods) {
        return Err(Error::LagExceedsHistory { lag: k, periods });
    }
    let mut out = panel.clone();
    for &k in lags {
        out.covariate_columns.push(lag_column(&panel.outcome_column, k));
    }
    for &k in leads {
        out.covariate_columns.push(lead_column(&panel.outcome_column, k));
    }
    let Some(grid) = panel.grid() else {
        return Ok(out);
    };
    let mut start = 0;
    for (_, slice) in panel.unit_slices() {
        let mut series = vec![None; grid.len];
        for r in slice {
            if let Some(i) = grid.index_of(r.date) {
                series[i] = r.outcome;
            }
        }
        for (r, row) in slice.iter().zip(&mut out.rows[start..start + slice.len()]) {
            let i = grid.index_of(r.date).expect("rows lie on the grid") as i64;
            let at = |j: i64| -> Option<f64> { (0..grid.len as i64).contains(&j).then(|| series[j as usize]).flatten() };
            for &k in lags {
                row.covariates.push(at(i - k as i64));
            }
            for &k in leads {
                row.covariates.push(at(i + k as i64));
            }
        }
        start += slice.len();
    }
    Ok(out)
}

/// Parse `k` out of `<outcome>_lag<k>`.
pub fn parse_lag_column(outcome: &str, name: &str) -> Option<usize> {
    name.strip_prefix(outcome)?.strip_prefix("_lag")?.parse().ok()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleMethod {
    Zscore,
    Minmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum ColumnScale {
    Zscore { mean: f64, stddev: f64 },
    Minmax { min: f64, max: f64 },
}

impl ColumnScale {
    pub fn apply(&self, v: f64) -> f64 {
        match *self {
            ColumnScale::Zscore { mean, stddev } => (v - mean) / stddev,
            ColumnScale::Minmax { min, max } => (v - min) / (max - min),
        }
    }

    pub fn invert(&self, v: f64) -> f64 {
        match *self {
            ColumnScale::Zscore { mean, stddev } => v * stddev + mean,
            ColumnScale::Minmax { min, max } => v * (max - min) + min,
        }
    }
}

/// Parameters of every column that was actually scaled.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ScalerParams {
    pub columns: BTreeMap<String, ColumnScale>,
}

/// Scale the named outcome or covariate columns in place over all rows.
/// Constant columns are left unchanged and reported in the warning list.
pub fn scale_columns(
    panel: &PanelDataset,
    columns: &[String],
    method: ScaleMethod,
) -> Result<(PanelDataset, ScalerParams, Vec<String>)> {
    let mut out = panel.clone();
    let mut params = ScalerParams::default();
    let mut warnings = Vec::new();
    for name in columns {
        let slot = if *name == panel.outcome_column {
            None
        } else {
            Some(panel.covariate_index(name).ok_or_else(|| Error::UnknownColumn(name.clone()))?)
        };
        let get = |r: &Observation| match slot {
            None => r.outcome,
            Some(j) => r.covariates[j],
        };
        let values: Vec<f64> = out.rows.iter().filter_map(get).collect();
        if values.is_empty() {
            warnings.push(format!("column `{name}` has no values; not scaled"));
            continue;
        }
        let scale = match method {
            ScaleMethod::Zscore => {
                let mean = crate::stats::mean(&values);
                let stddev = crate::stats::pop_std_dev(&values);
                (stddev > 1e-12 * (1.0 + libm::fabs(mean))).then_some(ColumnScale::Zscore { mean, stddev })
            }
            ScaleMethod::Minmax => {
                let min = values.iter().copied().fold(f64::INFINITY, f64::min);
                let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (max > min).then_some(ColumnScale::Minmax { min, max })
            }
        };
        let Some(scale) = scale else {
            warnings.push(format!("column `{name}` is constant; not scaled"));
            continue;
        };
        for r in &mut out.rows {
            let cell = match slot {
                None => &mut r.outcome,
                Some(j) => &mut r.covariates[j],
            };
            if let Some(v) = cell {
                *v = scale.apply(*v);
            }
        }
        params.columns.insert(name.clone(), scale);
    }
    Ok((out, params, warnings))
}

/// Dense unit × period view of a complete panel. Matrices are row-major
/// with `value[i * T + t]`; covariate cells may be NaN (missing marker).
#[derive(Debug, Clone, PartialEq)]
pub struct BalancedPanel {
    pub grid: DateGrid,
    pub units: Vec<String>,
    pub outcome_name: String,
    pub y: Vec<f64>,
    pub covariate_names: Vec<String>,
    pub x: Vec<Vec<f64>>,
}

impl BalancedPanel {
    /// Requires every unit to have every grid date with an observed outcome;
    /// run [`impute_missing`] first.
    pub fn from_dataset(panel: &PanelDataset) -> Result<Self> {
        let grid = panel
            .grid()
            .ok_or_else(|| Error::IrregularGrid("a balanced panel needs a time grid".into()))?;
        let t_len = grid.len;
        let slices = panel.unit_slices();
        let n = slices.len();
        let k = panel.covariate_columns.len();
        let mut y = vec![f64::NAN; n * t_len];
        let mut x = vec![vec![f64::NAN; n * t_len]; k];
        let mut units = Vec::with_capacity(n);
        for (i, (unit, slice)) in slices.iter().enumerate() {
            units.push(unit.to_string());
            if slice.len() != t_len {
                return Err(Error::IrregularGrid(format!(
                    "unit `{unit}` has {} of {t_len} periods; impute before estimating",
                    slice.len()
                )));
            }
            for r in *slice {
                let t = grid.index_of(r.date).expect("rows lie on the grid");
                y[i * t_len + t] = r.outcome.ok_or_else(|| {
                    Error::IrregularGrid(format!("unit `{unit}` has a missing outcome at {}", r.date))
                })?;
                for (j, c) in r.covariates.iter().enumerate() {
                    x[j][i * t_len + t] = c.unwrap_or(f64::NAN);
                }
            }
        }
        Ok(Self {
            grid,
            units,
            outcome_name: panel.outcome_column.clone(),
            y,
            covariate_names: panel.covariate_columns.clone(),
            x,
        })
    }

    pub fn n_units(&self) -> usize {
        self.units.len()
    }

    pub fn n_periods(&self) -> usize {
        self.grid.len
    }

    pub fn unit_index(&self, unit: &str) -> Option<usize> {
        self.units.binary_search_by(|u| u.as_str().cmp(unit)).ok()
    }

    pub fn outcome_row(&self, i: usize) -> &[f64] {
        let t = self.grid.len;
        &self.y[i * t..(i + 1) * t]
    }

    pub fn covariate_row(&self, j: usize, i: usize) -> &[f64] {
        let t = self.grid.len;
        &self.x[j][i * t..(i + 1) * t]
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|c| c == name)
    }

    /// Panel restricted to the units at `rows`, which must be increasing so
    /// the unit ids stay sorted.
    pub fn select_units(&self, rows: &[usize]) -> Self {
        debug_assert!(rows.windows(2).all(|w| w[0] < w[1]));
        let t = self.grid.len;
        let take = |v: &[f64]| -> Vec<f64> { rows.iter().flat_map(|&i| v[i * t..(i + 1) * t].iter().copied()).collect() };
        Self {
            grid: self.grid,
            units: rows.iter().map(|&i| self.units[i].clone()).collect(),
            outcome_name: self.outcome_name.clone(),
            y: take(&self.y),
            covariate_names: self.covariate_names.clone(),
            x: self.x.iter().map(|c| take(c)).collect(),
        }
    }
}
