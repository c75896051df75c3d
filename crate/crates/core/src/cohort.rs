//! Cohorts: blocks of consecutive treatment times merged greedily until they
//! are large enough, the per-cohort cross-sections DML runs on, and the
//! treated-weighted aggregation of per-cohort effects.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use chrono::NaiveDate;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::{PanelDataset, TreatmentTable};
use crate::error::{Error, Result};
use crate::estimate::{weighted_combine, EffectEstimate};
use crate::preprocess::{parse_lag_column, BalancedPanel};

pub const DEFAULT_MIN_TREATED: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortParams {
    pub min_times: usize,
    pub max_times: usize,
    pub min_treated: usize,
}

impl CohortParams {
    pub fn validate(&self) -> Result<()> {
        if self.min_times == 0 || self.min_treated == 0 || self.min_times > self.max_times {
            return Err(Error::InvalidConfig(format!(
                "cohort limits need 1 <= min_times <= max_times and min_treated >= 1 (got {}, {}, {})",
                self.min_times, self.max_times, self.min_treated
            )));
        }
        Ok(())
    }
}

/// Why a cohort does not meet every constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CohortFlag {
    /// Trailing times that could not reach the limits and could not be
    /// merged into the previous cohort.
    Remainder,
    /// Reached `max_times` before reaching `min_treated`.
    CappedAtMaxTimes,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cohort {
    pub index: usize,
    pub treatment_times: Vec<NaiveDate>,
    /// Sorted.
    pub treated_ids: Vec<String>,
    pub window_start: NaiveDate,
    pub window_end: NaiveDate,
    pub n_treated: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub flag: Option<CohortFlag>,
}

impl Cohort {
    fn satisfies(times: usize, treated: usize, p: &CohortParams) -> bool {
        (p.min_times..=p.max_times).contains(&times) && treated >= p.min_treated
    }
}

/// Greedy merge over the ascending distinct treatment times: a cohort is
/// closed once it meets `min_times` and `min_treated`, or when it reaches
/// `max_times`. An unfinished tail is merged into its predecessor when the
/// combined cohort stays within `max_times`, otherwise kept and flagged.
pub fn build_cohorts(treatment: &TreatmentTable, params: &CohortParams) -> Result<Vec<Cohort>> {
    params.validate()?;
    let times = treatment.times();
    if times.is_empty() {
        return Err(Error::NoTreatedUnits);
    }
    // (times, treated count, flag)
    let mut blocks: Vec<(Vec<(NaiveDate, usize)>, usize, Option<CohortFlag>)> = Vec::new();
    let mut cur: Vec<(NaiveDate, usize)> = Vec::new();
    let mut n = 0;
    for t in times {
        cur.push(t);
        n += t.1;
        let ok = Cohort::satisfies(cur.len(), n, params);
        if ok || cur.len() == params.max_times {
            let flag = (!ok).then_some(CohortFlag::CappedAtMaxTimes);
            blocks.push((core::mem::take(&mut cur), n, flag));
            n = 0;
        }
    }
    if !cur.is_empty() {
        match blocks.last_mut() {
            Some(prev) if prev.0.len() + cur.len() <= params.max_times => {
                prev.0.append(&mut cur);
                prev.1 += n;
                prev.2 = (!Cohort::satisfies(prev.0.len(), prev.1, params)).then_some(CohortFlag::Remainder);
            }
            _ => blocks.push((cur, n, Some(CohortFlag::Remainder))),
        }
    }
    Ok(blocks
        .into_iter()
        .enumerate()
        .map(|(index, (times, n_treated, flag))| {
            let dates: Vec<NaiveDate> = times.iter().map(|t| t.0).collect();
            let set: BTreeSet<NaiveDate> = dates.iter().copied().collect();
            let mut treated_ids: Vec<String> = treatment
                .rows()
                .iter()
                .filter(|r| set.contains(&r.treatment_date))
                .map(|r| r.unit_id.clone())
                .collect();
            treated_ids.sort();
            Cohort {
                index,
                window_start: dates[0],
                window_end: *dates.last().expect("non-empty"),
                treatment_times: dates,
                treated_ids,
                n_treated,
                flag,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortEstimate {
    pub cohort: Cohort,
    pub estimate: EffectEstimate,
}

/// Treated-count weighted average of per-cohort effects (independence
/// across cohorts assumed for the standard error).
pub fn aggregate_estimates(parts: &[CohortEstimate]) -> Result<EffectEstimate> {
    weighted_combine(parts.iter().map(|p| &p.estimate))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Mean,
    Sum,
}

impl Aggregation {
    fn apply(self, values: &[f64]) -> f64 {
        let s: f64 = values.iter().sum();
        match self {
            Aggregation::Mean => s / values.len() as f64,
            Aggregation::Sum => s,
        }
    }
}

/// One row per unit: binary treatment, features, outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossSection {
    pub unit_ids: Vec<String>,
    pub treatment: Vec<f64>,
    pub outcome: Vec<f64>,
    pub feature_names: Vec<String>,
    pub features: DMatrix<f64>,
}

impl CrossSection {
    pub fn n_rows(&self) -> usize {
        self.unit_ids.len()
    }

    pub fn n_treated(&self) -> usize {
        self.treatment.iter().filter(|t| **t > 0.5).count()
    }

    pub fn n_control(&self) -> usize {
        self.n_rows() - self.n_treated()
    }

    /// Copy with an extra feature column appended.
    pub fn with_feature(&self, name: &str, values: &[f64]) -> Self {
        let mut out = self.clone();
        let n = self.n_rows();
        let p = self.features.ncols();
        out.features = self.features.clone().insert_column(p, 0.0);
        for i in 0..n {
            out.features[(i, p)] = values[i];
        }
        out.feature_names.push(name.to_string());
        out
    }

    /// Rows `rows`, in that order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            unit_ids: rows.iter().map(|&i| self.unit_ids[i].clone()).collect(),
            treatment: rows.iter().map(|&i| self.treatment[i]).collect(),
            outcome: rows.iter().map(|&i| self.outcome[i]).collect(),
            feature_names: self.feature_names.clone(),
            features: self.features.select_rows(rows),
        }
    }

    /// Mean outcome over control rows.
    pub fn control_mean(&self) -> f64 {
        let c: Vec<f64> = self
            .outcome
            .iter()
            .zip(&self.treatment)
            .filter(|(_, t)| **t < 0.5)
            .map(|(y, _)| *y)
            .collect();
        crate::stats::mean(&c)
    }
}

/// Cross-section of a cohort: treated rows are the cohort's units, control
/// rows every never-treated unit. Features are the outcome and covariates
/// aggregated over the `pre_window` periods before `window_start`, plus each
/// `<outcome>_lag<k>` column read at `window_start`; the outcome is
/// aggregated over the `post_window` periods after `window_end`.
pub fn to_cross_section(
    panel: &BalancedPanel,
    treatment: &TreatmentTable,
    cohort: &Cohort,
    pre_window: usize,
    post_window: usize,
    aggregation: Aggregation,
) -> Result<CrossSection> {
    let t_len = panel.n_periods();
    let ws = panel.grid.ceil_offset(cohort.window_start);
    let we = panel.grid.ceil_offset(cohort.window_end);
    let from = ws - pre_window as i64;
    let to = we + post_window as i64;
    if pre_window == 0 || post_window == 0 || from < 0 || to >= t_len as i64 {
        return Err(Error::WindowOutOfRange {
            cohort: cohort.index,
            needed_from: from,
            needed_to: to,
            grid_len: t_len,
        });
    }
    let (pre, post) = (from as usize..ws as usize, (we + 1) as usize..=to as usize);
    let treated: BTreeSet<&str> = cohort.treated_ids.iter().map(String::as_str).collect();
    let rows: Vec<usize> = (0..panel.n_units())
        .filter(|&i| {
            let u = panel.units[i].as_str();
            treated.contains(u) || !treatment.contains(u)
        })
        .collect();

    let mut names = alloc::vec![format!("{}_pre", panel.outcome_name)];
    let mut cols: Vec<Vec<f64>> = alloc::vec![rows
        .iter()
        .map(|&i| aggregation.apply(&panel.outcome_row(i)[pre.clone()]))
        .collect()];
    for (j, name) in panel.covariate_names.iter().enumerate() {
        let col: Vec<f64> = if parse_lag_column(&panel.outcome_name, name).is_some() {
            rows.iter().map(|&i| panel.covariate_row(j, i)[ws as usize]).collect()
        } else {
            rows.iter()
                .map(|&i| {
                    let v: Vec<f64> = panel.covariate_row(j, i)[pre.clone()]
                        .iter()
                        .copied()
                        .filter(|v| !v.is_nan())
                        .collect();
                    if v.is_empty() {
                        f64::NAN
                    } else {
                        aggregation.apply(&v)
                    }
                })
                .collect()
        };
        if col.iter().any(|v| v.is_nan()) {
            log::warn!("cohort {}: feature `{name}` has missing values and is left out", cohort.index);
            continue;
        }
        names.push(if parse_lag_column(&panel.outcome_name, name).is_some() {
            name.clone()
        } else {
            format!("{name}_pre")
        });
        cols.push(col);
    }
    let features = DMatrix::from_fn(rows.len(), cols.len(), |r, c| cols[c][r]);
    Ok(CrossSection {
        unit_ids: rows.iter().map(|&i| panel.units[i].clone()).collect(),
        treatment: rows
            .iter()
            .map(|&i| if treated.contains(panel.units[i].as_str()) { 1.0 } else { 0.0 })
            .collect(),
        outcome: rows
            .iter()
            .map(|&i| aggregation.apply(&panel.outcome_row(i)[post.clone()]))
            .collect(),
        feature_names: names,
        features,
    })
}

/// Cross-section straight from cross-sectional rows: covariates are the
/// features, every listed unit is treated and the rest are controls.
/// Expects imputed data with one row per unit.
pub fn cross_section_from_rows(panel: &PanelDataset, treatment: &TreatmentTable) -> Result<CrossSection> {
    let n = panel.rows.len();
    let p = panel.covariate_columns.len();
    let mut outcome = Vec::with_capacity(n);
    for r in &panel.rows {
        outcome.push(r.outcome.ok_or_else(|| {
            Error::InvalidConfig(format!("unit `{}` has a missing outcome; impute first", r.unit_id))
        })?);
    }
    let features = DMatrix::from_fn(n, p, |i, j| panel.rows[i].covariates[j].unwrap_or(0.0));
    Ok(CrossSection {
        unit_ids: panel.rows.iter().map(|r| r.unit_id.clone()).collect(),
        treatment: panel
            .rows
            .iter()
            .map(|r| if treatment.contains(&r.unit_id) { 1.0 } else { 0.0 })
            .collect(),
        outcome,
        feature_names: panel.covariate_columns.clone(),
        features,
    })
}
