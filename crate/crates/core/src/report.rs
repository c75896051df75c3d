//! Uplift and the series behind the trend and fit plots.

use alloc::vec::Vec;

use chrono::NaiveDate;
use serde::Serialize;

use crate::cohort::Cohort;
use crate::dataset::TreatmentTable;
use crate::error::{Error, Result};
use crate::estimate::EffectEstimate;
use crate::gsc::CounterfactualSeries;
use crate::preprocess::BalancedPanel;

/// Baselines smaller than this in magnitude count as zero.
pub const MIN_BASELINE: f64 = 1e-12;

/// `100 · ate / control_post_mean`.
pub fn compute_uplift(estimate: &EffectEstimate, control_post_mean: f64) -> Result<f64> {
    if !(control_post_mean.abs() >= MIN_BASELINE) {
        return Err(Error::ZeroControlBaseline);
    }
    Ok(100.0 * estimate.ate / control_post_mean)
}

/// Mean outcome of a cohort's treated units and of the never-treated units
/// around the cohort window.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrendSeries {
    pub cohort_index: usize,
    pub dates: Vec<NaiveDate>,
    pub treated_mean: Vec<f64>,
    pub control_mean: Vec<f64>,
    pub window_start: NaiveDate,
    pub window_end: NaiveDate,
}

/// Periods `[window_start − pre_window, window_end + post_window]`, clipped to
/// the grid.
pub fn trend_series(
    panel: &BalancedPanel,
    treatment: &TreatmentTable,
    cohort: &Cohort,
    pre_window: usize,
    post_window: usize,
) -> TrendSeries {
    let last = panel.n_periods() as i64 - 1;
    let from = (panel.grid.ceil_offset(cohort.window_start) - pre_window as i64).clamp(0, last) as usize;
    let to = (panel.grid.ceil_offset(cohort.window_end) + post_window as i64).clamp(0, last) as usize;
    let treated: Vec<usize> = cohort.treated_ids.iter().filter_map(|u| panel.unit_index(u)).collect();
    let controls: Vec<usize> = (0..panel.n_units()).filter(|&i| !treatment.contains(&panel.units[i])).collect();
    let mean_at = |rows: &[usize], t: usize| rows.iter().map(|&i| panel.outcome_row(i)[t]).sum::<f64>() / rows.len() as f64;
    TrendSeries {
        cohort_index: cohort.index,
        dates: (from..=to).filter_map(|t| panel.grid.date(t as i64)).collect(),
        treated_mean: (from..=to).map(|t| mean_at(&treated, t)).collect(),
        control_mean: (from..=to).map(|t| mean_at(&controls, t)).collect(),
        window_start: cohort.window_start,
        window_end: cohort.window_end,
    }
}

/// Treated-average actual and synthetic outcome over the whole grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitSeries {
    pub dates: Vec<NaiveDate>,
    pub actual: Vec<f64>,
    pub synthetic: Vec<f64>,
    /// Earliest treatment date among the treated units.
    pub treatment_date: NaiveDate,
}

pub fn fit_series(series: &CounterfactualSeries) -> FitSeries {
    let (actual, synthetic) = series.mean_paths();
    let first = series.units.iter().map(|u| u.treatment_index).min().unwrap_or(0);
    FitSeries {
        treatment_date: series.dates[first.min(series.dates.len() - 1)],
        dates: series.dates.clone(),
        actual,
        synthetic,
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct PlotData {
    pub trends: Vec<TrendSeries>,
    pub gsc_fit: Option<FitSeries>,
}
