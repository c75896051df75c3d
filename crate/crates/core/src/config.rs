//! Study configuration and estimator hyperparameters.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::cohort::{Aggregation, CohortParams, DEFAULT_MIN_TREATED};
use crate::dataset::Period;
use crate::error::{Error, Result};
use crate::estimate::EstimatorId;
use crate::learners::{BoostedParams, ForestParams, DEFAULT_RIDGE_LAMBDA};
use crate::preprocess::{ImputationPlan, ScaleMethod};

/// Thresholds and knobs of the post-estimation checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefuteParams {
    /// Placebo passes iff `|ate| < placebo_se_multiple · se`.
    pub placebo_se_multiple: f64,
    /// Random common cause passes iff the shift is within this share of
    /// `|ate|` or `random_cause_se_floor · se`, whichever is larger.
    pub random_cause_tolerance: f64,
    pub random_cause_se_floor: f64,
    /// Strength of the simulated confounder, in standard deviations.
    pub unobserved_strength: f64,
    pub unobserved_tolerance: f64,
    pub subset_fraction: f64,
    pub subset_runs: usize,
    pub subset_se_multiple: f64,
    /// Share of controls kept by the synthetic-control downsampling check.
    pub downsample_fraction: f64,
}

impl Default for RefuteParams {
    fn default() -> Self {
        Self {
            placebo_se_multiple: 2.0,
            random_cause_tolerance: 0.10,
            random_cause_se_floor: 2.0,
            unobserved_strength: 0.2,
            unobserved_tolerance: 0.30,
            subset_fraction: 0.8,
            subset_runs: 5,
            subset_se_multiple: 2.0,
            downsample_fraction: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparameters {
    pub k_folds: usize,
    /// Cross-fitting repetitions; the median estimate is kept.
    pub dml_repetitions: usize,
    pub ridge_lambda: f64,
    pub forest: ForestParams,
    pub boosted: BoostedParams,
    pub bootstrap_b: usize,
    pub r_max: usize,
    /// Fix the factor rank instead of selecting it by cross-validation.
    pub gsc_rank: Option<usize>,
    pub ife_tol: f64,
    pub ife_max_iter: usize,
    pub aggregation: Aggregation,
    /// Outcome lags used as cross-section features; defaults to
    /// `1..=pre_window`.
    pub lags: Option<Vec<usize>>,
    pub scale_method: ScaleMethod,
    pub impute: ImputationPlan,
    pub refute: RefuteParams,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            k_folds: 5,
            dml_repetitions: 1,
            ridge_lambda: DEFAULT_RIDGE_LAMBDA,
            forest: ForestParams::default(),
            boosted: BoostedParams::default(),
            bootstrap_b: 200,
            r_max: 5,
            gsc_rank: None,
            ife_tol: 1e-7,
            ife_max_iter: 1000,
            aggregation: Aggregation::Mean,
            lags: None,
            scale_method: ScaleMethod::Zscore,
            impute: ImputationPlan::default(),
            refute: RefuteParams::default(),
        }
    }
}

impl Hyperparameters {
    pub const KEYS: &'static [&'static str] = &[
        "k_folds",
        "dml_repetitions",
        "ridge_lambda",
        "forest",
        "boosted",
        "bootstrap_b",
        "r_max",
        "gsc_rank",
        "ife_tol",
        "ife_max_iter",
        "aggregation",
        "lags",
        "scale_method",
        "impute",
        "refute",
    ];

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidHyperparameter(m.into()));
        if self.k_folds < 2 {
            return bad("k_folds must be at least 2");
        }
        if self.dml_repetitions == 0 {
            return bad("dml_repetitions must be positive");
        }
        if !(self.ridge_lambda >= 0.0) {
            return bad("ridge_lambda must be >= 0");
        }
        if self.bootstrap_b < 2 {
            return bad("bootstrap_b must be at least 2");
        }
        if !(self.ife_tol > 0.0) || self.ife_max_iter == 0 {
            return bad("ife_tol and ife_max_iter must be positive");
        }
        if self.lags.as_ref().is_some_and(|l| l.contains(&0)) {
            return bad("lags must be positive");
        }
        let r = &self.refute;
        if !(r.subset_fraction > 0.0 && r.subset_fraction < 1.0) || !(r.downsample_fraction > 0.0 && r.downsample_fraction < 1.0) {
            return bad("subset_fraction and downsample_fraction must be in (0, 1)");
        }
        if r.subset_runs == 0 {
            return bad("subset_runs must be positive");
        }
        self.forest.validate()?;
        self.boosted.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub time_column: String,
    pub unit_column: String,
    pub outcome_column: String,
    pub pre_window: usize,
    pub post_window: usize,
    #[serde(default)]
    pub algorithm: Option<EstimatorId>,
    /// Covariates to use; `None` means every non-key observation column.
    #[serde(default)]
    pub covariate_columns: Option<Vec<String>>,
    #[serde(default)]
    pub scale_columns: Vec<String>,
    #[serde(default = "default_treatment_unit_column")]
    pub treatment_unit_column: String,
    #[serde(default = "default_treatment_date_column")]
    pub treatment_date_column: String,
    #[serde(default = "default_min_times")]
    pub cohort_min_times: usize,
    /// `None` means one calendar month of grid periods.
    #[serde(default)]
    pub cohort_max_times: Option<usize>,
    #[serde(default = "default_min_treated")]
    pub cohort_min_treated: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub hyperparameters: Hyperparameters,
}

fn default_treatment_unit_column() -> String {
    "unit_id".into()
}
fn default_treatment_date_column() -> String {
    "treatment_date".into()
}
fn default_min_times() -> usize {
    1
}
fn default_min_treated() -> usize {
    DEFAULT_MIN_TREATED
}

impl StudyConfig {
    pub const MANDATORY: &'static [&'static str] =
        &["time_column", "unit_column", "outcome_column", "pre_window", "post_window"];
    pub const KEYS: &'static [&'static str] = &[
        "time_column",
        "unit_column",
        "outcome_column",
        "pre_window",
        "post_window",
        "algorithm",
        "covariate_columns",
        "scale_columns",
        "treatment_unit_column",
        "treatment_date_column",
        "cohort_min_times",
        "cohort_max_times",
        "cohort_min_treated",
        "seed",
        "hyperparameters",
    ];

    /// Config with defaults and the given mandatory fields.
    pub fn new(
        time_column: impl Into<String>,
        unit_column: impl Into<String>,
        outcome_column: impl Into<String>,
        pre_window: usize,
        post_window: usize,
    ) -> Self {
        Self {
            time_column: time_column.into(),
            unit_column: unit_column.into(),
            outcome_column: outcome_column.into(),
            pre_window,
            post_window,
            algorithm: None,
            covariate_columns: None,
            scale_columns: Vec::new(),
            treatment_unit_column: default_treatment_unit_column(),
            treatment_date_column: default_treatment_date_column(),
            cohort_min_times: 1,
            cohort_max_times: None,
            cohort_min_treated: DEFAULT_MIN_TREATED,
            seed: 0,
            hyperparameters: Hyperparameters::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pre_window == 0 || self.post_window == 0 {
            return Err(Error::InvalidConfig("pre_window and post_window must be >= 1".into()));
        }
        if self.cohort_min_times == 0 || self.cohort_min_treated == 0 {
            return Err(Error::InvalidConfig("cohort_min_times and cohort_min_treated must be >= 1".into()));
        }
        if let Some(max) = self.cohort_max_times {
            if self.cohort_min_times > max {
                return Err(Error::InvalidConfig(format!(
                    "cohort_min_times {} exceeds cohort_max_times {max}",
                    self.cohort_min_times
                )));
            }
        }
        self.hyperparameters.validate()
    }

    /// Cohort limits on a grid with the given period.
    pub fn cohort_params(&self, period: Option<Period>) -> CohortParams {
        let default_max = period.map_or(1, Period::periods_per_month);
        CohortParams {
            min_times: self.cohort_min_times,
            max_times: self.cohort_max_times.unwrap_or(default_max.max(self.cohort_min_times)),
            min_treated: self.cohort_min_treated,
        }
    }

    /// Lags used for cross-section features.
    pub fn lags(&self) -> Vec<usize> {
        self.hyperparameters
            .lags
            .clone()
            .unwrap_or_else(|| (1..=self.pre_window).collect())
    }
}
