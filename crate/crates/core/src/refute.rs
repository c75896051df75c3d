//! Post-estimation checks.
//!
//! DML results get four refutations, each re-running the original estimator
//! spec on perturbed cross-sections: a permuted (placebo) treatment, an extra
//! random common cause, a simulated unobserved confounder and random subsets.
//! Synthetic-control results get three sensitivity refits at the selected
//! rank: without covariates, on a downsample of the controls and on a shorter
//! pre-treatment window. A failed re-estimation fails its check.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::{index, SliceRandom};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cohort::CrossSection;
use crate::config::RefuteParams;
use crate::dataset::TreatmentTable;
use crate::dml::{estimate_dml, DmlSpec};
use crate::error::{Error, Result};
use crate::estimate::{weighted_combine, EffectEstimate};
use crate::gsc::{estimate_gsc, GscSpec, MIN_PRE_PERIODS};
use crate::preprocess::BalancedPanel;
use crate::rng::{derive_seed, derive_seed_str, rng_from, StudyRng};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    Refutation,
    Sensitivity,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationTest {
    pub name: String,
    pub original_ate: f64,
    pub perturbed_ate: Option<f64>,
    pub perturbed_se: Option<f64>,
    /// Bound the pass rule compared against, when it has one.
    pub threshold: Option<f64>,
    pub passed: bool,
    /// Error text when the re-estimation failed.
    pub error: Option<String>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub kind: CheckKind,
    pub tests: Vec<ValidationTest>,
    pub overall_passed: bool,
}

impl ValidationReport {
    fn new(kind: CheckKind, tests: Vec<ValidationTest>) -> Self {
        let overall_passed = tests.iter().all(|t| t.passed);
        Self {
            kind,
            tests,
            overall_passed,
        }
    }
}

fn failed(name: &str, original: f64, e: &Error) -> ValidationTest {
    ValidationTest {
        name: name.into(),
        original_ate: original,
        perturbed_ate: None,
        perturbed_se: None,
        threshold: None,
        passed: false,
        error: Some(e.to_string()),
        note: None,
    }
}

/// Re-estimate on one perturbed copy of every section and combine.
fn reestimate(
    sections: &[CrossSection],
    spec: &DmlSpec,
    seed: u64,
    mut perturb: impl FnMut(usize, &CrossSection, &mut StudyRng) -> Result<CrossSection>,
) -> Result<EffectEstimate> {
    let mut rng = rng_from(derive_seed_str(seed, "perturb"));
    let mut parts = Vec::with_capacity(sections.len());
    for (k, cs) in sections.iter().enumerate() {
        let p = perturb(k, cs, &mut rng)?;
        parts.push(estimate_dml(&p, spec, derive_seed(seed, k as u64))?);
    }
    weighted_combine(parts.iter())
}

fn normal_column(n: usize, rng: &mut StudyRng) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Permuted treatment: the effect should vanish.
fn placebo(sections: &[CrossSection], spec: &DmlSpec, original: f64, p: &RefuteParams, seed: u64) -> ValidationTest {
    const NAME: &str = "placebo_treatment";
    let est = reestimate(sections, spec, seed, |_, cs, rng| {
        let mut out = cs.clone();
        out.treatment.shuffle(rng);
        Ok(out)
    });
    match est {
        Ok(e) => {
            let threshold = p.placebo_se_multiple * e.se;
            ValidationTest {
                name: NAME.into(),
                original_ate: original,
                perturbed_ate: Some(e.ate),
                perturbed_se: Some(e.se),
                threshold: Some(threshold),
                passed: e.ate.abs() < threshold,
                error: None,
                note: None,
            }
        }
        Err(e) => failed(NAME, original, &e),
    }
}

/// Independent N(0, 1) feature: the effect should not move.
fn random_common_cause(sections: &[CrossSection], spec: &DmlSpec, orig: &EffectEstimate, p: &RefuteParams, seed: u64) -> ValidationTest {
    const NAME: &str = "random_common_cause";
    let est = reestimate(sections, spec, seed, |_, cs, rng| {
        let w = normal_column(cs.n_rows(), rng);
        Ok(cs.with_feature("random_common_cause", &w))
    });
    match est {
        Ok(e) => {
            let threshold = (p.random_cause_tolerance * orig.ate.abs()).max(p.random_cause_se_floor * orig.se);
            ValidationTest {
                name: NAME.into(),
                original_ate: orig.ate,
                perturbed_ate: Some(e.ate),
                perturbed_se: Some(e.se),
                threshold: Some(threshold),
                passed: (e.ate - orig.ate).abs() <= threshold,
                error: None,
                note: None,
            }
        }
        Err(e) => failed(NAME, orig.ate, &e),
    }
}

/// A confounder `U = s·z(T) + √(1 − s²)·η` left out of the features and added
/// to the outcome as `s·sd(Y)·U`. The effect should keep its sign and move by
/// at most the tolerance share.
fn unobserved_common_cause(sections: &[CrossSection], spec: &DmlSpec, original: f64, p: &RefuteParams, seed: u64) -> ValidationTest {
    const NAME: &str = "unobserved_common_cause";
    let s = p.unobserved_strength;
    let est = reestimate(sections, spec, seed, |_, cs, rng| {
        let (mt, st) = (stats::mean(&cs.treatment), stats::pop_std_dev(&cs.treatment));
        let sy = stats::pop_std_dev(&cs.outcome);
        let eta = normal_column(cs.n_rows(), rng);
        let mut out = cs.clone();
        for i in 0..cs.n_rows() {
            let u = s * (cs.treatment[i] - mt) / st + stats::sqrt(1.0 - s * s) * eta[i];
            out.outcome[i] += s * sy * u;
        }
        Ok(out)
    });
    match est {
        Ok(e) => {
            let threshold = p.unobserved_tolerance * original.abs();
            ValidationTest {
                name: NAME.into(),
                original_ate: original,
                perturbed_ate: Some(e.ate),
                perturbed_se: Some(e.se),
                threshold: Some(threshold),
                passed: stats::signum(e.ate) == stats::signum(original) && (e.ate - original).abs() <= threshold,
                error: None,
                note: None,
            }
        }
        Err(e) => failed(NAME, original, &e),
    }
}

/// Rows kept by a subset draw: the same share of treated and of control
/// rows, at least one of each.
fn stratified_subset(cs: &CrossSection, fraction: f64, rng: &mut StudyRng) -> Vec<usize> {
    let (treated, control): (Vec<usize>, Vec<usize>) = (0..cs.n_rows()).partition(|&i| cs.treatment[i] > 0.5);
    let mut rows = Vec::with_capacity(cs.n_rows());
    for group in [treated, control] {
        let k = ((fraction * group.len() as f64) as usize).clamp(1, group.len());
        rows.extend(index::sample(rng, group.len(), k).into_iter().map(|j| group[j]));
    }
    rows.sort_unstable();
    rows
}

/// Mean effect over random subsets should stay within the multiple of the
/// original standard error.
fn data_subset(sections: &[CrossSection], spec: &DmlSpec, orig: &EffectEstimate, p: &RefuteParams, seed: u64) -> ValidationTest {
    const NAME: &str = "data_subset";
    let runs: Result<Vec<EffectEstimate>> = (0..p.subset_runs)
        .map(|r| {
            reestimate(sections, spec, derive_seed(seed, r as u64), |_, cs, rng| {
                Ok(cs.select_rows(&stratified_subset(cs, p.subset_fraction, rng)))
            })
        })
        .collect();
    match runs {
        Ok(runs) => {
            let ates: Vec<f64> = runs.iter().map(|e| e.ate).collect();
            let ses: Vec<f64> = runs.iter().map(|e| e.se).collect();
            let m = stats::mean(&ates);
            let threshold = p.subset_se_multiple * orig.se;
            ValidationTest {
                name: NAME.into(),
                original_ate: orig.ate,
                perturbed_ate: Some(m),
                perturbed_se: Some(stats::mean(&ses)),
                threshold: Some(threshold),
                passed: (m - orig.ate).abs() <= threshold,
                error: None,
                note: None,
            }
        }
        Err(e) => failed(NAME, orig.ate, &e),
    }
}

/// Refutations of a DML estimate. `sections` are the cross-sections the
/// estimate was built from (one per cohort on panels); perturbed results are
/// recombined the same way.
pub fn refutation_suite(
    sections: &[CrossSection],
    spec: &DmlSpec,
    original: &EffectEstimate,
    params: &RefuteParams,
    seed: u64,
) -> ValidationReport {
    let tests = crate::par::map_indexed(4, |k| match k {
        0 => placebo(sections, spec, original.ate, params, derive_seed_str(seed, "placebo")),
        1 => random_common_cause(sections, spec, original, params, derive_seed_str(seed, "random_common_cause")),
        2 => unobserved_common_cause(sections, spec, original.ate, params, derive_seed_str(seed, "unobserved")),
        _ => data_subset(sections, spec, original, params, derive_seed_str(seed, "subset")),
    });
    ValidationReport::new(CheckKind::Refutation, tests)
}

fn sign_test(name: &str, original: f64, est: Result<EffectEstimate>, note: Option<String>) -> ValidationTest {
    match est {
        Ok(e) => ValidationTest {
            name: name.into(),
            original_ate: original,
            perturbed_ate: Some(e.ate),
            perturbed_se: Some(e.se),
            threshold: None,
            passed: stats::signum(e.ate) == stats::signum(original),
            error: None,
            note,
        },
        Err(e) => ValidationTest {
            note,
            ..failed(name, original, &e)
        },
    }
}

/// Sensitivity refits of a synthetic-control estimate at `rank`. Each passes
/// iff the effect keeps the sign of `original`.
pub fn sensitivity_suite(
    panel: &BalancedPanel,
    treatment: &TreatmentTable,
    spec: &GscSpec,
    rank: usize,
    original: &EffectEstimate,
    params: &RefuteParams,
    seed: u64,
) -> ValidationReport {
    let fixed = GscSpec {
        rank: Some(rank),
        ..spec.clone()
    };
    let tests = crate::par::map_indexed(3, |k| match k {
        0 => {
            let s = GscSpec {
                covariates: Vec::new(),
                ..fixed.clone()
            };
            let note = spec.covariates.is_empty().then(|| "no covariates to remove".to_string());
            let est = estimate_gsc(panel, treatment, &s, derive_seed_str(seed, "no_covariates")).map(|f| f.estimate);
            sign_test("remove_covariates", original.ate, est, note)
        }
        1 => {
            let seed = derive_seed_str(seed, "downsample");
            let (treated, controls): (Vec<usize>, Vec<usize>) =
                (0..panel.n_units()).partition(|&i| treatment.contains(&panel.units[i]));
            let keep = ((params.downsample_fraction * controls.len() as f64) as usize).clamp(1, controls.len());
            let mut rng = rng_from(seed);
            let mut rows: Vec<usize> = index::sample(&mut rng, controls.len(), keep)
                .into_iter()
                .map(|j| controls[j])
                .chain(treated)
                .collect();
            rows.sort_unstable();
            let est = estimate_gsc(&panel.select_units(&rows), treatment, &fixed, seed).map(|f| f.estimate);
            sign_test("downsample_controls", original.ate, est, None)
        }
        _ => {
            let pw = MIN_PRE_PERIODS.max(spec.pre_window.div_ceil(2));
            let s = GscSpec {
                pre_window: pw,
                rank: Some(rank.min(pw.saturating_sub(2))),
                ..fixed.clone()
            };
            let note = Some(format!("pre_window {} -> {pw}", spec.pre_window));
            let est = estimate_gsc(panel, treatment, &s, derive_seed_str(seed, "short_pre")).map(|f| f.estimate);
            sign_test("shorter_pre_window", original.ate, est, note)
        }
    });
    ValidationReport::new(CheckKind::Sensitivity, tests)
}
