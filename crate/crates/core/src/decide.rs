//! The two-stage decision path and the end-to-end study.
//!
//! Stage one reads [`RuleFacts`] and keeps the estimators whose rules all
//! hold. Stage two runs every candidate and keeps the one with the smallest
//! standard error among those whose point estimate falls inside the 95%
//! interval of at least two other candidates.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::Serialize;

use crate::cohort::{
    build_cohorts, cross_section_from_rows, to_cross_section, Cohort, CohortEstimate, CohortParams, CrossSection,
    DEFAULT_MIN_TREATED,
};
use crate::config::StudyConfig;
use crate::dataset::{check_study_inputs, detect_shape, DataShape, PanelDataset, RuleFacts, TreatmentTable};
use crate::dml::{estimate_dml, DmlSpec};
use crate::error::{Error, Result};
use crate::estimate::{weighted_combine, EffectEstimate, EstimatorId};
use crate::gsc::{estimate_gsc, GscFit, GscSpec, MAX_EVENTS, MIN_PRE_PERIODS};
use crate::preprocess::{build_lag_features, impute_missing, scale_columns, BalancedPanel, ImputationLog};
use crate::refute::{refutation_suite, sensitivity_suite, ValidationReport};
use crate::report::{compute_uplift, fit_series, trend_series, PlotData};
use crate::rng::{derive_seed, derive_seed_str};

/// Synthetic control is ruled out at or above this many treated units in a
/// cohort.
pub const GSC_MAX_TREATED_PER_COHORT: usize = 50;
pub const GSC_MAX_CONTROLS: usize = 5000;
/// Above this many covariates synthetic control gets a cost warning.
pub const GSC_COVARIATE_WARNING: usize = 5;
/// Treated units a panel needs before its cohort cross-sections are used.
pub const DML_MIN_TREATED_UNITS: usize = DEFAULT_MIN_TREATED;
/// Peers whose interval must contain a candidate's estimate.
pub const MIN_VOTES: usize = 2;

/// Facts the first stage reads. `treatment` may be off the grid; it is
/// snapped first.
pub fn summarize(panel: &PanelDataset, treatment: &TreatmentTable, params: &CohortParams) -> Result<RuleFacts> {
    let shape = detect_shape(panel);
    let units = panel.units();
    let n_control_units = units.iter().filter(|u| !treatment.contains(u)).count();
    let mut facts = RuleFacts {
        total_events: panel.rows.len(),
        shape,
        n_treated_units: treatment.len(),
        max_treated_per_cohort: treatment.len(),
        n_control_units,
        n_covariates: panel.covariate_columns.len(),
        pre_periods: 0,
        post_periods: 0,
    };
    if let (DataShape::Panel, Some(grid)) = (shape, panel.grid()) {
        let snapped = grid.snap_treatment(treatment);
        let cohorts = build_cohorts(&snapped, params)?;
        facts.max_treated_per_cohort = cohorts.iter().map(|c| c.n_treated).max().unwrap_or(0);
        let offsets: Vec<i64> = snapped.rows().iter().map(|r| grid.ceil_offset(r.treatment_date)).collect();
        let len = grid.len as i64;
        let first = offsets.iter().copied().min().unwrap_or(0);
        let last = offsets.iter().copied().max().unwrap_or(0);
        facts.pre_periods = first.clamp(0, len) as usize;
        facts.post_periods = (len - 1 - last).max(0) as usize;
    }
    Ok(facts)
}

/// One stage-one rule and whether it held.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RuleCheck {
    /// `gsc` or `dml`.
    pub family: &'static str,
    pub rule: String,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CandidateSet {
    pub estimator_ids: Vec<EstimatorId>,
    /// Every rule evaluated, in order.
    pub rules: Vec<RuleCheck>,
    /// The rules that held.
    pub rationale: Vec<String>,
    pub warnings: Vec<String>,
}

fn check(family: &'static str, passed: bool, rule: String) -> RuleCheck {
    RuleCheck { family, rule, passed }
}

fn gsc_rules(f: &RuleFacts) -> Vec<RuleCheck> {
    alloc::vec![
        check("gsc", f.shape == DataShape::Panel, format!("data shape {:?} is panel", f.shape)),
        check("gsc", f.total_events < MAX_EVENTS, format!("total events {} < {MAX_EVENTS}", f.total_events)),
        check(
            "gsc",
            f.max_treated_per_cohort < GSC_MAX_TREATED_PER_COHORT,
            format!("max treated per cohort {} < {GSC_MAX_TREATED_PER_COHORT}", f.max_treated_per_cohort),
        ),
        check(
            "gsc",
            f.n_control_units < GSC_MAX_CONTROLS,
            format!("control units {} < {GSC_MAX_CONTROLS}", f.n_control_units),
        ),
        check("gsc", f.pre_periods >= MIN_PRE_PERIODS, format!("pre-treatment periods {} >= {MIN_PRE_PERIODS}", f.pre_periods)),
    ]
}

fn dml_rules(f: &RuleFacts) -> Vec<RuleCheck> {
    match f.shape {
        DataShape::CrossSectional => alloc::vec![check("dml", true, "data shape is cross-sectional".into())],
        DataShape::Panel => alloc::vec![
            check("dml", f.pre_periods >= 1, format!("pre-treatment periods {} >= 1", f.pre_periods)),
            check("dml", f.post_periods >= 1, format!("post-treatment periods {} >= 1", f.post_periods)),
            check(
                "dml",
                f.n_treated_units >= DML_MIN_TREATED_UNITS,
                format!("treated units {} >= {DML_MIN_TREATED_UNITS}", f.n_treated_units),
            ),
        ],
    }
}

/// Rule-based candidate set. A pure function of `facts`.
pub fn stage_one(facts: &RuleFacts) -> Result<CandidateSet> {
    let gsc = gsc_rules(facts);
    let dml = dml_rules(facts);
    let mut ids = Vec::new();
    let mut warnings = Vec::new();
    if gsc.iter().all(|r| r.passed) {
        ids.push(EstimatorId::Gsc);
        if facts.n_covariates > GSC_COVARIATE_WARNING {
            warnings.push(format!(
                "{} covariates: synthetic control cost grows with each covariate",
                facts.n_covariates
            ));
        }
    }
    if dml.iter().all(|r| r.passed) {
        ids.extend(EstimatorId::DML);
    }
    let rules: Vec<RuleCheck> = gsc.into_iter().chain(dml).collect();
    if ids.is_empty() {
        return Err(Error::NoFeasibleEstimator(
            rules.iter().filter(|r| !r.passed).map(|r| format!("{}: {}", r.family, r.rule)).collect(),
        ));
    }
    Ok(CandidateSet {
        estimator_ids: ids,
        rationale: rules.iter().filter(|r| r.passed).map(|r| format!("{}: {}", r.family, r.rule)).collect(),
        rules,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EligibilityRow {
    pub estimator_id: EstimatorId,
    pub ate: f64,
    pub se: f64,
    /// Other candidates whose 95% interval contains this estimate.
    pub votes: Vec<EstimatorId>,
    pub eligible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Selection {
    pub selected: EffectEstimate,
    pub eligibility: Vec<EligibilityRow>,
    /// Fewer than three candidates or none eligible: least standard error
    /// overall was taken.
    pub voting_degraded: bool,
}

fn least_se<'a>(it: impl Iterator<Item = &'a EffectEstimate>) -> Option<&'a EffectEstimate> {
    // candidates arrive sorted by id, so `min_by` keeps the first on ties
    it.min_by(|a, b| a.se.total_cmp(&b.se))
}

/// Least-standard-error candidate subject to the voting condition.
/// Independent of the order of `candidates`.
pub fn stage_two(candidates: &[EffectEstimate]) -> Result<Selection> {
    let mut c: Vec<EffectEstimate> = candidates.to_vec();
    c.sort_by_key(|e| e.estimator_id);
    let eligibility: Vec<EligibilityRow> = c
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let votes: Vec<EstimatorId> = c
                .iter()
                .enumerate()
                .filter(|(j, p)| *j != i && p.contains(e.ate))
                .map(|(_, p)| p.estimator_id)
                .collect();
            EligibilityRow {
                estimator_id: e.estimator_id,
                ate: e.ate,
                se: e.se,
                eligible: votes.len() >= MIN_VOTES,
                votes,
            }
        })
        .collect();
    let voted = least_se(c.iter().zip(&eligibility).filter(|(_, r)| r.eligible).map(|(e, _)| e));
    let (selected, voting_degraded) = match voted {
        Some(e) if c.len() > MIN_VOTES => (e, false),
        _ => (least_se(c.iter()).ok_or(Error::NoEstimates)?, true),
    };
    Ok(Selection {
        selected: selected.clone(),
        eligibility,
        voting_degraded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateFailure {
    pub estimator_id: EstimatorId,
    pub code: &'static str,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecisionTrace {
    pub candidate_set: CandidateSet,
    /// Estimator forced by the config; stage two is skipped when set.
    pub override_algorithm: Option<EstimatorId>,
    pub eligibility: Vec<EligibilityRow>,
    pub voting_degraded: bool,
    pub failures: Vec<CandidateFailure>,
}

/// Fitted synthetic-control details kept for the report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GscSummary {
    pub rank: usize,
    /// Cross-validated error per rank, when the rank was selected.
    pub rank_mspe: Option<Vec<f64>>,
    pub covariates: Vec<String>,
    pub beta: Vec<f64>,
    pub pre_treatment_rmse: f64,
    pub att_by_event: Vec<f64>,
    pub bootstrap_draws: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyResult {
    pub seed: u64,
    pub facts: RuleFacts,
    pub selected: EffectEstimate,
    pub candidates: Vec<EffectEstimate>,
    pub cohorts: Vec<Cohort>,
    /// Per-cohort estimates of the selected estimator (DML on panels).
    pub cohort_estimates: Vec<CohortEstimate>,
    /// Mean control outcome over the post window.
    pub control_baseline: f64,
    pub uplift_percent: Option<f64>,
    pub validation: ValidationReport,
    pub decision_trace: DecisionTrace,
    pub gsc: Option<GscSummary>,
    pub imputation: ImputationLog,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub plots: PlotData,
}

/// What a candidate run leaves behind for refutation and reporting.
enum Run {
    Gsc(GscFit),
    Dml {
        estimate: EffectEstimate,
        cohorts: Vec<CohortEstimate>,
        sections: Vec<CrossSection>,
        baseline: f64,
        spec: DmlSpec,
    },
}

impl Run {
    fn estimate(&self) -> &EffectEstimate {
        match self {
            Run::Gsc(f) => &f.estimate,
            Run::Dml { estimate, .. } => estimate,
        }
    }

    fn baseline(&self) -> f64 {
        match self {
            Run::Gsc(f) => f.control_post_mean,
            Run::Dml { baseline, .. } => *baseline,
        }
    }
}

/// Prepared inputs shared by every candidate.
struct Prepared<'a> {
    config: &'a StudyConfig,
    shape: DataShape,
    /// Imputed and scaled observations.
    data: PanelDataset,
    /// Treatment on the grid (panels) or as given (cross-sections).
    treatment: TreatmentTable,
    balanced: Option<BalancedPanel>,
    cohorts: Vec<Cohort>,
}

impl Prepared<'_> {
    fn gsc_spec(&self) -> GscSpec {
        let hp = &self.config.hyperparameters;
        GscSpec {
            pre_window: self.config.pre_window,
            post_window: self.config.post_window,
            covariates: self.data.covariate_columns.clone(),
            rank: hp.gsc_rank,
            r_max: hp.r_max,
            bootstrap_b: hp.bootstrap_b,
            tol: hp.ife_tol,
            max_iter: hp.ife_max_iter,
        }
    }

    fn run(&self, id: EstimatorId, seed: u64, warnings: &mut Vec<String>) -> Result<Run> {
        if id == EstimatorId::Gsc {
            let bp = self.balanced.as_ref().ok_or(Error::IrregularGrid("synthetic control needs a panel".into()))?;
            return estimate_gsc(bp, &self.treatment, &self.gsc_spec(), seed).map(Run::Gsc);
        }
        let spec = DmlSpec::for_estimator(id, &self.config.hyperparameters)?;
        if self.shape == DataShape::CrossSectional {
            let cs = cross_section_from_rows(&self.data, &self.treatment)?;
            let estimate = estimate_dml(&cs, &spec, seed)?;
            return Ok(Run::Dml {
                baseline: cs.control_mean(),
                cohorts: Vec::new(),
                sections: alloc::vec![cs],
                estimate,
                spec,
            });
        }
        let lagged = BalancedPanel::from_dataset(&build_lag_features(&self.data, &self.config.lags(), &[])?)?;
        let hp = &self.config.hyperparameters;
        let mut cohorts = Vec::new();
        let mut sections = Vec::new();
        let mut first_err = None;
        for c in &self.cohorts {
            let cs = to_cross_section(
                &lagged,
                &self.treatment,
                c,
                self.config.pre_window,
                self.config.post_window,
                hp.aggregation,
            )
            .and_then(|cs| estimate_dml(&cs, &spec, derive_seed(seed, c.index as u64)).map(|e| (cs, e)));
            match cs {
                Ok((cs, estimate)) => {
                    sections.push(cs);
                    cohorts.push(CohortEstimate {
                        cohort: c.clone(),
                        estimate,
                    });
                }
                Err(e) => {
                    warnings.push(format!("{id}: cohort {} skipped: {e}", c.index));
                    first_err.get_or_insert(e);
                }
            }
        }
        if cohorts.is_empty() {
            return Err(first_err.unwrap_or(Error::NoEstimates));
        }
        let estimate = weighted_combine(cohorts.iter().map(|c| &c.estimate))?;
        let w: f64 = sections.iter().map(|s| s.n_treated() as f64).sum();
        let baseline = sections.iter().map(|s| s.n_treated() as f64 * s.control_mean()).sum::<f64>() / w;
        Ok(Run::Dml {
            estimate,
            cohorts,
            sections,
            baseline,
            spec,
        })
    }
}

fn select_covariates(panel: &PanelDataset, names: &[String]) -> Result<PanelDataset> {
    let idx: Vec<usize> = names
        .iter()
        .map(|n| panel.covariate_index(n).ok_or_else(|| Error::UnknownColumn(n.clone())))
        .collect::<Result<_>>()?;
    let mut out = panel.clone();
    out.covariate_columns = names.to_vec();
    for r in &mut out.rows {
        r.covariates = idx.iter().map(|&j| r.covariates[j]).collect();
    }
    Ok(out)
}

fn prepare<'a>(
    treatment: &TreatmentTable,
    panel: &PanelDataset,
    config: &'a StudyConfig,
    warnings: &mut Vec<String>,
) -> Result<(Prepared<'a>, ImputationLog, RuleFacts)> {
    let hp = &config.hyperparameters;
    let panel = match &config.covariate_columns {
        Some(names) => select_covariates(panel, names)?,
        None => panel.clone(),
    };
    let (mut data, log) = impute_missing(&panel, hp.impute);
    warnings.extend(log.warnings.iter().cloned());
    let treatment = if log.dropped_units.is_empty() {
        treatment.clone()
    } else {
        let keep = treatment.rows().iter().filter(|r| !log.dropped_units.contains(&r.unit_id)).cloned().collect();
        TreatmentTable::new(keep)?
    };
    if data.rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_study_inputs(&data, &treatment)?;
    if !config.scale_columns.is_empty() {
        if config.scale_columns.contains(&data.outcome_column) {
            warnings.push("the outcome is scaled: effects are in scaled units".into());
        }
        let (scaled, _, w) = scale_columns(&data, &config.scale_columns, hp.scale_method)?;
        warnings.extend(w);
        data = scaled;
    }
    let shape = detect_shape(&data);
    let params = config.cohort_params(data.period);
    let facts = summarize(&data, &treatment, &params)?;
    let (treatment, balanced, cohorts) = match (shape, data.grid()) {
        (DataShape::Panel, Some(grid)) => {
            let snapped = grid.snap_treatment(&treatment);
            let cohorts = build_cohorts(&snapped, &params)?;
            (snapped, Some(BalancedPanel::from_dataset(&data)?), cohorts)
        }
        _ => (treatment, None, Vec::new()),
    };
    Ok((
        Prepared {
            config,
            shape,
            data,
            treatment,
            balanced,
            cohorts,
        },
        log,
        facts,
    ))
}

/// The full study: preprocess, choose candidates, estimate, select, validate.
/// Deterministic given `config.seed`.
pub fn run_study(treatment: &TreatmentTable, panel: &PanelDataset, config: &StudyConfig) -> Result<StudyResult> {
    config.validate().map_err(|e| e.at("config"))?;
    let seed = config.seed;
    let mut warnings = Vec::new();
    let (prep, imputation, facts) = prepare(treatment, panel, config, &mut warnings).map_err(|e| e.at("preprocess"))?;
    let mut candidate_set = stage_one(&facts).map_err(|e| e.at("stage_one"))?;
    warnings.extend(candidate_set.warnings.iter().cloned());
    if let Some(a) = config.algorithm {
        if !candidate_set.estimator_ids.contains(&a) {
            let mut why: Vec<String> = alloc::vec![format!("requested algorithm {a} is not feasible")];
            why.extend(candidate_set.rules.iter().filter(|r| !r.passed).map(|r| format!("{}: {}", r.family, r.rule)));
            return Err(Error::NoFeasibleEstimator(why).at("stage_one"));
        }
        candidate_set.estimator_ids.retain(|id| *id == a);
    }

    let ids = candidate_set.estimator_ids.clone();
    let runs = crate::par::map_indexed(ids.len(), |k| {
        let mut w = Vec::new();
        let r = prep.run(ids[k], derive_seed_str(seed, ids[k].as_str()), &mut w);
        (r, w)
    });
    let mut ok: Vec<(EstimatorId, Run)> = Vec::new();
    let mut failures = Vec::new();
    let mut first_err = None;
    for (id, (r, w)) in ids.iter().zip(runs) {
        warnings.extend(w);
        match r {
            Ok(run) => ok.push((*id, run)),
            Err(e) => {
                log::warn!("{id} failed: {e}");
                failures.push(CandidateFailure {
                    estimator_id: *id,
                    code: e.code(),
                    message: e.to_string(),
                });
                first_err.get_or_insert(e);
            }
        }
    }
    if ok.is_empty() {
        return Err(first_err.unwrap_or(Error::NoEstimates).at("estimate"));
    }
    let candidates: Vec<EffectEstimate> = ok.iter().map(|(_, r)| r.estimate().clone()).collect();
    let (selected, eligibility, voting_degraded) = if config.algorithm.is_some() {
        (candidates[0].clone(), Vec::new(), false)
    } else {
        let s = stage_two(&candidates).map_err(|e| e.at("stage_two"))?;
        (s.selected, s.eligibility, s.voting_degraded)
    };
    let run = &ok.iter().find(|(id, _)| *id == selected.estimator_id).expect("selected from the runs").1;

    let hp = &config.hyperparameters;
    let refute_seed = derive_seed_str(seed, "refute");
    let validation = match run {
        Run::Gsc(fit) => sensitivity_suite(
            prep.balanced.as_ref().expect("gsc ran on a panel"),
            &prep.treatment,
            &prep.gsc_spec(),
            fit.model.rank,
            &fit.estimate,
            &hp.refute,
            refute_seed,
        ),
        Run::Dml { sections, spec, estimate, .. } => refutation_suite(sections, spec, estimate, &hp.refute, refute_seed),
    };
    let control_baseline = run.baseline();
    let uplift_percent = match compute_uplift(&selected, control_baseline) {
        Ok(u) => Some(u),
        Err(e) => {
            warnings.push(e.to_string());
            None
        }
    };

    let mut plots = PlotData::default();
    if let Some(bp) = &prep.balanced {
        plots.trends = prep
            .cohorts
            .iter()
            .map(|c| trend_series(bp, &prep.treatment, c, config.pre_window, config.post_window))
            .collect();
    }
    let mut gsc = None;
    if let Some((_, Run::Gsc(fit))) = ok.iter().find(|(id, _)| *id == EstimatorId::Gsc) {
        plots.gsc_fit = Some(fit_series(&fit.series));
        gsc = Some(GscSummary {
            rank: fit.model.rank,
            rank_mspe: fit.rank_selection.as_ref().map(|r| r.mspe.clone()),
            covariates: prep.data.covariate_columns.clone(),
            beta: fit.model.beta.clone(),
            pre_treatment_rmse: fit.series.pre_treatment_rmse(),
            att_by_event: fit.series.att_by_event.clone(),
            bootstrap_draws: fit.bootstrap_draws,
        });
    }
    let cohort_estimates = match run {
        Run::Dml { cohorts, .. } => cohorts.clone(),
        Run::Gsc(_) => Vec::new(),
    };
    Ok(StudyResult {
        seed,
        facts,
        selected,
        candidates,
        cohorts: prep.cohorts.clone(),
        cohort_estimates,
        control_baseline,
        uplift_percent,
        validation,
        decision_trace: DecisionTrace {
            candidate_set,
            override_algorithm: config.algorithm,
            eligibility,
            voting_degraded,
            failures,
        },
        gsc,
        imputation,
        warnings,
        plots,
    })
}

/// A study error that names the failing stage.
pub fn stage_of(e: &Error) -> Option<&'static str> {
    match e {
        Error::Stage { stage, .. } => Some(stage),
        _ => None,
    }
}
