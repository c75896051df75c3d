//! Generalized synthetic control with interactive fixed effects.
//!
//! Controls follow `Yᵢₜ = Xᵢₜβ + αᵢ + ξₜ + λᵢ'fₜ + εᵢₜ`. The model is fitted
//! on the never-treated units only. Every treated unit then gets its own
//! intercept and loadings from a least-squares fit of its pre-treatment
//! residuals on the factors, and the fitted model extended past the
//! treatment date is its untreated counterfactual.
//!
//! The additive effects are profiled out by two-way demeaning, which is exact
//! on a balanced panel, so the alternating fit only has to switch between β
//! (least squares on demeaned data) and the factors (leading eigenvectors of
//! the residual cross-product). Without covariates a single decomposition is
//! the exact optimum.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::TreatmentTable;
use crate::error::{Error, Result};
use crate::estimate::{EffectEstimate, EstimatorId};
use crate::linalg::{lstsq, top_eigen};
use crate::par;
use crate::preprocess::BalancedPanel;
use crate::rng::{derive_seed, derive_seed_str, rng_from};
use crate::stats;

/// Fewest pre-treatment periods the method accepts.
pub const MIN_PRE_PERIODS: usize = 7;
/// Largest panel (units × periods) the estimator will take on.
pub const MAX_EVENTS: usize = 500_000;

/// Interactive fixed-effects fit on a balanced unit × period block.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    pub rank: usize,
    pub beta: Vec<f64>,
    /// `false` for covariates without variation once unit and period means
    /// are removed (for instance unit-static ones); their β is fixed at 0.
    pub identified: Vec<bool>,
    /// Periods × rank, orthonormal columns.
    pub factors: DMatrix<f64>,
    /// Units × rank.
    pub loadings: DMatrix<f64>,
    /// Unit intercepts, summing to zero.
    pub alpha: Vec<f64>,
    /// Period intercepts, carrying the grand mean.
    pub xi: Vec<f64>,
    /// Sum of squared residuals after each iteration.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
}

impl FactorModel {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().unwrap_or(&0.0)
    }

    /// `Xᵢₜβ + ξₜ` for one unit's covariate rows (`x[j][t]`).
    fn base(&self, x: &[&[f64]], t: usize) -> f64 {
        self.xi[t] + x.iter().zip(&self.beta).map(|(col, b)| col[t] * b).sum::<f64>()
    }
}

fn double_demean(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, t) = m.shape();
    let rows: Vec<f64> = (0..n).map(|i| m.row(i).sum() / t as f64).collect();
    let cols: Vec<f64> = (0..t).map(|j| m.column(j).sum() / n as f64).collect();
    let grand = m.sum() / (n * t) as f64;
    DMatrix::from_fn(n, t, |i, j| m[(i, j)] - rows[i] - cols[j] + grand)
}

/// Alternating least squares for the interactive fixed-effects model.
///
/// Stops when the relative decrease of the objective drops below `tol` or
/// after `max_iter` iterations (then with a warning and the last iterate).
pub fn fit_ife(y: &DMatrix<f64>, x: &[DMatrix<f64>], rank: usize, tol: f64, max_iter: usize) -> Result<FactorModel> {
    let (n, t) = y.shape();
    let max = n.min(t).saturating_sub(1);
    if rank > max {
        return Err(Error::RankTooLarge { requested: rank, max });
    }
    if let Some(m) = x.iter().find(|m| m.shape() != (n, t)) {
        return Err(Error::DimensionMismatch(format!(
            "covariate block is {:?}, outcome block is {:?}",
            m.shape(),
            (n, t)
        )));
    }
    let ydd = double_demean(y);
    let xdd: Vec<DMatrix<f64>> = x.iter().map(double_demean).collect();
    let identified: Vec<bool> = x
        .iter()
        .zip(&xdd)
        .map(|(raw, dd)| {
            let mean = raw.mean();
            let total: f64 = raw.iter().map(|v| (v - mean) * (v - mean)).sum();
            dd.norm_squared() > 1e-10 * total.max(f64::MIN_POSITIVE)
        })
        .collect();
    let active: Vec<usize> = (0..x.len()).filter(|&j| identified[j]).collect();
    for (j, ok) in identified.iter().enumerate() {
        if !ok {
            log::debug!("covariate {j} has no within-unit variation; its coefficient is fixed at 0");
        }
    }
    let k = active.len();
    let gram = DMatrix::from_fn(k, k, |a, b| xdd[active[a]].dot(&xdd[active[b]]));

    let mut beta = vec![0.0; x.len()];
    let mut low_rank = DMatrix::zeros(n, t);
    let mut factors = DMatrix::zeros(t, rank);
    let mut loadings = DMatrix::zeros(n, rank);
    let mut trace = Vec::new();
    let mut converged = false;
    let scale = ydd.norm_squared().max(f64::MIN_POSITIVE);
    for _ in 0..max_iter {
        if k > 0 {
            let target = &ydd - &low_rank;
            let h = DVector::from_fn(k, |a, _| xdd[active[a]].dot(&target));
            let b = lstsq(&gram, &h).coef;
            for (a, &j) in active.iter().enumerate() {
                beta[j] = b[a];
            }
        }
        let mut e = ydd.clone();
        for &j in &active {
            e -= &xdd[j] * beta[j];
        }
        if rank > 0 {
            let (f, _) = top_eigen(&(e.transpose() * &e), rank);
            loadings = &e * &f;
            low_rank = &loadings * f.transpose();
            factors = f;
        }
        let obj = (&e - &low_rank).norm_squared();
        let prev = trace.last().copied();
        trace.push(obj);
        if k == 0 || obj <= 1e-26 * scale {
            converged = true;
            break;
        }
        if let Some(p) = prev {
            if (p - obj) <= tol * p.max(f64::MIN_POSITIVE) {
                converged = true;
                break;
            }
        }
    }
    if !converged {
        log::warn!("factor model did not converge in {max_iter} iterations; keeping the last iterate");
    }
    // additive effects from the residual with the (doubly demeaned) factor part removed
    let mut r = y - &low_rank;
    for (j, xj) in x.iter().enumerate() {
        if beta[j] != 0.0 {
            r -= xj * beta[j];
        }
    }
    let grand = r.mean();
    let alpha = (0..n).map(|i| r.row(i).mean() - grand).collect();
    let xi = (0..t).map(|s| r.column(s).mean()).collect();
    Ok(FactorModel {
        rank,
        beta,
        identified,
        factors,
        loadings,
        alpha,
        xi,
        objective_trace: trace,
        converged,
    })
}

/// Least-squares design `[1, F]` restricted to `periods`.
fn projection_design(model: &FactorModel, periods: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(periods.len(), model.rank + 1, |i, j| {
        if j == 0 {
            1.0
        } else {
            model.factors[(periods[i], j - 1)]
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankSelection {
    pub rank: usize,
    /// Cross-validated mean squared prediction error for ranks `0..`.
    pub mspe: Vec<f64>,
}

/// Choose the factor rank by cross-validation over control units.
///
/// Controls are split into seeded folds. For each fold and rank the model is
/// fitted on the other folds; each held-out unit's loadings are fitted on the
/// pre-treatment periods with one period left out at a time, and the error on
/// the left-out period is scored. The rank with the smallest mean error wins,
/// near-ties going to the smaller rank.
#[allow(clippy::too_many_arguments)]
pub fn select_rank(
    y: &DMatrix<f64>,
    x: &[DMatrix<f64>],
    r_max: usize,
    pre_periods: usize,
    tol: f64,
    max_iter: usize,
    seed: u64,
) -> Result<RankSelection> {
    if pre_periods < MIN_PRE_PERIODS {
        return Err(Error::InsufficientPreTreatment {
            available: pre_periods,
            required: MIN_PRE_PERIODS,
        });
    }
    let (n, t) = y.shape();
    if n < 3 {
        log::warn!("{n} controls are too few to cross-validate the factor rank; using 0");
        return Ok(RankSelection { rank: 0, mspe: vec![] });
    }
    let k_folds = n.min(5);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from(seed));
    let folds: Vec<Vec<usize>> = (0..k_folds)
        .map(|f| order.iter().enumerate().filter(|(p, _)| p % k_folds == f).map(|(_, &i)| i).collect())
        .collect();
    let min_fit = n - folds.iter().map(Vec::len).max().unwrap_or(0);
    let r_cap = r_max.min(pre_periods - 3).min(min_fit.saturating_sub(1)).min(t - 1);
    let pre: Vec<usize> = (0..pre_periods).collect();
    let mut mspe = Vec::with_capacity(r_cap + 1);
    for r in 0..=r_cap {
        let (mut sse, mut count) = (0.0, 0usize);
        for held in &folds {
            let fit_rows: Vec<usize> = (0..n).filter(|i| !held.contains(i)).collect();
            let model = fit_ife(
                &y.select_rows(&fit_rows),
                &x.iter().map(|m| m.select_rows(&fit_rows)).collect::<Vec<_>>(),
                r,
                tol,
                max_iter,
            )?;
            let z = projection_design(&model, &pre);
            let Ok(pinv) = z.clone().pseudo_inverse(1e-12) else {
                continue;
            };
            let hat = &z * pinv;
            for &i in held {
                let xs: Vec<Vec<f64>> = x.iter().map(|m| m.row(i).iter().copied().collect()).collect();
                let xr: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
                let v = DVector::from_fn(pre.len(), |s, _| y[(i, s)] - model.base(&xr, s));
                let e = &v - &hat * &v;
                for s in 0..pre.len() {
                    let lev = 1.0 - hat[(s, s)];
                    if lev > 1e-8 {
                        let loo = e[s] / lev;
                        sse += loo * loo;
                        count += 1;
                    }
                }
            }
        }
        mspe.push(if count > 0 { sse / count as f64 } else { f64::INFINITY });
    }
    let best = mspe.iter().copied().fold(f64::INFINITY, f64::min);
    // scaled by the raw outcome so that errors at rounding level count as ties
    let floor = 1e-10 * y.norm_squared() / (n * t) as f64;
    let rank = mspe
        .iter()
        .position(|&m| m <= best * (1.0 + 1e-6) + floor)
        .unwrap_or(0);
    Ok(RankSelection { rank, mspe })
}

/// Inputs of one synthetic-control estimation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GscSpec {
    pub pre_window: usize,
    pub post_window: usize,
    /// Covariate columns of the panel to adjust for.
    pub covariates: Vec<String>,
    /// Fixed rank; `None` selects it by cross-validation up to `r_max`.
    pub rank: Option<usize>,
    pub r_max: usize,
    pub bootstrap_b: usize,
    pub tol: f64,
    pub max_iter: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TreatedSeries {
    pub unit_id: String,
    /// Grid index of the first treated period.
    pub treatment_index: usize,
    pub actual: Vec<f64>,
    pub predicted_y0: Vec<f64>,
}

/// Observed and counterfactual paths of the treated units.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CounterfactualSeries {
    pub dates: Vec<NaiveDate>,
    pub units: Vec<TreatedSeries>,
    /// Mean gap over treated units at each period since treatment.
    pub att_by_event: Vec<f64>,
    pub att: f64,
}

impl CounterfactualSeries {
    /// Treated-average actual and synthetic paths by calendar period.
    pub fn mean_paths(&self) -> (Vec<f64>, Vec<f64>) {
        let t = self.dates.len();
        let m = self.units.len() as f64;
        let mut actual = vec![0.0; t];
        let mut synth = vec![0.0; t];
        for u in &self.units {
            for s in 0..t {
                actual[s] += u.actual[s] / m;
                synth[s] += u.predicted_y0[s] / m;
            }
        }
        (actual, synth)
    }

    /// Root mean squared gap over every treated unit's pre-treatment periods.
    pub fn pre_treatment_rmse(&self) -> f64 {
        let (mut sse, mut count) = (0.0, 0usize);
        for u in &self.units {
            for s in 0..u.treatment_index {
                let g = u.actual[s] - u.predicted_y0[s];
                sse += g * g;
                count += 1;
            }
        }
        stats::sqrt(sse / count.max(1) as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GscFit {
    pub estimate: EffectEstimate,
    pub series: CounterfactualSeries,
    pub model: FactorModel,
    pub rank_selection: Option<RankSelection>,
    /// Mean control outcome over the treated units' post-treatment periods.
    pub control_post_mean: f64,
    /// Bootstrap replicates that produced an estimate.
    pub bootstrap_draws: usize,
}

struct Treated {
    row: usize,
    start: usize,
    post: usize,
}

/// Counterfactuals for the treated units under `model`.
fn project(
    model: &FactorModel,
    panel: &BalancedPanel,
    cov: &[usize],
    treated: &[Treated],
    pre_window: usize,
) -> CounterfactualSeries {
    let t_len = panel.n_periods();
    let max_post = treated.iter().map(|u| u.post).max().unwrap_or(0);
    let mut gap_sum = vec![0.0; max_post];
    let mut gap_n = vec![0usize; max_post];
    let mut units = Vec::with_capacity(treated.len());
    for u in treated {
        let xr: Vec<&[f64]> = cov.iter().map(|&j| panel.covariate_row(j, u.row)).collect();
        let actual = panel.outcome_row(u.row).to_vec();
        let pre: Vec<usize> = (u.start - pre_window..u.start).collect();
        let z = projection_design(model, &pre);
        let v = DVector::from_fn(pre.len(), |s, _| actual[pre[s]] - model.base(&xr, pre[s]));
        let coef = lstsq(&z, &v).coef;
        let predicted_y0: Vec<f64> = (0..t_len)
            .map(|s| {
                model.base(&xr, s) + coef[0] + (0..model.rank).map(|f| coef[f + 1] * model.factors[(s, f)]).sum::<f64>()
            })
            .collect();
        for e in 0..u.post {
            let s = u.start + e;
            gap_sum[e] += actual[s] - predicted_y0[s];
            gap_n[e] += 1;
        }
        units.push(TreatedSeries {
            unit_id: panel.units[u.row].clone(),
            treatment_index: u.start,
            actual,
            predicted_y0,
        });
    }
    let att_by_event: Vec<f64> = gap_sum.iter().zip(&gap_n).map(|(s, n)| s / *n as f64).collect();
    CounterfactualSeries {
        dates: panel.grid.dates(),
        units,
        att: stats::mean(&att_by_event),
        att_by_event,
    }
}

fn block(panel: &BalancedPanel, rows: &[usize], col: Option<usize>) -> DMatrix<f64> {
    let t = panel.n_periods();
    DMatrix::from_fn(rows.len(), t, |i, s| match col {
        None => panel.outcome_row(rows[i])[s],
        Some(j) => panel.covariate_row(j, rows[i])[s],
    })
}

/// Average effect on the treated units of `treatment` (dates on the grid).
///
/// The standard error is the standard deviation of the effect over
/// `bootstrap_b` refits on control units resampled with replacement, with the
/// rank held at its selected value; the percentile interval of the same
/// draws is reported alongside.
pub fn estimate_gsc(panel: &BalancedPanel, treatment: &TreatmentTable, spec: &GscSpec, seed: u64) -> Result<GscFit> {
    let (n_all, t_len) = (panel.n_units(), panel.n_periods());
    if n_all * t_len > MAX_EVENTS {
        return Err(Error::GscTooLarge {
            events: n_all * t_len,
            limit: MAX_EVENTS,
        });
    }
    if spec.pre_window < MIN_PRE_PERIODS {
        return Err(Error::InsufficientPreTreatment {
            available: spec.pre_window,
            required: MIN_PRE_PERIODS,
        });
    }
    let cov: Vec<usize> = spec
        .covariates
        .iter()
        .map(|c| panel.covariate_index(c).ok_or_else(|| Error::UnknownColumn(c.clone())))
        .collect::<Result<_>>()?;
    for &j in &cov {
        if panel.x[j].iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "covariate `{}` has missing values",
                panel.covariate_names[j]
            )));
        }
    }
    let mut controls = Vec::new();
    let mut treated = Vec::new();
    for (i, u) in panel.units.iter().enumerate() {
        let Some(date) = treatment.date_of(u) else {
            controls.push(i);
            continue;
        };
        let start = panel.grid.ceil_offset(date);
        if start < spec.pre_window as i64 {
            return Err(Error::InsufficientPreTreatment {
                available: start.max(0) as usize,
                required: spec.pre_window,
            });
        }
        if start >= t_len as i64 {
            return Err(Error::WindowOutOfRange {
                cohort: 0,
                needed_from: start,
                needed_to: start,
                grid_len: t_len,
            });
        }
        let start = start as usize;
        let post = spec.post_window.min(t_len - start);
        if post < spec.post_window {
            log::warn!("unit `{u}`: only {post} of {} post-treatment periods on the grid", spec.post_window);
        }
        treated.push(Treated { row: i, start, post });
    }
    if treated.is_empty() {
        return Err(Error::NoTreatedUnits);
    }
    if controls.is_empty() {
        return Err(Error::NoControlUnits);
    }
    let yc = block(panel, &controls, None);
    let xc: Vec<DMatrix<f64>> = cov.iter().map(|&j| block(panel, &controls, Some(j))).collect();
    let pre_periods = treated.iter().map(|u| u.start).min().expect("non-empty");
    let (rank, rank_selection) = match spec.rank {
        Some(r) => (r, None),
        None => {
            let sel = select_rank(&yc, &xc, spec.r_max, pre_periods, spec.tol, spec.max_iter, derive_seed_str(seed, "rank"))?;
            (sel.rank, Some(sel))
        }
    };
    if controls.len() < rank + 1 {
        return Err(Error::TooFewControls {
            controls: controls.len(),
            rank,
        });
    }
    if rank + 2 > spec.pre_window {
        return Err(Error::RankTooLarge {
            requested: rank,
            max: spec.pre_window - 2,
        });
    }
    let model = fit_ife(&yc, &xc, rank, spec.tol, spec.max_iter)?;
    for (name, ok) in spec.covariates.iter().zip(&model.identified) {
        if !ok {
            log::warn!("covariate `{name}` has no within-unit variation; its coefficient is fixed at 0");
        }
    }
    let series = project(&model, panel, &cov, &treated, spec.pre_window);

    let boot_seed = derive_seed_str(seed, "bootstrap");
    let draws: Vec<Option<f64>> = par::map_indexed(spec.bootstrap_b, |b| {
        let mut rng = rng_from(derive_seed(boot_seed, b as u64));
        let rows: Vec<usize> = (0..controls.len()).map(|_| rng.random_range(0..controls.len())).collect();
        let yb = yc.select_rows(&rows);
        let xb: Vec<DMatrix<f64>> = xc.iter().map(|m| m.select_rows(&rows)).collect();
        let m = fit_ife(&yb, &xb, rank, spec.tol, spec.max_iter).ok()?;
        let att = project(&m, panel, &cov, &treated, spec.pre_window).att;
        att.is_finite().then_some(att)
    });
    let draws: Vec<f64> = draws.into_iter().flatten().collect();
    if draws.len() < 2 {
        return Err(Error::InvalidHyperparameter(format!(
            "only {} bootstrap replicates succeeded",
            draws.len()
        )));
    }
    if draws.len() < spec.bootstrap_b {
        log::warn!("{} of {} bootstrap replicates failed", spec.bootstrap_b - draws.len(), spec.bootstrap_b);
    }
    let mut estimate = EffectEstimate::new(
        EstimatorId::Gsc,
        series.att,
        stats::std_dev(&draws),
        treated.len(),
        controls.len(),
    );
    estimate.ci95_percentile = Some((stats::quantile(&draws, 0.025), stats::quantile(&draws, 0.975)));

    let mut base = Vec::new();
    for u in &treated {
        for s in u.start..u.start + u.post {
            base.push(yc.column(s).mean());
        }
    }
    Ok(GscFit {
        estimate,
        series,
        model,
        rank_selection,
        control_post_mean: stats::mean(&base),
        bootstrap_draws: draws.len(),
    })
}
