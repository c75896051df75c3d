//! Partially linear double machine learning on a cross-section.
//!
//! Outcome and treatment are residualized on the features with out-of-fold
//! learner predictions, and the effect is the slope of the outcome residual
//! on the treatment residual with a heteroskedasticity-robust (HC0) error.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::cohort::CrossSection;
use crate::config::Hyperparameters;
use crate::error::{Error, Result};
use crate::estimate::{EffectEstimate, EstimatorId};
use crate::learners::{crossfit_with_folds, fold_assignment, LearnerKind, LearnerSpec};
use crate::rng::{derive_seed, derive_seed_str};
use crate::stats;

/// Floor on `Σ T̃²`; below it the treatment is treated as fully explained.
pub const MIN_TREATMENT_VARIATION: f64 = 1e-12;
pub const DEFAULT_PROPENSITY_CLIP: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fitting {
    /// K-fold cross-fitting.
    CrossFit,
    /// Nuisances fitted and evaluated on the full sample, without
    /// propensity clipping: plain partialling-out.
    FullSample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmlSpec {
    pub id: EstimatorId,
    pub outcome: LearnerSpec,
    pub treatment: LearnerSpec,
    pub k_folds: usize,
    pub repetitions: usize,
    /// Bounds `[c, 1 − c]` on tree-ensemble treatment predictions.
    pub propensity_clip: f64,
    pub fitting: Fitting,
}

impl DmlSpec {
    /// Both nuisances use the learner family named by `id`.
    pub fn for_estimator(id: EstimatorId, hp: &Hyperparameters) -> Result<Self> {
        let kind = match id {
            EstimatorId::DmlLinear => LearnerKind::Linear {
                ridge_lambda: hp.ridge_lambda,
            },
            EstimatorId::DmlForest => LearnerKind::Forest(hp.forest.clone()),
            EstimatorId::DmlBoosted => LearnerKind::Boosted(hp.boosted.clone()),
            EstimatorId::Gsc => {
                return Err(Error::InvalidConfig("gsc is not a DML estimator".into()));
            }
        };
        Ok(Self {
            id,
            outcome: LearnerSpec::new(kind.clone(), 0),
            treatment: LearnerSpec::new(kind, 0),
            k_folds: hp.k_folds,
            repetitions: hp.dml_repetitions,
            propensity_clip: DEFAULT_PROPENSITY_CLIP,
            fitting: Fitting::CrossFit,
        })
    }
}

/// Out-of-fold nuisance predictions: `g_hat ≈ E[Y|X]`, `m_hat ≈ E[T|X]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceFit {
    pub g_hat: Vec<f64>,
    pub m_hat: Vec<f64>,
    /// Fold label per row; empty for full-sample fits.
    pub folds: Vec<usize>,
}

pub fn fit_nuisances(cs: &CrossSection, spec: &DmlSpec, seed: u64) -> Result<NuisanceFit> {
    let y_spec = spec.outcome.with_seed(derive_seed_str(seed, "outcome"));
    let t_spec = spec.treatment.with_seed(derive_seed_str(seed, "treatment"));
    match spec.fitting {
        Fitting::CrossFit => {
            let folds = fold_assignment(cs.n_rows(), spec.k_folds, derive_seed_str(seed, "folds"))?;
            let g_hat = crossfit_with_folds(&cs.features, &cs.outcome, &y_spec, &folds)?;
            let mut m_hat = crossfit_with_folds(&cs.features, &cs.treatment, &t_spec, &folds)?;
            // a linear nuisance keeps the exact partialling-out projection
            if !matches!(spec.treatment.kind, LearnerKind::Linear { .. }) {
                let c = spec.propensity_clip;
                for m in &mut m_hat {
                    *m = m.clamp(c, 1.0 - c);
                }
            }
            Ok(NuisanceFit { g_hat, m_hat, folds })
        }
        Fitting::FullSample => {
            let g_hat = y_spec.fit(&cs.features, &cs.outcome)?.predict(&cs.features)?;
            let m_hat = t_spec.fit(&cs.features, &cs.treatment)?.predict(&cs.features)?;
            Ok(NuisanceFit {
                g_hat,
                m_hat,
                folds: Vec::new(),
            })
        }
    }
}

/// `(θ̂, se)` from residuals.
fn residual_slope(cs: &CrossSection, nf: &NuisanceFit) -> Result<(f64, f64)> {
    let yt: Vec<f64> = cs.outcome.iter().zip(&nf.g_hat).map(|(y, g)| y - g).collect();
    let tt: Vec<f64> = cs.treatment.iter().zip(&nf.m_hat).map(|(t, m)| t - m).collect();
    let stt: f64 = tt.iter().map(|t| t * t).sum();
    if !(stt >= MIN_TREATMENT_VARIATION) {
        return Err(Error::NoTreatmentVariation(stt));
    }
    let theta = tt.iter().zip(&yt).map(|(t, y)| t * y).sum::<f64>() / stt;
    let meat: f64 = tt
        .iter()
        .zip(&yt)
        .map(|(t, y)| {
            let e = y - theta * t;
            t * t * e * e
        })
        .sum();
    Ok((theta, stats::sqrt(meat) / stt))
}

/// Effect of the binary treatment on the outcome of `cs`.
///
/// With several repetitions the median θ̂ over fold splits is reported and
/// the standard error is `√median(seᵣ² + (θ̂ᵣ − θ̂)²)`.
pub fn estimate_dml(cs: &CrossSection, spec: &DmlSpec, seed: u64) -> Result<EffectEstimate> {
    let (n_treated, n_control) = (cs.n_treated(), cs.n_control());
    if n_treated == 0 || n_control == 0 || cs.features.ncols() == 0 {
        return Err(Error::DegenerateCrossSection);
    }
    let reps = if spec.fitting == Fitting::FullSample { 1 } else { spec.repetitions.max(1) };
    let mut draws = Vec::with_capacity(reps);
    for r in 0..reps {
        let nf = fit_nuisances(cs, spec, derive_seed(seed, r as u64))?;
        draws.push(residual_slope(cs, &nf)?);
    }
    let (theta, se) = if reps == 1 {
        draws[0]
    } else {
        let thetas: Vec<f64> = draws.iter().map(|d| d.0).collect();
        let theta = stats::median(&thetas);
        let v: Vec<f64> = draws.iter().map(|(t, s)| s * s + (t - theta) * (t - theta)).collect();
        (theta, stats::sqrt(stats::median(&v)))
    };
    Ok(EffectEstimate::new(spec.id, theta, se, n_treated, n_control))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::lstsq;
    use crate::rng::rng_from;
    use alloc::string::String;
    use nalgebra::{DMatrix, DVector};
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    /// Y = θ·T + Xβ + σ·ε with T ~ Bernoulli(logistic(x₀)).
    fn gen(n: usize, p: usize, theta: f64, noise: f64, seed: u64) -> CrossSection {
        let mut rng = rng_from(seed);
        let x = DMatrix::from_fn(n, p, |_, _| {
            let v: f64 = StandardNormal.sample(&mut rng);
            v
        });
        let t: Vec<f64> = (0..n)
            .map(|i| if rng.random::<f64>() < stats::logistic(x[(i, 0)]) { 1.0 } else { 0.0 })
            .collect();
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let e: f64 = StandardNormal.sample(&mut rng);
                theta * t[i] + (0..p).map(|j| (j as f64 + 1.0) * x[(i, j)]).sum::<f64>() + noise * e
            })
            .collect();
        CrossSection {
            unit_ids: (0..n).map(|i| alloc::format!("u{i}")).collect(),
            treatment: t,
            outcome: y,
            feature_names: (0..p).map(|j| alloc::format!("x{j}")).collect::<Vec<String>>(),
            features: x,
        }
    }

    fn linear_spec(k: usize, fitting: Fitting) -> DmlSpec {
        let mut hp = Hyperparameters::default();
        hp.ridge_lambda = 0.0;
        hp.k_folds = k;
        let mut s = DmlSpec::for_estimator(EstimatorId::DmlLinear, &hp).unwrap();
        s.fitting = fitting;
        s
    }

    #[test]
    fn noiseless_linear_model_exact() {
        let cs = gen(200, 3, 4.0, 0.0, 1);
        let e = estimate_dml(&cs, &linear_spec(2, Fitting::CrossFit), 7).unwrap();
        assert!((e.ate - 4.0).abs() < 1e-6, "{}", e.ate);
    }

    #[test]
    fn full_sample_matches_joint_regression() {
        let cs = gen(150, 4, 2.5, 1.0, 3);
        let e = estimate_dml(&cs, &linear_spec(2, Fitting::FullSample), 0).unwrap();
        let n = cs.n_rows();
        let z = DMatrix::from_fn(n, 6, |i, j| match j {
            0 => 1.0,
            1 => cs.treatment[i],
            _ => cs.features[(i, j - 2)],
        });
        let b = lstsq(&z, &DVector::from_vec(cs.outcome.clone())).coef;
        assert!((e.ate - b[1]).abs() < 1e-8, "{} vs {}", e.ate, b[1]);
    }

    #[test]
    fn null_effect_not_detected() {
        let cs = gen(1000, 3, 0.0, 1.0, 11);
        let e = estimate_dml(&cs, &linear_spec(5, Fitting::CrossFit), 1).unwrap();
        assert!(e.ate.abs() < 2.0 * e.se, "{} ± {}", e.ate, e.se);
    }

    #[test]
    fn shift_and_scale_equivariance() {
        let cs = gen(400, 3, 1.5, 1.0, 5);
        let spec = linear_spec(5, Fitting::CrossFit);
        let base = estimate_dml(&cs, &spec, 9).unwrap();
        let mut shifted = cs.clone();
        shifted.outcome.iter_mut().for_each(|y| *y += 1000.0);
        let s = estimate_dml(&shifted, &spec, 9).unwrap();
        assert!((s.ate - base.ate).abs() < 1e-8);
        let mut scaled = cs.clone();
        scaled.outcome.iter_mut().for_each(|y| *y *= -3.0);
        let c = estimate_dml(&scaled, &spec, 9).unwrap();
        assert!((c.ate + 3.0 * base.ate).abs() < 1e-8);
        assert!((c.se - 3.0 * base.se).abs() < 1e-8);
    }

    #[test]
    fn perfectly_predicted_treatment_rejected() {
        let mut cs = gen(100, 2, 1.0, 1.0, 2);
        cs = cs.with_feature("t_copy", &cs.treatment.clone());
        let mut spec = linear_spec(2, Fitting::FullSample);
        spec.fitting = Fitting::FullSample;
        assert!(matches!(estimate_dml(&cs, &spec, 0), Err(Error::NoTreatmentVariation(_))));
    }

    #[test]
    fn repetitions_are_deterministic() {
        let cs = gen(300, 3, 1.0, 1.0, 8);
        let mut spec = linear_spec(3, Fitting::CrossFit);
        spec.repetitions = 3;
        let a = estimate_dml(&cs, &spec, 4).unwrap();
        let b = estimate_dml(&cs, &spec, 4).unwrap();
        assert_eq!(a, b);
        let mut one = cs.clone();
        one.treatment.iter_mut().for_each(|t| *t = 0.0);
        assert!(matches!(estimate_dml(&one, &spec, 4), Err(Error::DegenerateCrossSection)));
    }
}
