use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// z-value for a two-sided 95% normal interval.
pub const Z95: f64 = 1.96;

/// The estimators the decision path can choose from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorId {
    Gsc,
    DmlLinear,
    DmlForest,
    DmlBoosted,
}

impl EstimatorId {
    pub const ALL: [EstimatorId; 4] = [
        EstimatorId::Gsc,
        EstimatorId::DmlLinear,
        EstimatorId::DmlForest,
        EstimatorId::DmlBoosted,
    ];
    pub const DML: [EstimatorId; 3] = [
        EstimatorId::DmlLinear,
        EstimatorId::DmlForest,
        EstimatorId::DmlBoosted,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorId::Gsc => "gsc",
            EstimatorId::DmlLinear => "dml_linear",
            EstimatorId::DmlForest => "dml_forest",
            EstimatorId::DmlBoosted => "dml_boosted",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.as_str() == s)
    }

    pub fn is_dml(self) -> bool {
        self != EstimatorId::Gsc
    }
}

impl fmt::Display for EstimatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Universal estimator output: point estimate in outcome units with its
/// standard error and the normal 95% interval `ate ± 1.96·se`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub estimator_id: EstimatorId,
    pub ate: f64,
    pub se: f64,
    pub ci95: (f64, f64),
    pub n_treated: usize,
    pub n_control: usize,
    /// Bootstrap percentile interval, when the estimator produced one.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ci95_percentile: Option<(f64, f64)>,
}

impl EffectEstimate {
    pub fn new(estimator_id: EstimatorId, ate: f64, se: f64, n_treated: usize, n_control: usize) -> Self {
        let se = se.max(0.0);
        Self {
            estimator_id,
            ate,
            se,
            ci95: (ate - Z95 * se, ate + Z95 * se),
            n_treated,
            n_control,
            ci95_percentile: None,
        }
    }

    pub fn contains(&self, value: f64) -> bool {
        self.ci95.0 <= value && value <= self.ci95.1
    }
}

/// Treated-count weighted average of independent estimates:
/// `ate = Σ wᵢ·ateᵢ / Σ wᵢ`, `se = √(Σ wᵢ²·seᵢ²) / Σ wᵢ` with `wᵢ = n_treatedᵢ`.
pub fn weighted_combine<'a, I>(parts: I) -> Result<EffectEstimate>
where
    I: IntoIterator<Item = &'a EffectEstimate>,
{
    let mut iter = parts.into_iter().peekable();
    let id = iter.peek().ok_or(Error::NoEstimates)?.estimator_id;
    let (mut sw, mut swa, mut sw2v, mut nt, mut nc) = (0.0, 0.0, 0.0, 0usize, 0usize);
    for e in iter {
        let w = e.n_treated as f64;
        sw += w;
        swa += w * e.ate;
        sw2v += w * w * e.se * e.se;
        nt += e.n_treated;
        nc += e.n_control;
    }
    if sw <= 0.0 {
        return Err(Error::NoEstimates);
    }
    Ok(EffectEstimate::new(id, swa / sw, libm::sqrt(sw2v) / sw, nt, nc))
}
