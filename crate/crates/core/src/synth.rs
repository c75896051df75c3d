//! Seeded benchmark generators with a known effect.
//!
//! `cross_sectional_linear`: five standard-normal common causes `W` and two
//! instruments `Z`; coefficients drawn once from U(0.5, 1.5); treatment
//! `T ~ Bernoulli(logistic(a'W + b'Z))` with a share of labels flipped; outcome
//! `Y = ate·T + c'W + N(0, noise_sd²)`.
//!
//! `panel_nonlinear`: monthly panel of static confounders `W₁, W₂, W₃` with
//! corr(W₁, W₂) = 0.7. The `n_treated` units with the largest
//! `sin W₁ + W₂² − 1 + 0.5·W₃` plus logistic noise are treated, at a uniformly
//! drawn period of the treatment range, and stay treated. Outcome
//! `Yᵢₜ = 10 + uᵢ + 0.1·t + 2·sin W₁ + W₂² + 0.5·W₁·W₃ + ate·Dᵢₜ + N(0, noise_sd²)`
//! with `uᵢ ~ N(0, 1)`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use chrono::NaiveDate;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::StudyConfig;
use crate::dataset::{Observation, PanelDataset, Period, TreatmentRow, TreatmentTable};
use crate::error::{Error, Result};
use crate::rng::{rng_from, StudyRng};
use crate::stats::{logistic, sin, sqrt};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossSectionalSpec {
    pub n_samples: usize,
    pub n_common_causes: usize,
    pub n_instruments: usize,
    pub true_ate: f64,
    pub noise_sd: f64,
    /// Share of treatment labels flipped after the Bernoulli draw.
    pub treatment_noise: f64,
    pub seed: u64,
}

impl Default for CrossSectionalSpec {
    fn default() -> Self {
        Self {
            n_samples: 5000,
            n_common_causes: 5,
            n_instruments: 2,
            true_ate: 10.0,
            noise_sd: 1.0,
            treatment_noise: 0.05,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PanelSpec {
    pub n_units: usize,
    pub n_periods: usize,
    pub n_treated: usize,
    /// Fixed at three; kept so specs state it.
    pub n_confounders: usize,
    pub first_treatment_period: usize,
    pub last_treatment_period: usize,
    pub start_date: NaiveDate,
    pub true_ate: f64,
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for PanelSpec {
    fn default() -> Self {
        Self {
            n_units: 1000,
            n_periods: 52,
            n_treated: 263,
            n_confounders: 3,
            first_treatment_period: 20,
            last_treatment_period: 40,
            start_date: NaiveDate::from_ymd_opt(2019, 1, 1).expect("valid"),
            true_ate: 20.0,
            noise_sd: 1.0,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SynthSpec {
    CrossSectionalLinear(CrossSectionalSpec),
    PanelNonlinear(PanelSpec),
}

impl SynthSpec {
    pub fn true_ate(&self) -> f64 {
        match self {
            SynthSpec::CrossSectionalLinear(s) => s.true_ate,
            SynthSpec::PanelNonlinear(s) => s.true_ate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthMetadata {
    pub spec: SynthSpec,
    pub true_ate: f64,
    pub n_rows: usize,
    pub n_units: usize,
    pub n_treated: usize,
    pub outcome_column: String,
    pub covariate_columns: Vec<String>,
    /// A config that runs a study on the generated files.
    pub config: StudyConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub panel: PanelDataset,
    pub treatment: TreatmentTable,
    pub metadata: SynthMetadata,
}

pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    match spec {
        SynthSpec::CrossSectionalLinear(s) => gen_cross_sectional(s),
        SynthSpec::PanelNonlinear(s) => gen_panel(s),
    }
}

fn normal(rng: &mut StudyRng) -> f64 {
    StandardNormal.sample(rng)
}

fn unit_id(i: usize, n: usize) -> String {
    let width = format!("{}", n.saturating_sub(1)).len();
    format!("u{i:0width$}")
}

pub fn gen_cross_sectional(spec: &CrossSectionalSpec) -> Result<SynthData> {
    if spec.n_samples < 2 || spec.n_common_causes == 0 {
        return Err(Error::Synth("need at least 2 samples and 1 common cause".into()));
    }
    if !(0.0..0.5).contains(&spec.treatment_noise) || !(spec.noise_sd >= 0.0) {
        return Err(Error::Synth("treatment_noise must be in [0, 0.5) and noise_sd >= 0".into()));
    }
    let (p, q) = (spec.n_common_causes, spec.n_instruments);
    let mut rng = rng_from(spec.seed);
    let coef = |k: usize, rng: &mut StudyRng| -> Vec<f64> { (0..k).map(|_| rng.random_range(0.5..1.5)).collect() };
    let a = coef(p, &mut rng);
    let b = coef(q, &mut rng);
    let c = coef(p, &mut rng);
    let date = NaiveDate::from_ymd_opt(2020, 1, 1).expect("valid");
    let mut rows = Vec::with_capacity(spec.n_samples);
    let mut treated = Vec::new();
    for i in 0..spec.n_samples {
        let w: Vec<f64> = (0..p).map(|_| normal(&mut rng)).collect();
        let z: Vec<f64> = (0..q).map(|_| normal(&mut rng)).collect();
        let index: f64 = w.iter().zip(&a).map(|(x, k)| x * k).sum::<f64>() + z.iter().zip(&b).map(|(x, k)| x * k).sum::<f64>();
        let mut t = rng.random::<f64>() < logistic(index);
        if rng.random::<f64>() < spec.treatment_noise {
            t = !t;
        }
        let y = spec.true_ate * f64::from(u8::from(t))
            + w.iter().zip(&c).map(|(x, k)| x * k).sum::<f64>()
            + spec.noise_sd * normal(&mut rng);
        let id = unit_id(i, spec.n_samples);
        if t {
            treated.push(TreatmentRow {
                unit_id: id.clone(),
                treatment_date: date,
            });
        }
        rows.push(Observation {
            unit_id: id,
            date,
            outcome: Some(y),
            covariates: w.into_iter().chain(z).map(Some).collect(),
        });
    }
    let covariates: Vec<String> = (0..p).map(|j| format!("w{j}")).chain((0..q).map(|j| format!("z{j}"))).collect();
    let n_treated = treated.len();
    let (panel, _) = PanelDataset::new("y", covariates.clone(), rows)?;
    let mut config = StudyConfig::new("date", "unit_id", "y", 1, 1);
    config.seed = spec.seed;
    Ok(SynthData {
        metadata: SynthMetadata {
            spec: SynthSpec::CrossSectionalLinear(spec.clone()),
            true_ate: spec.true_ate,
            n_rows: panel.rows.len(),
            n_units: spec.n_samples,
            n_treated,
            outcome_column: "y".into(),
            covariate_columns: covariates,
            config,
        },
        panel,
        treatment: TreatmentTable::new(treated)?,
    })
}

pub fn gen_panel(spec: &PanelSpec) -> Result<SynthData> {
    if spec.n_treated > spec.n_units {
        return Err(Error::Synth(format!(
            "{} treated units requested from {} units",
            spec.n_treated, spec.n_units
        )));
    }
    if spec.n_confounders != 3 {
        return Err(Error::Synth("the panel generator has exactly 3 confounders".into()));
    }
    if spec.first_treatment_period == 0
        || spec.first_treatment_period > spec.last_treatment_period
        || spec.last_treatment_period >= spec.n_periods
    {
        return Err(Error::Synth("treatment periods must satisfy 0 < first <= last < n_periods".into()));
    }
    let n = spec.n_units;
    let mut rng = rng_from(spec.seed);
    let rho: f64 = 0.7;
    let mut w = Vec::with_capacity(n);
    let mut score = Vec::with_capacity(n);
    let mut effect = Vec::with_capacity(n);
    for i in 0..n {
        let w1 = normal(&mut rng);
        let w2 = rho * w1 + sqrt(1.0 - rho * rho) * normal(&mut rng);
        let w3 = normal(&mut rng);
        let u: f64 = rng.random_range(1e-12..1.0);
        let noise = libm::log(u / (1.0 - u));
        score.push((sin(w1) + w2 * w2 - 1.0 + 0.5 * w3 + noise, i));
        w.push([w1, w2, w3]);
        effect.push(normal(&mut rng));
    }
    score.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut start = alloc::vec![None; n];
    for &(_, i) in score.iter().take(spec.n_treated) {
        start[i] = Some(rng.random_range(spec.first_treatment_period..=spec.last_treatment_period));
    }
    let dates: Vec<NaiveDate> = (0..spec.n_periods as i64)
        .map(|t| Period::Monthly.advance(spec.start_date, t).ok_or_else(|| Error::Synth("date overflow".into())))
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(n * spec.n_periods);
    let mut treated = Vec::new();
    for i in 0..n {
        let [w1, w2, w3] = w[i];
        let f = 2.0 * sin(w1) + w2 * w2 + 0.5 * w1 * w3;
        let id = unit_id(i, n);
        if let Some(s) = start[i] {
            treated.push(TreatmentRow {
                unit_id: id.clone(),
                treatment_date: dates[s],
            });
        }
        for (t, date) in dates.iter().enumerate() {
            let d = start[i].is_some_and(|s| t >= s);
            let y = 10.0 + effect[i] + 0.1 * t as f64 + f + spec.true_ate * f64::from(u8::from(d)) + spec.noise_sd * normal(&mut rng);
            rows.push(Observation {
                unit_id: id.clone(),
                date: *date,
                outcome: Some(y),
                covariates: alloc::vec![Some(w1), Some(w2), Some(w3)],
            });
        }
    }
    let covariates: Vec<String> = (1..=3).map(|j| format!("w{j}")).collect();
    let (panel, _) = PanelDataset::new("y", covariates.clone(), rows)?;
    let mut config = StudyConfig::new("date", "unit_id", "y", 12, 6);
    config.seed = spec.seed;
    Ok(SynthData {
        metadata: SynthMetadata {
            spec: SynthSpec::PanelNonlinear(spec.clone()),
            true_ate: spec.true_ate,
            n_rows: panel.rows.len(),
            n_units: n,
            n_treated: treated.len(),
            outcome_column: "y".into(),
            covariate_columns: covariates,
            config,
        },
        panel,
        treatment: TreatmentTable::new(treated)?,
    })
}
