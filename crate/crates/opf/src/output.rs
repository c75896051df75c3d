//! `result.json` and the synthetic-data files.

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Map, Value};

use opf_core::cohort::Cohort;
use opf_core::dataset::{PanelDataset, TreatmentTable};
use opf_core::decide::StudyResult;
use opf_core::estimate::EffectEstimate;
use opf_core::synth::SynthData;

use crate::error::{OpfError, Result};

/// Bumped on any change to the layout of `result.json`.
pub const SCHEMA_VERSION: &str = "1.0.0";
pub const RESULT_FILE: &str = "result.json";

/// `v` rounded to 6 significant digits.
pub fn sig6(v: f64) -> f64 {
    if !v.is_finite() || v == 0.0 {
        return v;
    }
    format!("{v:.5e}").parse().expect("formatted float parses")
}

fn round_floats(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            *v = serde_json::Number::from_f64(sig6(n.as_f64().expect("f64"))).map_or(Value::Null, Value::Number);
        }
        Value::Array(a) => a.iter_mut().for_each(round_floats),
        Value::Object(o) => o.values_mut().for_each(round_floats),
        _ => {}
    }
}

fn to_value(v: &impl Serialize) -> Value {
    serde_json::to_value(v).expect("result types serialize")
}

fn estimate_json(e: &EffectEstimate) -> Value {
    let mut o = json!({
        "estimator": e.estimator_id,
        "ate": e.ate,
        "se": e.se,
        "ci95": [e.ci95.0, e.ci95.1],
        "n_treated": e.n_treated,
        "n_control": e.n_control,
    });
    if let Some((lo, hi)) = e.ci95_percentile {
        o["ci95_percentile"] = json!([lo, hi]);
    }
    o
}

fn cohort_json(c: &Cohort, estimate: Option<&EffectEstimate>) -> Value {
    let mut o = json!({
        "index": c.index,
        "treatment_times": c.treatment_times,
        "window_start": c.window_start,
        "window_end": c.window_end,
        "n_treated": c.n_treated,
        "flag": c.flag,
    });
    if let Some(e) = estimate {
        o["estimate"] = estimate_json(e);
    }
    o
}

/// The result document, floats at 6 significant digits. Keys are sorted.
pub fn result_json(study: &StudyResult, artifacts: &[String]) -> Value {
    let cohorts: Vec<Value> = study
        .cohorts
        .iter()
        .map(|c| {
            let e = study.cohort_estimates.iter().find(|ce| ce.cohort.index == c.index).map(|ce| &ce.estimate);
            cohort_json(c, e)
        })
        .collect();
    let mut trace = to_value(&study.decision_trace);
    trace["facts"] = to_value(&study.facts);
    let mut doc = Map::new();
    doc.insert("schema_version".into(), json!(SCHEMA_VERSION));
    doc.insert("seed".into(), json!(study.seed));
    doc.insert("selected".into(), estimate_json(&study.selected));
    doc.insert("uplift_percent".into(), json!(study.uplift_percent));
    doc.insert("control_baseline".into(), json!(study.control_baseline));
    doc.insert("candidates".into(), Value::Array(study.candidates.iter().map(estimate_json).collect()));
    doc.insert("cohorts".into(), Value::Array(cohorts));
    doc.insert("decision_trace".into(), trace);
    doc.insert("validation".into(), to_value(&study.validation));
    doc.insert("gsc".into(), to_value(&study.gsc));
    doc.insert("preprocessing".into(), to_value(&study.imputation));
    doc.insert("warnings".into(), json!(study.warnings));
    doc.insert("artifacts".into(), json!(artifacts));
    let mut v = Value::Object(doc);
    round_floats(&mut v);
    v
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| OpfError::io(path, e))
}

pub fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v).map_err(|source| OpfError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_result(study: &StudyResult, artifacts: &[String], out_dir: &Path) -> Result<PathBuf> {
    let path = out_dir.join(RESULT_FILE);
    write_json(&path, &result_json(study, artifacts))?;
    Ok(path)
}

pub fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| OpfError::io(dir, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|source| OpfError::Csv {
        path: path.to_path_buf(),
        source,
    })
}

fn csv_write(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let err = |source| OpfError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    w.flush().map_err(|e| OpfError::io(path, e))
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// Observations in the layout the reader expects: unit, date, outcome, then
/// covariates.
pub fn write_observations(panel: &PanelDataset, unit_column: &str, time_column: &str, path: &Path) -> Result<()> {
    let header: Vec<String> = [unit_column, time_column, &panel.outcome_column]
        .into_iter()
        .map(String::from)
        .chain(panel.covariate_columns.iter().cloned())
        .collect();
    let rows = panel.rows.iter().map(|r| {
        [r.unit_id.clone(), r.date.to_string(), cell(r.outcome)]
            .into_iter()
            .chain(r.covariates.iter().map(|c| cell(*c)))
            .collect()
    });
    csv_write(path, &header, rows)
}

pub fn write_treatment(t: &TreatmentTable, unit_column: &str, date_column: &str, path: &Path) -> Result<()> {
    let header = [unit_column.to_string(), date_column.to_string()];
    let rows = t.rows().iter().map(|r| vec![r.unit_id.clone(), r.treatment_date.to_string()]);
    csv_write(path, &header, rows)
}

/// `observations.csv`, `treatment.csv`, `metadata.json` and a runnable
/// `config.json`.
pub fn write_synth(data: &SynthData, out_dir: &Path) -> Result<Vec<PathBuf>> {
    create_dir(out_dir)?;
    let c = &data.metadata.config;
    let paths: Vec<PathBuf> = ["observations.csv", "treatment.csv", "metadata.json", "config.json"]
        .iter()
        .map(|f| out_dir.join(f))
        .collect();
    write_observations(&data.panel, &c.unit_column, &c.time_column, &paths[0])?;
    write_treatment(&data.treatment, &c.treatment_unit_column, &c.treatment_date_column, &paths[1])?;
    write_json(&paths[2], &data.metadata)?;
    write_json(&paths[3], c)?;
    Ok(paths)
}
