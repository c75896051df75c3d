//! Reading the treatment table, the observations and the study config.
//!
//! Both tables are CSV with a header row. Dates are `YYYY-MM-DD`. Empty
//! cells and `NA`, `NaN`, `null` mark missing values.

use std::collections::BTreeSet;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use opf_core::config::{Hyperparameters, StudyConfig};
use opf_core::dataset::{
    check_study_inputs, detect_shape, parse_iso_date, DataShape, DroppedRow, Observation, PanelDataset, RuleFacts,
    TreatmentRow, TreatmentTable,
};
use opf_core::decide::summarize;
use opf_core::Error;

use crate::error::{OpfError, Result};

const MISSING: &[&str] = &["", "NA", "NaN", "nan", "null", "NULL"];

fn is_missing(cell: &str) -> bool {
    MISSING.contains(&cell.trim())
}

fn json_err(path: &Path, source: serde_json::Error) -> OpfError {
    OpfError::Json {
        path: path.to_path_buf(),
        source,
    }
}

/// Config from JSON text, plus warnings for keys it does not know.
pub fn parse_config(text: &str, path: &Path) -> Result<(StudyConfig, Vec<String>)> {
    let mut value: Value = serde_json::from_str(text).map_err(|e| json_err(path, e))?;
    let Some(obj) = value.as_object_mut() else {
        return Err(Error::InvalidConfig("config must be a JSON object".into()).into());
    };
    for key in StudyConfig::MANDATORY {
        if !obj.contains_key(*key) {
            return Err(Error::MissingConfigField(key).into());
        }
    }
    let mut warnings = Vec::new();
    let unknown: Vec<String> = obj.keys().filter(|k| !StudyConfig::KEYS.contains(&k.as_str())).cloned().collect();
    for k in unknown {
        warnings.push(format!("unknown config key `{k}` ignored"));
        obj.remove(&k);
    }
    if let Some(hp) = obj.get_mut("hyperparameters").and_then(Value::as_object_mut) {
        let unknown: Vec<String> = hp.keys().filter(|k| !Hyperparameters::KEYS.contains(&k.as_str())).cloned().collect();
        for k in unknown {
            warnings.push(format!("unknown hyperparameter `{k}` ignored"));
            hp.remove(&k);
        }
    }
    let config: StudyConfig =
        serde_json::from_value(value).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    config.validate()?;
    Ok((config, warnings))
}

pub fn read_config(path: &Path) -> Result<(StudyConfig, Vec<String>)> {
    let text = std::fs::read_to_string(path).map_err(|e| OpfError::io(path, e))?;
    parse_config(&text, path)
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> OpfError + '_ {
    move |source| OpfError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn column(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.trim() == name)
}

pub fn parse_treatment(reader: impl Read, path: &Path, unit_column: &str, date_column: &str) -> Result<TreatmentTable> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers().map_err(csv_err(path))?.clone();
    let u = column(&headers, unit_column).ok_or_else(|| Error::MissingColumn(unit_column.into()))?;
    let d = column(&headers, date_column).ok_or_else(|| Error::MissingColumn(date_column.into()))?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(path))?;
        rows.push(TreatmentRow {
            unit_id: rec[u].trim().to_string(),
            treatment_date: parse_iso_date(rec[d].trim())?,
        });
    }
    Ok(TreatmentTable::new(rows)?)
}

pub fn read_treatment(path: &Path, config: &StudyConfig) -> Result<TreatmentTable> {
    let f = std::fs::File::open(path).map_err(|e| OpfError::io(path, e))?;
    parse_treatment(f, path, &config.treatment_unit_column, &config.treatment_date_column)
}

/// Observations with the config's columns. Without an explicit covariate
/// list every other numeric column is a covariate; non-numeric ones are
/// skipped with a warning.
pub fn parse_observations(
    reader: impl Read,
    path: &Path,
    config: &StudyConfig,
) -> Result<(PanelDataset, Vec<DroppedRow>, Vec<String>)> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers().map_err(csv_err(path))?.clone();
    let t = column(&headers, &config.time_column).ok_or_else(|| Error::MissingColumn(config.time_column.clone()))?;
    let u = column(&headers, &config.unit_column).ok_or_else(|| Error::MissingColumn(config.unit_column.clone()))?;
    let y = column(&headers, &config.outcome_column)
        .ok_or_else(|| Error::MissingOutcomeColumn(config.outcome_column.clone()))?;
    let records: Vec<csv::StringRecord> = rdr.records().collect::<Result<_, _>>().map_err(csv_err(path))?;
    let mut warnings = Vec::new();
    let explicit = config.covariate_columns.is_some();
    let candidates: Vec<(String, usize)> = match &config.covariate_columns {
        Some(names) => names
            .iter()
            .map(|n| column(&headers, n).map(|j| (n.clone(), j)).ok_or_else(|| Error::MissingColumn(n.clone())))
            .collect::<Result<_, _>>()?,
        None => headers
            .iter()
            .enumerate()
            .filter(|(j, _)| ![t, u, y].contains(j))
            .map(|(j, h)| (h.trim().to_string(), j))
            .collect(),
    };
    let mut covariates = Vec::new();
    for (name, j) in candidates {
        let bad = records
            .iter()
            .enumerate()
            .find(|(_, r)| !is_missing(&r[j]) && r[j].trim().parse::<f64>().is_err());
        match bad {
            Some((row, r)) if explicit => {
                return Err(OpfError::NonNumeric {
                    path: path.to_path_buf(),
                    column: name,
                    row: row + 1,
                    value: r[j].to_string(),
                })
            }
            Some(_) => warnings.push(format!("column `{name}` is not numeric and is not used as a covariate")),
            None => covariates.push((name, j)),
        }
    }
    let mut rows = Vec::with_capacity(records.len());
    for r in &records {
        let unit_id = r[u].trim().to_string();
        let date_text = r[t].trim();
        let date = parse_iso_date(date_text)?;
        let outcome = if is_missing(&r[y]) {
            None
        } else {
            Some(r[y].trim().parse::<f64>().map_err(|_| Error::NonNumericOutcome {
                unit: unit_id.clone(),
                date: date_text.to_string(),
                value: r[y].to_string(),
            })?)
        };
        let covs = covariates
            .iter()
            .map(|(_, j)| if is_missing(&r[*j]) { None } else { r[*j].trim().parse().ok() })
            .collect();
        rows.push(Observation {
            unit_id,
            date,
            outcome,
            covariates: covs,
        });
    }
    let names = covariates.into_iter().map(|(n, _)| n).collect();
    let (panel, dropped) = PanelDataset::new(config.outcome_column.clone(), names, rows)?;
    if !dropped.is_empty() {
        warnings.push(format!("{} rows off the date grid were dropped", dropped.len()));
    }
    Ok((panel, dropped, warnings))
}

pub fn read_observations(path: &Path, config: &StudyConfig) -> Result<(PanelDataset, Vec<DroppedRow>, Vec<String>)> {
    let f = std::fs::File::open(path).map_err(|e| OpfError::io(path, e))?;
    parse_observations(f, path, config)
}

/// What the validation pass found.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InputReport {
    pub rows: usize,
    pub units: usize,
    pub treated_units: usize,
    pub covariates: Vec<String>,
    pub shape: DataShape,
    pub facts: RuleFacts,
    pub dropped_rows: Vec<DroppedRow>,
    pub missing_outcomes: usize,
    pub warnings: Vec<String>,
}

impl InputReport {
    pub fn render(&self) -> String {
        let mut s = format!(
            "rows {}\nunits {} ({} treated)\nshape {:?}\ncovariates [{}]\n",
            self.rows,
            self.units,
            self.treated_units,
            self.shape,
            self.covariates.join(", ")
        );
        s += &format!(
            "events {} | max treated per cohort {} | controls {} | pre periods {} | post periods {}\n",
            self.facts.total_events,
            self.facts.max_treated_per_cohort,
            self.facts.n_control_units,
            self.facts.pre_periods,
            self.facts.post_periods
        );
        s += &format!("missing outcomes {}\ndropped rows {}\n", self.missing_outcomes, self.dropped_rows.len());
        for w in &self.warnings {
            s += &format!("warning: {w}\n");
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct Inputs {
    pub config: StudyConfig,
    pub treatment: TreatmentTable,
    pub panel: PanelDataset,
    pub report: InputReport,
}

/// Paths of one study's inputs.
#[derive(Debug, Clone)]
pub struct InputPaths {
    pub treatment: PathBuf,
    pub observations: PathBuf,
    pub config: PathBuf,
}

/// Read and cross-check every input.
pub fn parse_inputs(paths: &InputPaths) -> Result<Inputs> {
    let (config, mut warnings) = read_config(&paths.config)?;
    let treatment = read_treatment(&paths.treatment, &config)?;
    let (panel, dropped_rows, w) = read_observations(&paths.observations, &config)?;
    warnings.extend(w);
    check_study_inputs(&panel, &treatment)?;
    let facts = summarize(&panel, &treatment, &config.cohort_params(panel.period))?;
    let units: BTreeSet<&str> = panel.rows.iter().map(|r| r.unit_id.as_str()).collect();
    let report = InputReport {
        rows: panel.rows.len(),
        units: units.len(),
        treated_units: treatment.len(),
        covariates: panel.covariate_columns.clone(),
        shape: detect_shape(&panel),
        facts,
        dropped_rows,
        missing_outcomes: panel.rows.iter().filter(|r| r.outcome.is_none()).count(),
        warnings,
    };
    Ok(Inputs {
        config,
        treatment,
        panel,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("test.csv")
    }

    fn config() -> StudyConfig {
        StudyConfig::new("date", "unit", "sales", 2, 1)
    }

    #[test]
    fn missing_mandatory_field() {
        let e = parse_config(r#"{"time_column":"d","unit_column":"u","outcome_column":"y","pre_window":3}"#, p()).unwrap_err();
        assert!(matches!(e, OpfError::Core(Error::MissingConfigField("post_window"))));
        assert_eq!(e.exit_code(), crate::error::exit::VALIDATION);
    }

    #[test]
    fn unknown_keys_warn() {
        let (c, w) = parse_config(
            r#"{"time_column":"d","unit_column":"u","outcome_column":"y","pre_window":3,"post_window":2,
                "colour":"blue","hyperparameters":{"k_folds":3,"speed":9}}"#,
            p(),
        )
        .unwrap();
        assert_eq!(c.hyperparameters.k_folds, 3);
        assert_eq!(w.len(), 2);
    }

    #[test]
    fn treatment_dates_must_be_iso() {
        let e = parse_treatment("unit_id,treatment_date\nA,07/23/2022\n".as_bytes(), p(), "unit_id", "treatment_date")
            .unwrap_err();
        assert!(matches!(e, OpfError::Core(Error::InvalidDate(_))));
        let t = parse_treatment("unit_id,treatment_date\nA,2022-07-23\n".as_bytes(), p(), "unit_id", "treatment_date")
            .unwrap();
        assert_eq!(t.len(), 1);
    }

    #[test]
    fn observations_columns_and_missing_cells() {
        let csv = "unit,date,sales,price,region\nA,2020-01-01,1.5,2,north\nA,2020-02-01,NA,3,north\nB,2020-01-01,2,,south\nB,2020-02-01,3,4,south\n";
        let (panel, dropped, w) = parse_observations(csv.as_bytes(), p(), &config()).unwrap();
        assert!(dropped.is_empty());
        assert_eq!(panel.covariate_columns, vec!["price".to_string()]);
        assert_eq!(w.len(), 1);
        assert_eq!(panel.rows[1].outcome, None);
        assert_eq!(panel.rows[2].covariates[0], None);

        let bad = "unit,date,revenue\nA,2020-01-01,1\n";
        let e = parse_observations(bad.as_bytes(), p(), &config()).unwrap_err();
        assert!(matches!(e, OpfError::Core(Error::MissingOutcomeColumn(ref c)) if c == "sales"));
        assert!(e.to_string().contains("sales"));

        let text = "unit,date,sales\nA,2020-01-01,lots\n";
        let e = parse_observations(text.as_bytes(), p(), &config()).unwrap_err();
        assert!(matches!(e, OpfError::Core(Error::NonNumericOutcome { .. })));

        let mut c = config();
        c.covariate_columns = Some(vec!["region".into()]);
        let e = parse_observations(csv.as_bytes(), p(), &c).unwrap_err();
        assert!(matches!(e, OpfError::NonNumeric { ref column, .. } if column == "region"));
    }
}
