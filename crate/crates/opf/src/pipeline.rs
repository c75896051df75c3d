//! File-to-file study runs.

use std::path::{Path, PathBuf};

use serde_json::json;

use opf_core::decide::{run_study, stage_of, StudyResult};

use crate::error::Result;
use crate::ingest::{parse_inputs, InputPaths, Inputs};
use crate::output::{create_dir, write_json, write_result};
use crate::plot::emit_plots;

pub const ERROR_FILE: &str = "error.json";

#[derive(Debug)]
pub struct RunOutput {
    pub study: StudyResult,
    pub result_path: PathBuf,
    /// Plot files, relative to the output directory.
    pub artifacts: Vec<String>,
}

/// Run a study on parsed inputs and write every artifact into `out_dir`.
pub fn run_inputs(inputs: &Inputs, out_dir: &Path) -> Result<RunOutput> {
    create_dir(out_dir)?;
    let study = match run_study(&inputs.treatment, &inputs.panel, &inputs.config) {
        Ok(s) => s,
        Err(e) => {
            let doc = json!({"code": e.code(), "stage": stage_of(&e), "message": e.to_string()});
            // best effort; the study error is what gets reported
            let _ = write_json(&out_dir.join(ERROR_FILE), &doc);
            return Err(e.into());
        }
    };
    for w in inputs.report.warnings.iter().chain(&study.warnings) {
        log::warn!("{w}");
    }
    let plots = emit_plots(&study.plots, out_dir)?;
    let artifacts: Vec<String> = plots
        .iter()
        .filter_map(|p| p.file_name().map(|f| f.to_string_lossy().into_owned()))
        .collect();
    let result_path = write_result(&study, &artifacts, out_dir)?;
    log::info!(
        "selected {}: ate {:.4} (se {:.4}), result in {}",
        study.selected.estimator_id,
        study.selected.ate,
        study.selected.se,
        result_path.display()
    );
    Ok(RunOutput {
        study,
        result_path,
        artifacts,
    })
}

/// Read the inputs, apply the seed override and run.
pub fn run_files(paths: &InputPaths, out_dir: &Path, seed: Option<u64>) -> Result<RunOutput> {
    let mut inputs = parse_inputs(paths)?;
    if let Some(s) = seed {
        inputs.config.seed = s;
    }
    log::info!(
        "{} rows, {} units, {} treated, shape {:?}",
        inputs.report.rows,
        inputs.report.units,
        inputs.report.treated_units,
        inputs.report.shape
    );
    run_inputs(&inputs, out_dir)
}
