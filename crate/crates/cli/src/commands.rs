//! Subcommands: each runs one experiment and writes its files.

use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use trapcoh::overlap_matrix;

use crate::config::{EngineKind, ExperimentConfig};
use crate::error::Result;
use crate::output::{self, OutputSet, MANIFEST_NAME};
use crate::run::{self, CalibrationRequest};

/// What a command produced, for the caller to report.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
    pub summary: Value,
}

fn engine_warnings(cfg: &ExperimentConfig) -> Vec<String> {
    if cfg.engine.kind == EngineKind::Fock && cfg.noise_model() != trapcoh::NoiseConfig::quiet() {
        vec!["the fock engine is coherent; the noise section is ignored".to_string()]
    } else {
        Vec::new()
    }
}

fn write_curves(set: &mut OutputSet, curves: &[run::CurveRun]) -> Result<Vec<String>> {
    curves
        .iter()
        .map(|c| {
            let name = format!("{}.csv", c.stem());
            set.write(&name, &output::curve_csv(c))?;
            Ok(name)
        })
        .collect()
}

pub fn simulate(cfg: &ExperimentConfig, out: &Path) -> Result<Report> {
    let warnings = engine_warnings(cfg);
    let curves = run::simulate(cfg)?;
    let mut set = OutputSet::new(out)?;
    let names = write_curves(&mut set, &curves)?;
    set.write(
        MANIFEST_NAME,
        &output::manifest("simulate", cfg, &names, json!({})),
    )?;
    Ok(Report {
        files: set.commit(),
        warnings,
        summary: json!({ "curves": names, "fingerprint": cfg.fingerprint() }),
    })
}

pub fn scan_pulses(cfg: &ExperimentConfig, out: &Path) -> Result<Report> {
    let mut warnings = engine_warnings(cfg);
    let scan = run::scan_pulses(cfg)?;
    warnings.extend(scan.warnings.iter().cloned());
    let mut set = OutputSet::new(out)?;
    let mut names = write_curves(&mut set, &scan.curves)?;
    set.write("summary.csv", &output::summary_csv(&scan.rows))?;
    names.push("summary.csv".to_string());
    let fit = scan
        .fit
        .as_ref()
        .map(output::fit_json)
        .unwrap_or(Value::Null);
    let extra = json!({ "summary": scan.rows, "fit": fit, "warnings": warnings });
    set.write(
        MANIFEST_NAME,
        &output::manifest("scan-pulses", cfg, &names, extra),
    )?;
    Ok(Report {
        files: set.commit(),
        warnings,
        summary: json!({ "rows": scan.rows, "fit": fit }),
    })
}

pub fn calibrate(cfg: &ExperimentConfig, req: &CalibrationRequest, out: &Path) -> Result<Report> {
    let outcome = run::calibrate(cfg, req)?;
    let mut set = OutputSet::new(out)?;
    let mut calibrated = outcome.config.clone();
    calibrated.output.directory = cfg.output.directory.clone();
    set.write("calibrated.toml", calibrated.to_toml().as_bytes())?;
    let result = json!({
        "parameter": req.parameter,
        "value": outcome.value,
        "target_tau_c_s": req.target,
        "tau_c_s": outcome.tau_c,
        "tolerance": req.tolerance,
        "bounds": [req.bounds.0, req.bounds.1],
        "evaluations": outcome.history,
    });
    let extra = json!({
        "calibration": result,
        "calibrated_fingerprint": calibrated.fingerprint(),
    });
    set.write(
        MANIFEST_NAME,
        &output::manifest("calibrate", cfg, &["calibrated.toml".to_string()], extra),
    )?;
    Ok(Report {
        files: set.commit(),
        warnings: Vec::new(),
        summary: result,
    })
}

pub fn overlap(eta: f64, size: usize, out: &Path) -> Result<Report> {
    let o = overlap_matrix(eta, size)?;
    let parent = out.parent().filter(|p| !p.as_os_str().is_empty());
    let mut set = OutputSet::new(parent.unwrap_or(Path::new(".")))?;
    let name = out
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("overlap.csv")
        .to_string();
    set.write(&name, &output::overlap_csv(&o))?;
    Ok(Report {
        files: set.commit(),
        warnings: Vec::new(),
        summary: json!({ "eta": eta, "size": size, "converged_columns": o.converged_columns() }),
    })
}

/// Limiting-rate fit of an existing summary table; nothing is written.
pub fn fit(summary: &Path) -> Result<Report> {
    let rows = output::read_summary(summary)?;
    let data: Vec<(usize, f64, f64)> = rows
        .iter()
        .filter_map(|r| Some((r.n_pi, r.slope?, r.slope_err?)))
        .collect();
    let fit = trapcoh::fit_limiting_rate(&data)?;
    Ok(Report {
        files: Vec::new(),
        warnings: Vec::new(),
        summary: output::fit_json(&fit),
    })
}
