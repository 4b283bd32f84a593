//! Result files: curve and summary CSVs, overlap dumps and run manifests.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use trapcoh::{FitResult, OverlapMatrix};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::run::{CurveRun, SummaryRow};

pub const CURVE_HEADER: [&str; 5] = ["tau_total_s", "p2", "p2_stderr", "n_atoms", "seed"];
pub const SUMMARY_HEADER: [&str; 4] = ["n_pi", "tau_c_s", "slope_s_inv", "slope_err"];
pub const MANIFEST_NAME: &str = "manifest.json";

/// Shortest text that parses back to the same `f64`.
pub fn float(x: f64) -> String {
    format!("{x:?}")
}

fn optional(x: Option<f64>) -> String {
    x.map(float).unwrap_or_default()
}

/// Files written by one command. Unless [`OutputSet::commit`] is called,
/// everything written is removed again when the set is dropped, so a
/// failing run leaves no partial results behind.
#[derive(Debug)]
pub struct OutputSet {
    directory: PathBuf,
    written: Vec<PathBuf>,
    created_directory: bool,
    committed: bool,
}

impl OutputSet {
    pub fn new(directory: &Path) -> Result<Self> {
        let created_directory = !directory.exists();
        fs::create_dir_all(directory).map_err(|e| CliError::io(directory, e))?;
        Ok(Self {
            directory: directory.to_path_buf(),
            written: Vec::new(),
            created_directory,
            committed: false,
        })
    }

    pub fn directory(&self) -> &Path {
        &self.directory
    }

    pub fn write(&mut self, name: &str, contents: &[u8]) -> Result<PathBuf> {
        let path = self.directory.join(name);
        self.written.push(path.clone());
        fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    pub fn commit(mut self) -> Vec<PathBuf> {
        self.committed = true;
        std::mem::take(&mut self.written)
    }
}

impl Drop for OutputSet {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for path in &self.written {
            let _ = fs::remove_file(path);
        }
        if self.created_directory {
            let _ = fs::remove_dir(&self.directory);
        }
    }
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("writing to memory");
    for r in rows {
        w.write_record(&r).expect("writing to memory");
    }
    w.into_inner().expect("flushing to memory")
}

pub fn curve_csv(run: &CurveRun) -> Vec<u8> {
    csv_bytes(
        &CURVE_HEADER,
        run.rows.iter().map(|r| {
            vec![
                float(r.tau_total),
                float(r.p2),
                float(r.stderr),
                r.n_atoms.to_string(),
                r.seed.to_string(),
            ]
        }),
    )
}

pub fn summary_csv(rows: &[SummaryRow]) -> Vec<u8> {
    csv_bytes(
        &SUMMARY_HEADER,
        rows.iter().map(|r| {
            vec![
                r.n_pi.to_string(),
                optional(r.tau_c),
                optional(r.slope),
                optional(r.slope_err),
            ]
        }),
    )
}

/// Long-format dump `m,n,overlap` of every matrix element.
pub fn overlap_csv(o: &OverlapMatrix) -> Vec<u8> {
    let size = o.size();
    csv_bytes(
        &["m", "n", "overlap"],
        (0..size).flat_map(|m| {
            (0..size).map(move |n| vec![m.to_string(), n.to_string(), float(o.get(m, n))])
        }),
    )
}

fn parse_optional(path: &Path, line: usize, field: &str) -> Result<Option<f64>> {
    let field = field.trim();
    if field.is_empty() {
        return Ok(None);
    }
    field.parse().map(Some).map_err(|_| CliError::Config {
        line: Some(line),
        message: format!("{}: `{field}` is not a number", path.display()),
    })
}

/// Reads a summary table written by `scan-pulses`.
pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::io(path, e))?;
    let header = reader.headers().map_err(|e| CliError::io(path, e))?.clone();
    if header.iter().collect::<Vec<_>>() != SUMMARY_HEADER {
        return Err(CliError::Config {
            line: Some(1),
            message: format!(
                "{}: expected header {}",
                path.display(),
                SUMMARY_HEADER.join(",")
            ),
        });
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| CliError::io(path, e))?;
        let n_pi = record[0].trim().parse().map_err(|_| CliError::Config {
            line: Some(line),
            message: format!("{}: `{}` is not a pulse count", path.display(), &record[0]),
        })?;
        rows.push(SummaryRow {
            n_pi,
            tau_c: parse_optional(path, line, &record[1])?,
            slope: parse_optional(path, line, &record[2])?,
            slope_err: parse_optional(path, line, &record[3])?,
        });
    }
    Ok(rows)
}

pub fn fit_json(fit: &FitResult) -> Value {
    json!({
        "a": fit.a,
        "a_err": fit.a_err(),
        "b": fit.b,
        "b_err": fit.b_err(),
        "c": fit.c,
        "c_err": fit.c_err(),
        "chi2": fit.chi2,
        "dof": fit.dof,
        "iterations": fit.iterations,
        "covariance": fit.covariance,
    })
}

/// Manifest of a run: the resolved config, its fingerprint, the command,
/// the files written and any command-specific results.
pub fn manifest(command: &str, cfg: &ExperimentConfig, files: &[String], extra: Value) -> Vec<u8> {
    let mut m = json!({
        "tool": "trapcoh",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "fingerprint": cfg.fingerprint(),
        "config": cfg,
        "files": files,
    });
    if let (Some(map), Value::Object(more)) = (m.as_object_mut(), extra) {
        map.extend(more);
    }
    let mut text = serde_json::to_vec_pretty(&m).expect("manifest always serializes");
    text.push(b'\n');
    text
}
