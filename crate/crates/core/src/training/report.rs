//! Cross-run comparison table built from `<run_id>.summary.json` files.

use std::cmp::Reverse;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::formats::FpFormat;
use crate::telemetry;

use super::{RunFiles, RunReport};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no *.summary.json files in {0}")]
    Empty(PathBuf),
    #[error("cannot list {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Default)]
pub struct Scan {
    pub reports: Vec<RunReport>,
    /// One message per run that could not be loaded.
    pub warnings: Vec<String>,
}

const SUFFIX: &str = ".summary.json";

/// Loads every run summary in `dir` and cross-checks it against the run's
/// telemetry CSV. Runs that fail to load are skipped with a warning.
pub fn scan(dir: &Path) -> Result<Scan, ReportError> {
    let io = |source| ReportError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .map_err(io)?
        .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect::<Result<_, _>>()
        .map_err(io)?;
    names.retain(|n| n.ends_with(SUFFIX));
    names.sort();
    if names.is_empty() {
        return Err(ReportError::Empty(dir.to_path_buf()));
    }
    let mut out = Scan::default();
    for name in names {
        match load_one(dir, &name) {
            Ok(r) => out.reports.push(r),
            Err(msg) => out.warnings.push(format!("{name}: {msg}")),
        }
    }
    sort(&mut out.reports);
    Ok(out)
}

fn load_one(dir: &Path, name: &str) -> Result<RunReport, String> {
    let text = std::fs::read_to_string(dir.join(name)).map_err(|e| e.to_string())?;
    let report: RunReport = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let run_id = &report.summary.meta.run_id;
    if name != format!("{run_id}{SUFFIX}") {
        return Err(format!("run_id {run_id:?} does not match the file name"));
    }
    let files = RunFiles::in_dir(dir, run_id);
    let log = telemetry::import_csv(&files.telemetry_csv, report.summary.meta.clone())
        .map_err(|e| format!("{}: {e}", files.telemetry_csv.display()))?;
    let recomputed = if log.records.is_empty() {
        0.0
    } else {
        telemetry::summarize(log.meta, log.records).map_err(|e| e.to_string())?.global_max
    };
    if recomputed != report.summary.global_max {
        return Err(format!(
            "summary max {} disagrees with telemetry log max {recomputed}",
            report.summary.global_max
        ));
    }
    Ok(report)
}

/// Unquantized runs first, then by exponent width, wider significand first,
/// denormals before flush; within a format DLS off before on.
pub fn sort(reports: &mut [RunReport]) {
    reports.sort_by_cached_key(|r| {
        let m = &r.summary.meta;
        let fmt = m
            .format
            .parse::<FpFormat>()
            .ok()
            .map(|f| (f.exp_bits(), Reverse(f.man_bits()), !f.denormals()));
        (m.format != "none", fmt, m.format.clone(), m.dls, m.mode.clone(), m.run_id.clone())
    });
}

pub fn render(reports: &[RunReport]) -> String {
    let header = ["run_id", "format", "dls", "mode", "max_denormal", "final_loss", "outcome"];
    let rows: Vec<[String; 7]> = reports
        .iter()
        .map(|r| {
            let m = &r.summary.meta;
            [
                m.run_id.clone(),
                m.format.clone(),
                if m.dls { "on" } else { "off" }.to_string(),
                m.mode.clone(),
                format!("{:.6}", r.summary.global_max),
                format!("{:.6}", r.final_loss),
                r.outcome.to_string(),
            ]
        })
        .collect();
    let mut width = header.map(str::len);
    for row in &rows {
        for (w, cell) in width.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &[&str]| {
        let padded: Vec<String> = cells
            .iter()
            .zip(width)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        let _ = writeln!(out, "{}", padded.join("  ").trim_end());
    };
    line(&mut out, &header);
    let rule: Vec<String> = width.iter().map(|&w| "-".repeat(w)).collect();
    line(&mut out, &rule.iter().map(String::as_str).collect::<Vec<_>>());
    for row in &rows {
        line(&mut out, &row.iter().map(String::as_str).collect::<Vec<_>>());
    }
    out
}
