//! Per-tensor value-class counting and run-level denormal summaries.
//!
//! The denormal fraction of a tensor is `n_denormal / n_total`. Zeros,
//! infinities and NaNs count in the denominator only; in particular a value
//! flushed to zero by a `/n` format is a zero, not a denormal.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formats::{classify_f32, decompose_f32, FpClass, FpFormat};

#[derive(Debug, Error)]
pub enum TelemetryError {
    #[error("duplicate record for tensor {tensor_id:?}, phase {phase}, step {step}")]
    Duplicate {
        tensor_id: String,
        phase: Phase,
        step: u64,
    },
    #[error("cannot summarize an empty log")]
    EmptyLog,
    #[error("corrupt telemetry row: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Role of a monitored tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    ForwardActivation,
    Weight,
    ActivationGradient,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::ForwardActivation => "forward_activation",
            Phase::Weight => "weight",
            Phase::ActivationGradient => "activation_gradient",
        })
    }
}

impl FromStr for Phase {
    type Err = TelemetryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "forward_activation" => Ok(Phase::ForwardActivation),
            "weight" => Ok(Phase::Weight),
            "activation_gradient" => Ok(Phase::ActivationGradient),
            other => Err(TelemetryError::Corrupt(format!("unknown phase {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub zero: u64,
    pub denormal: u64,
    pub normal: u64,
    pub inf: u64,
    pub nan: u64,
}

impl ClassCounts {
    pub fn of(values: &[f32], format: FpFormat) -> ClassCounts {
        let mut c = ClassCounts::default();
        for &v in values {
            c.add(classify_f32(v, format));
        }
        c
    }

    pub fn add(&mut self, class: FpClass) {
        *self.slot(class) += 1;
    }

    pub fn get(&self, class: FpClass) -> u64 {
        match class {
            FpClass::Zero => self.zero,
            FpClass::Denormal => self.denormal,
            FpClass::Normal => self.normal,
            FpClass::Infinity => self.inf,
            FpClass::NaN => self.nan,
        }
    }

    fn slot(&mut self, class: FpClass) -> &mut u64 {
        match class {
            FpClass::Zero => &mut self.zero,
            FpClass::Denormal => &mut self.denormal,
            FpClass::Normal => &mut self.normal,
            FpClass::Infinity => &mut self.inf,
            FpClass::NaN => &mut self.nan,
        }
    }

    pub fn total(&self) -> u64 {
        self.zero + self.denormal + self.normal + self.inf + self.nan
    }
}

/// Class counts of one tensor at one training step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenormalStats {
    pub tensor_id: String,
    pub phase: Phase,
    pub step: u64,
    pub counts: ClassCounts,
}

impl DenormalStats {
    pub fn from_values(tensor_id: &str, phase: Phase, step: u64, values: &[f32], format: FpFormat) -> Self {
        DenormalStats {
            tensor_id: tensor_id.to_string(),
            phase,
            step,
            counts: ClassCounts::of(values, format),
        }
    }

    /// Zero for an empty tensor.
    pub fn fraction_denormal(&self) -> f64 {
        let total = self.counts.total();
        if total == 0 {
            0.0
        } else {
            self.counts.denormal as f64 / total as f64
        }
    }

    fn key(&self) -> (String, Phase, u64) {
        (self.tensor_id.clone(), self.phase, self.step)
    }

    fn sort_key(&self) -> (u64, &str, Phase) {
        (self.step, self.tensor_id.as_str(), self.phase)
    }
}

/// Receiver of per-tensor statistics. Implementations must accept records
/// from several threads.
pub trait TelemetrySink: Send + Sync {
    fn record(&self, stats: DenormalStats) -> Result<(), TelemetryError>;
}

/// Discards everything.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullSink;

impl TelemetrySink for NullSink {
    fn record(&self, _stats: DenormalStats) -> Result<(), TelemetryError> {
        Ok(())
    }
}

/// In-memory run log. Rejects a second record for the same
/// `(tensor_id, phase, step)`.
#[derive(Debug, Default)]
pub struct Recorder {
    inner: Mutex<RecorderInner>,
}

#[derive(Debug, Default)]
struct RecorderInner {
    records: Vec<DenormalStats>,
    seen: HashSet<(String, Phase, u64)>,
    max_by_tensor: BTreeMap<String, f64>,
}

impl Recorder {
    pub fn records(&self) -> Vec<DenormalStats> {
        self.inner.lock().unwrap().records.clone()
    }

    pub fn into_records(self) -> Vec<DenormalStats> {
        self.inner.into_inner().unwrap().records
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Running maximum of the denormal fraction over everything recorded.
    pub fn running_max(&self) -> f64 {
        self.inner
            .lock()
            .unwrap()
            .max_by_tensor
            .values()
            .fold(0.0, |a, &b| a.max(b))
    }
}

impl TelemetrySink for Recorder {
    fn record(&self, stats: DenormalStats) -> Result<(), TelemetryError> {
        let mut inner = self.inner.lock().unwrap();
        if !inner.seen.insert(stats.key()) {
            return Err(TelemetryError::Duplicate {
                tensor_id: stats.tensor_id,
                phase: stats.phase,
                step: stats.step,
            });
        }
        let frac = stats.fraction_denormal();
        let slot = inner.max_by_tensor.entry(stats.tensor_id.clone()).or_insert(0.0);
        *slot = slot.max(frac);
        inner.records.push(stats);
        Ok(())
    }
}

/// Descriptive fields of a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMeta {
    pub run_id: String,
    /// Format spec, or `none` for an unquantized run.
    pub format: String,
    pub dls: bool,
    pub mode: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    #[serde(flatten)]
    pub meta: RunMeta,
    /// Largest denormal fraction seen in any tensor at any step.
    pub global_max: f64,
    pub per_tensor_max: BTreeMap<String, f64>,
    /// Records in `(step, tensor_id, phase)` order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub records: Vec<DenormalStats>,
}

impl RunSummary {
    pub fn empty(meta: RunMeta) -> Self {
        RunSummary {
            meta,
            global_max: 0.0,
            per_tensor_max: BTreeMap::new(),
            records: Vec::new(),
        }
    }

    /// The summary without its per-step records.
    pub fn headline(&self) -> RunSummary {
        RunSummary {
            records: Vec::new(),
            ..self.clone()
        }
    }
}

/// Computes per-tensor and global maxima. The result does not depend on the
/// order of `records`.
pub fn summarize(meta: RunMeta, mut records: Vec<DenormalStats>) -> Result<RunSummary, TelemetryError> {
    if records.is_empty() {
        return Err(TelemetryError::EmptyLog);
    }
    records.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    let mut per_tensor_max = BTreeMap::new();
    for r in &records {
        let slot = per_tensor_max.entry(r.tensor_id.clone()).or_insert(0.0f64);
        *slot = slot.max(r.fraction_denormal());
    }
    let global_max = per_tensor_max.values().fold(0.0f64, |a, &b| a.max(b));
    Ok(RunSummary {
        meta,
        global_max,
        per_tensor_max,
        records,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Json,
}

pub const CSV_HEADER: [&str; 10] = [
    "run_id",
    "tensor_id",
    "phase",
    "step",
    "n_zero",
    "n_denormal",
    "n_normal",
    "n_inf",
    "n_nan",
    "fraction",
];

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    run_id: String,
    tensor_id: String,
    phase: Phase,
    step: u64,
    n_zero: u64,
    n_denormal: u64,
    n_normal: u64,
    n_inf: u64,
    n_nan: u64,
    fraction: f64,
}

pub fn export(summary: &RunSummary, path: &Path, format: ExportFormat) -> Result<(), TelemetryError> {
    let file = BufWriter::new(File::create(path)?);
    match format {
        ExportFormat::Csv => write_csv(summary, file),
        ExportFormat::Json => {
            let mut file = file;
            serde_json::to_writer_pretty(&mut file, summary)?;
            file.write_all(b"\n")?;
            file.flush()?;
            Ok(())
        }
    }
}

pub fn write_csv<W: Write>(summary: &RunSummary, out: W) -> Result<(), TelemetryError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in &summary.records {
        w.serialize(CsvRow {
            run_id: summary.meta.run_id.clone(),
            tensor_id: r.tensor_id.clone(),
            phase: r.phase,
            step: r.step,
            n_zero: r.counts.zero,
            n_denormal: r.counts.denormal,
            n_normal: r.counts.normal,
            n_inf: r.counts.inf,
            n_nan: r.counts.nan,
            fraction: r.fraction_denormal(),
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a CSV export back. The CSV carries no format/DLS/mode columns, so
/// those come from `meta`; `meta.run_id` must match every row.
pub fn import_csv(path: &Path, meta: RunMeta) -> Result<RunSummary, TelemetryError> {
    let mut rdr = csv::Reader::from_reader(BufReader::new(File::open(path)?));
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(TelemetryError::Corrupt(format!("unexpected header {header:?}")));
    }
    let mut records = Vec::new();
    for row in rdr.deserialize::<CsvRow>() {
        let row = row?;
        if row.run_id != meta.run_id {
            return Err(TelemetryError::Corrupt(format!(
                "row for run {:?} in log of run {:?}",
                row.run_id, meta.run_id
            )));
        }
        let stats = DenormalStats {
            tensor_id: row.tensor_id,
            phase: row.phase,
            step: row.step,
            counts: ClassCounts {
                zero: row.n_zero,
                denormal: row.n_denormal,
                normal: row.n_normal,
                inf: row.n_inf,
                nan: row.n_nan,
            },
        };
        if stats.fraction_denormal() != row.fraction {
            return Err(TelemetryError::Corrupt(format!(
                "fraction {} disagrees with counts of {} at step {}",
                row.fraction, stats.tensor_id, stats.step
            )));
        }
        records.push(stats);
    }
    if records.is_empty() {
        return Ok(RunSummary::empty(meta));
    }
    summarize(meta, records)
}

pub fn import_json(path: &Path) -> Result<RunSummary, TelemetryError> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

/// Counts of finite nonzero values per binade `floor(log2 |x|)`.
pub fn binade_histogram(values: &[f32]) -> BTreeMap<i32, u64> {
    let mut h = BTreeMap::new();
    for &v in values {
        if v.is_finite() && v != 0.0 {
            let (_, m, q) = decompose_f32(v);
            let binade = q + 31 - m.leading_zeros() as i32;
            *h.entry(binade).or_insert(0) += 1;
        }
    }
    h
}
