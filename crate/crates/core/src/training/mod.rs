//! Toy mixed-precision training harness.
//!
//! Master weights live in binary32 and are only touched by the SGD update.
//! Every forward pass rounds them into the working format on the fly, every
//! layer boundary is rounded, and matrix products reduce with the configured
//! accumulate mode. With dynamic loss scaling on, the loss gradient is
//! multiplied by a power-of-two scale before backward and the parameter
//! gradients are divided by it afterwards.

pub mod config;
pub mod data;
pub mod layers;
pub mod loss;
pub mod precision;
pub mod report;
pub mod scaler;

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::telemetry::{self, ExportFormat, Recorder, RunMeta, RunSummary, TelemetryError};

pub use config::{ConfigError, Task, TrainConfig};
pub use data::Dataset;
pub use layers::{Layer, Model, Observer, Tensor};
pub use precision::Precision;
pub use scaler::{dls_step, DlsOutcome, LossScaler, ScalerConfig, ScalerError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Scaler(#[from] ScalerError),
    #[error(transparent)]
    Telemetry(#[from] TelemetryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Run outcome, in the converged / degraded / failed taxonomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Converged,
    Degraded,
    Diverged,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Converged => "converged",
            Outcome::Degraded => "degraded",
            Outcome::Diverged => "diverged",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: u64,
    pub loss: f32,
    pub scale: f32,
    pub skipped: bool,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub model: Model,
    pub summary: RunSummary,
    pub loss_curve: Vec<LossPoint>,
    /// Loss of the final model over the whole dataset, same arithmetic.
    pub final_loss: f32,
    pub outcome: Outcome,
    pub skipped_steps: u64,
    pub final_scale: f32,
}

impl TrainResult {
    pub fn report(&self) -> RunReport {
        RunReport {
            summary: self.summary.headline(),
            final_loss: self.final_loss,
            outcome: self.outcome,
            steps_run: self.loss_curve.len() as u64,
            skipped_steps: self.skipped_steps,
            final_scale: self.final_scale,
        }
    }
}

/// What `train` writes as `<run_id>.summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    #[serde(flatten)]
    pub summary: RunSummary,
    #[serde(with = "lossy_float")]
    pub final_loss: f32,
    pub outcome: Outcome,
    pub steps_run: u64,
    pub skipped_steps: u64,
    pub final_scale: f32,
}

/// JSON has no NaN or infinity; those are written as strings.
mod lossy_float {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f32, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f32(*v)
        } else {
            s.collect_str(v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f32),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f32, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

impl TrainConfig {
    pub fn precision(&self) -> Precision {
        match self.format {
            None => Precision::Reference,
            Some(format) => Precision::Quantized {
                format,
                mode: self.mode,
            },
        }
    }

    pub fn meta(&self) -> RunMeta {
        RunMeta {
            run_id: self.run_id.clone(),
            format: self.format.map_or_else(|| "none".to_string(), |f| f.to_string()),
            dls: self.dls,
            mode: self.mode.to_string(),
        }
    }
}

/// Mean loss of `model` over all of `data`.
pub fn evaluate(model: &Model, data: &Dataset, prec: &Precision) -> Result<f32, TrainError> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let (x, t) = data.batch(&idx);
    let pass = model.forward(&x, prec, &Observer::none())?;
    Ok(loss::loss_and_grad(&pass.output, &t).0)
}

/// Runs one training job. Identical configs give identical bits.
pub fn train(config: &TrainConfig) -> Result<TrainResult, TrainError> {
    config.validate()?;
    let data = config.task.dataset();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = config.build_model(&mut rng);
    let prec = config.precision();
    let mut scaler = if config.dls {
        Some(LossScaler::new(config.scaler)?)
    } else {
        None
    };
    let recorder = Recorder::default();
    let mut params = model.flat_params();
    let mut velocity = vec![0.0f32; params.len()];

    let n = data.len();
    let batch = config.batch_size.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    let mut curve = Vec::with_capacity(config.steps as usize);
    let mut skipped_steps = 0;
    let mut bad_steps = 0;
    let mut diverged = false;

    for step in 0..config.steps {
        if cursor + batch > n {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let (x, targets) = data.batch(&order[cursor..cursor + batch]);
        cursor += batch;

        let observe = config.telemetry_every > 0 && step % config.telemetry_every == 0;
        let obs = Observer {
            sink: observe.then_some(&recorder as &dyn telemetry::TelemetrySink),
            step,
        };
        let pass = model.forward(&x, &prec, &obs)?;
        let (loss, mut dy) = loss::loss_and_grad(&pass.output, &targets);
        let scale = scaler.as_ref().map_or(1.0, LossScaler::scale);
        if scale != 1.0 {
            dy.data.iter_mut().for_each(|g| *g *= scale);
        }
        let grads = layers::flatten_grads(&model.backward(&pass, &dy, &prec, &obs)?);

        let update = match scaler.as_mut() {
            Some(s) => match s.step(vec![grads]) {
                DlsOutcome::Proceed(mut g) => g.pop(),
                DlsOutcome::SkipStep => None,
            },
            None => Some(grads),
        };
        let skipped = update.is_none();
        if let Some(g) = update {
            for ((p, v), g) in params.iter_mut().zip(&mut velocity).zip(&g) {
                *v = config.momentum * *v + g;
                *p -= config.learning_rate * *v;
            }
            model.set_flat_params(&params);
        } else {
            skipped_steps += 1;
        }
        curve.push(LossPoint {
            step,
            loss,
            scale,
            skipped,
        });
        if !skipped {
            if loss.is_finite() {
                bad_steps = 0;
            } else {
                bad_steps += 1;
                if bad_steps >= config.divergence_patience {
                    diverged = true;
                    break;
                }
            }
        }
    }

    let final_loss = evaluate(&model, &data, &prec)?;
    let outcome = if diverged || !final_loss.is_finite() || final_loss > config.diverged_above {
        Outcome::Diverged
    } else if final_loss <= config.converged_below {
        Outcome::Converged
    } else {
        Outcome::Degraded
    };
    let records = recorder.into_records();
    let summary = if records.is_empty() {
        RunSummary::empty(config.meta())
    } else {
        telemetry::summarize(config.meta(), records)?
    };
    Ok(TrainResult {
        model,
        summary,
        loss_curve: curve,
        final_loss,
        outcome,
        skipped_steps,
        final_scale: scaler.as_ref().map_or(1.0, LossScaler::scale),
    })
}

pub const LOSS_CSV_HEADER: [&str; 4] = ["step", "loss", "scale", "skipped"];

pub fn write_loss_csv<W: Write>(curve: &[LossPoint], out: W) -> Result<(), TrainError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(LOSS_CSV_HEADER)?;
    for p in curve {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

/// Paths written by [`write_run_files`].
#[derive(Debug, Clone)]
pub struct RunFiles {
    pub loss_csv: PathBuf,
    pub telemetry_csv: PathBuf,
    pub summary_json: PathBuf,
}

impl RunFiles {
    pub fn in_dir(dir: &Path, run_id: &str) -> Self {
        RunFiles {
            loss_csv: dir.join(format!("{run_id}.loss.csv")),
            telemetry_csv: dir.join(format!("{run_id}.telemetry.csv")),
            summary_json: dir.join(format!("{run_id}.summary.json")),
        }
    }
}

/// Writes the loss curve, the telemetry log and the run report into `dir`.
pub fn write_run_files(result: &TrainResult, dir: &Path) -> Result<RunFiles, TrainError> {
    std::fs::create_dir_all(dir)?;
    let files = RunFiles::in_dir(dir, &result.summary.meta.run_id);
    write_loss_csv(&result.loss_curve, BufWriter::new(File::create(&files.loss_csv)?))?;
    telemetry::export(&result.summary, &files.telemetry_csv, ExportFormat::Csv)?;
    let mut f = BufWriter::new(File::create(&files.summary_json)?);
    serde_json::to_writer_pretty(&mut f, &result.report())?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(files)
}
