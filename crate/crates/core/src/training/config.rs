//! Run configuration, read from `key = value` text files.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::formats::FpFormat;
use crate::instructions::AccumMode;

use super::data::{self, Dataset};
use super::layers::{Conv2d, Layer, Linear, Model};
use super::scaler::ScalerConfig;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key {key:?} given twice")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: bad value for {key}: {msg}")]
    Value { line: usize, key: String, msg: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    /// Linear regression, 8 inputs.
    Regression,
    /// Two hidden ReLU layers on three Gaussian blobs.
    Mlp,
    /// One convolution and a linear head on 8x8 bar images.
    Cnn,
}

impl Task {
    pub fn dataset(self) -> Dataset {
        match self {
            Task::Regression => data::regression(),
            Task::Mlp => data::blobs(),
            Task::Cnn => data::bars(),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Regression => "regression",
            Task::Mlp => "mlp",
            Task::Cnn => "cnn",
        })
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "regression" => Ok(Task::Regression),
            "mlp" => Ok(Task::Mlp),
            "cnn" => Ok(Task::Cnn),
            _ => Err(format!("unknown task {s:?} (regression|mlp|cnn)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub run_id: String,
    pub task: Task,
    /// `None` trains in plain binary32 with no quantization at all.
    pub format: Option<FpFormat>,
    pub mode: AccumMode,
    pub dls: bool,
    pub scaler: ScalerConfig,
    pub seed: u64,
    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub momentum: f32,
    /// Hidden widths for `mlp`; a single channel count for `cnn`.
    pub hidden: Vec<usize>,
    /// Record telemetry every this many steps; 0 turns it off.
    pub telemetry_every: u64,
    /// Consecutive non-finite losses (on steps not skipped by loss scaling)
    /// after which the run is abandoned.
    pub divergence_patience: u32,
    pub converged_below: f32,
    pub diverged_above: f32,
}

impl TrainConfig {
    pub fn for_task(task: Task) -> Self {
        let base = TrainConfig {
            run_id: format!("{task}"),
            task,
            format: Some(FpFormat::BINARY16),
            mode: AccumMode::Fmacs,
            dls: false,
            scaler: ScalerConfig::default(),
            seed: 1,
            steps: 600,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            hidden: vec![],
            telemetry_every: 10,
            divergence_patience: 20,
            converged_below: 0.0,
            diverged_above: 0.0,
        };
        match task {
            Task::Regression => TrainConfig {
                steps: 600,
                learning_rate: 0.02,
                converged_below: 5.0e-3,
                diverged_above: 1.0,
                ..base
            },
            Task::Mlp => TrainConfig {
                steps: 800,
                learning_rate: 0.05,
                hidden: vec![16, 16],
                converged_below: 0.45,
                diverged_above: 1.0,
                ..base
            },
            Task::Cnn => TrainConfig {
                steps: 300,
                learning_rate: 0.05,
                hidden: vec![4],
                converged_below: 0.1,
                diverged_above: 1.3,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.run_id.is_empty() || self.run_id.contains(['/', '\\', ',']) {
            return bad("run_id must be non-empty without '/', '\\' or ','");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.divergence_patience == 0 {
            return bad("divergence_patience must be at least 1");
        }
        if let Err(e) = super::scaler::LossScaler::new(self.scaler) {
            return Err(ConfigError::Invalid(e.to_string()));
        }
        match self.task {
            Task::Mlp if self.hidden.is_empty() || self.hidden.contains(&0) => {
                bad("mlp needs non-zero hidden widths")
            }
            Task::Cnn if self.hidden.len() != 1 || self.hidden[0] == 0 => bad("cnn takes one channel count in hidden"),
            _ => Ok(()),
        }
    }

    /// Builds the initial model; draws from `rng` in layer order.
    pub fn build_model(&self, rng: &mut impl Rng) -> Model {
        let layers = match self.task {
            Task::Regression => vec![Layer::Linear(Linear::new("fc0", 8, 1, rng))],
            Task::Mlp => {
                let mut layers = Vec::new();
                let mut width = 2;
                for (i, &h) in self.hidden.iter().enumerate() {
                    layers.push(Layer::Linear(Linear::new(&format!("fc{i}"), width, h, rng)));
                    layers.push(Layer::Relu);
                    width = h;
                }
                let name = format!("fc{}", self.hidden.len());
                layers.push(Layer::Linear(Linear::new(&name, width, 3, rng)));
                layers
            }
            Task::Cnn => {
                let ch = self.hidden[0];
                vec![
                    Layer::Conv(Conv2d::new("conv0", 1, ch, 3, rng)),
                    Layer::Relu,
                    Layer::Flatten,
                    Layer::Linear(Linear::new("fc0", ch * 36, 4, rng)),
                ]
            }
        };
        Model { layers }
    }

    /// Parses a config. `task` must come first (it selects the defaults);
    /// blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg: Option<TrainConfig> = None;
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line,
                text: raw.to_string(),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::DuplicateKey {
                    line,
                    key: key.to_string(),
                });
            }
            let err = |msg: String| ConfigError::Value {
                line,
                key: key.to_string(),
                msg,
            };
            if key == "task" {
                if cfg.is_some() {
                    return Err(err("task must be the first key".into()));
                }
                cfg = Some(TrainConfig::for_task(value.parse().map_err(err)?));
                continue;
            }
            let c = cfg.as_mut().ok_or_else(|| err("task must be the first key".into()))?;
            fn num<T: FromStr>(v: &str) -> Result<T, String>
            where
                T::Err: fmt::Display,
            {
                v.parse().map_err(|e: T::Err| e.to_string())
            }
            let res: Result<(), String> = (|| {
                match key {
                    "run_id" => c.run_id = value.to_string(),
                    "format" => {
                        c.format = match value {
                            "none" => None,
                            v => Some(v.parse().map_err(|e: crate::FormatError| e.to_string())?),
                        }
                    }
                    "mode" => c.mode = value.parse()?,
                    "dls" => c.dls = num(value)?,
                    "seed" => c.seed = num(value)?,
                    "steps" => c.steps = num(value)?,
                    "batch_size" => c.batch_size = num(value)?,
                    "learning_rate" => c.learning_rate = num(value)?,
                    "momentum" => c.momentum = num(value)?,
                    "hidden" => {
                        c.hidden = value
                            .split(',')
                            .map(|v| num(v.trim()))
                            .collect::<Result<_, _>>()?
                    }
                    "init_scale" => c.scaler.init_scale = num(value)?,
                    "growth_interval" => c.scaler.growth_interval = num(value)?,
                    "min_scale" => c.scaler.min_scale = num(value)?,
                    "max_scale" => c.scaler.max_scale = num(value)?,
                    "telemetry_every" => c.telemetry_every = num(value)?,
                    "divergence_patience" => c.divergence_patience = num(value)?,
                    "converged_below" => c.converged_below = num(value)?,
                    "diverged_above" => c.diverged_above = num(value)?,
                    _ => return Err(String::new()),
                }
                Ok(())
            })();
            match res {
                Ok(()) => {}
                Err(msg) if msg.is_empty() => {
                    return Err(ConfigError::UnknownKey {
                        line,
                        key: key.to_string(),
                    })
                }
                Err(msg) => return Err(err(msg)),
            }
        }
        let cfg = cfg.ok_or_else(|| ConfigError::Invalid("missing `task`".into()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for TrainConfig {
    /// Writes every key, in a form [`TrainConfig::parse`] reads back.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let hidden: Vec<String> = self.hidden.iter().map(|h| h.to_string()).collect();
        writeln!(f, "task = {}", self.task)?;
        writeln!(f, "run_id = {}", self.run_id)?;
        match self.format {
            Some(fmt) => writeln!(f, "format = {fmt}")?,
            None => writeln!(f, "format = none")?,
        }
        writeln!(f, "mode = {}", self.mode)?;
        writeln!(f, "dls = {}", self.dls)?;
        writeln!(f, "seed = {}", self.seed)?;
        writeln!(f, "steps = {}", self.steps)?;
        writeln!(f, "batch_size = {}", self.batch_size)?;
        writeln!(f, "learning_rate = {:?}", self.learning_rate)?;
        writeln!(f, "momentum = {:?}", self.momentum)?;
        if !hidden.is_empty() {
            writeln!(f, "hidden = {}", hidden.join(","))?;
        }
        writeln!(f, "init_scale = {:?}", self.scaler.init_scale)?;
        writeln!(f, "growth_interval = {}", self.scaler.growth_interval)?;
        writeln!(f, "min_scale = {:?}", self.scaler.min_scale)?;
        writeln!(f, "max_scale = {:?}", self.scaler.max_scale)?;
        writeln!(f, "telemetry_every = {}", self.telemetry_every)?;
        writeln!(f, "divergence_patience = {}", self.divergence_patience)?;
        writeln!(f, "converged_below = {:?}", self.converged_below)?;
        writeln!(f, "diverged_above = {:?}", self.diverged_above)
    }
}
