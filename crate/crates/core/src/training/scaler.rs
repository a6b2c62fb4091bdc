//! Dynamic loss scaling.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScalerError {
    #[error("{name} = {value} is not a positive finite power of two")]
    NotPowerOfTwo { name: &'static str, value: f32 },
    #[error("scale bounds inverted: min {min} > max {max}")]
    Bounds { min: f32, max: f32 },
    #[error("growth interval must be at least 1")]
    GrowthInterval,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalerConfig {
    pub init_scale: f32,
    pub growth_interval: u32,
    pub growth_factor: f32,
    pub backoff_factor: f32,
    pub min_scale: f32,
    pub max_scale: f32,
}

impl Default for ScalerConfig {
    /// Desk-scale defaults: growth interval 200 instead of the customary 2000.
    fn default() -> Self {
        ScalerConfig {
            init_scale: 32768.0,
            growth_interval: 200,
            growth_factor: 2.0,
            backoff_factor: 0.5,
            min_scale: 1.0,
            max_scale: 16_777_216.0,
        }
    }
}

pub(crate) fn is_pow2(x: f32) -> bool {
    x.is_finite() && x > 0.0 && x.to_bits() & 0x7F_FFFF == 0
}

/// Loss-scaling state. The scale is always a power of two, so scaling and
/// unscaling never round (short of overflow or binary32 underflow).
#[derive(Debug, Clone, PartialEq)]
pub struct LossScaler {
    config: ScalerConfig,
    scale: f32,
    good_steps: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DlsOutcome {
    /// Gradients were finite; here they are, divided by the scale used.
    Proceed(Vec<Vec<f32>>),
    /// Some gradient was infinite or NaN; the scale has been backed off.
    SkipStep,
}

impl LossScaler {
    pub fn new(config: ScalerConfig) -> Result<Self, ScalerError> {
        for (name, value) in [
            ("init_scale", config.init_scale),
            ("growth_factor", config.growth_factor),
            ("backoff_factor", config.backoff_factor),
            ("min_scale", config.min_scale),
            ("max_scale", config.max_scale),
        ] {
            if !is_pow2(value) {
                return Err(ScalerError::NotPowerOfTwo { name, value });
            }
        }
        if config.min_scale > config.max_scale {
            return Err(ScalerError::Bounds {
                min: config.min_scale,
                max: config.max_scale,
            });
        }
        if config.growth_interval == 0 {
            return Err(ScalerError::GrowthInterval);
        }
        Ok(LossScaler {
            scale: config.init_scale.clamp(config.min_scale, config.max_scale),
            config,
            good_steps: 0,
        })
    }

    pub fn scale(&self) -> f32 {
        self.scale
    }

    pub fn good_steps(&self) -> u32 {
        self.good_steps
    }

    pub fn config(&self) -> &ScalerConfig {
        &self.config
    }

    /// Checks the gradients of a backward pass run on `scale * loss`.
    pub fn step(&mut self, mut grads: Vec<Vec<f32>>) -> DlsOutcome {
        let overflow = grads.iter().flatten().any(|g| !g.is_finite());
        if overflow {
            self.scale = (self.scale * self.config.backoff_factor).max(self.config.min_scale);
            self.good_steps = 0;
            return DlsOutcome::SkipStep;
        }
        let scale = self.scale;
        for g in grads.iter_mut().flatten() {
            *g /= scale;
        }
        self.good_steps += 1;
        if self.good_steps >= self.config.growth_interval {
            self.scale = (self.scale * self.config.growth_factor).min(self.config.max_scale);
            self.good_steps = 0;
        }
        DlsOutcome::Proceed(grads)
    }
}

/// Applies one dynamic-loss-scaling decision to `gradients`.
pub fn dls_step(scaler: &mut LossScaler, gradients: Vec<Vec<f32>>) -> DlsOutcome {
    scaler.step(gradients)
}
