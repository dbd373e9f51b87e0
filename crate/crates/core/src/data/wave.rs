use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::math;
use crate::tensor::Tensor;

/// Periodic traveling wave on an `height × width` grid:
/// `u = 0.5 + 0.25·sin(2π(x/W - s·t)) + 0.15·sin(2π(y/H + s·t/2))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WaveConfig {
    pub height: usize,
    pub width: usize,
    pub steps: usize,
    /// Cycles per step of the horizontal component.
    pub speed: f64,
}

impl Default for WaveConfig {
    fn default() -> Self {
        Self { height: 8, width: 16, steps: 600, speed: 0.025 }
    }
}

impl WaveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(invalid("wave grid must be non-empty"));
        }
        if self.steps < 400 {
            return Err(invalid("wave series needs at least 400 steps"));
        }
        if !self.speed.is_finite() {
            return Err(invalid("wave speed must be finite"));
        }
        Ok(())
    }

    /// Flattened field size `H·W`.
    pub fn cells(&self) -> usize {
        self.height * self.width
    }
}

/// Value of the field at cell `(y, x)` and step `t`.
pub fn wave_value(cfg: &WaveConfig, y: usize, x: usize, t: f64) -> f64 {
    let (h, w) = (cfg.height as f64, cfg.width as f64);
    0.5 + 0.25 * math::sin(2.0 * PI * (x as f64 / w - cfg.speed * t))
        + 0.15 * math::sin(2.0 * PI * (y as f64 / h + 0.5 * cfg.speed * t))
}

/// `steps × (H·W)` frames, each flattened row-major (`y` major, `x` minor).
pub fn generate_traveling_wave(cfg: &WaveConfig) -> Result<Tensor> {
    let mut data = Vec::with_capacity(cfg.steps * cfg.cells());
    for t in 0..cfg.steps {
        for y in 0..cfg.height {
            for x in 0..cfg.width {
                data.push(wave_value(cfg, y, x, t as f64));
            }
        }
    }
    Tensor::matrix(cfg.steps, cfg.cells(), data)
}
