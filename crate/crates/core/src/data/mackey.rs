//! Mackey-Glass delay differential equation
//! `dx/dt = α·x(t-τ) / (1 + x(t-τ)^n) - β·x(t)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::math;

/// Lyapunov time of the default system, in time units.
pub const LYAPUNOV_TIME: f64 = 112.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MackeyGlassConfig {
    pub alpha: f64,
    pub beta: f64,
    pub exponent: f64,
    pub tau: f64,
    /// Integration step.
    pub dt: f64,
    /// Spacing of the returned samples after [`subsample`].
    pub sample_dt: f64,
    pub total_time: f64,
    /// Constant history `x(t ≤ 0)` before the per-seed offset.
    pub history: f64,
    /// Half-width of the uniform per-seed offset added to the history.
    pub history_jitter: f64,
}

impl Default for MackeyGlassConfig {
    fn default() -> Self {
        Self {
            alpha: 0.2,
            beta: 0.1,
            exponent: 10.0,
            tau: 17.0,
            dt: 0.1,
            sample_dt: 1.0,
            total_time: 2e5,
            history: 1.2,
            history_jitter: 0.01,
        }
    }
}

fn whole_ratio(num: f64, den: f64, what: &str) -> Result<usize> {
    let r = num / den;
    let n = math::round(r);
    if !(n >= 1.0) || math::abs(r - n) > 1e-9 * n {
        return Err(invalid(format!("{what}: {num} is not a whole multiple of {den}")));
    }
    Ok(n as usize)
}

impl MackeyGlassConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !(self.total_time > 0.0) || !(self.tau > 0.0) {
            return Err(invalid("dt, tau and total_time must be positive"));
        }
        self.delay_steps()?;
        self.subsample_factor()?;
        self.steps()?;
        Ok(())
    }

    /// `τ / δt`.
    pub fn delay_steps(&self) -> Result<usize> {
        whole_ratio(self.tau, self.dt, "tau")
    }

    /// `Δt / δt`.
    pub fn subsample_factor(&self) -> Result<usize> {
        whole_ratio(self.sample_dt, self.dt, "sample_dt")
    }

    /// `T / δt`.
    pub fn steps(&self) -> Result<usize> {
        whole_ratio(self.total_time, self.dt, "total_time")
    }

    /// History value for `seed`.
    pub fn history_for(&self, seed: u64) -> f64 {
        if self.history_jitter > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            self.history + rng.random_range(-self.history_jitter..=self.history_jitter)
        } else {
            self.history
        }
    }
}

/// RK4 integration with step `dt`; returns `T / δt` samples starting with
/// `x(0)`. The delayed value is read from the grid and held fixed across
/// the four stages of a step.
pub fn integrate_mackey_glass(config: &MackeyGlassConfig, seed: u64) -> Result<Vec<f64>> {
    config.validate()?;
    let delay = config.delay_steps()?;
    let steps = config.steps()?;
    let x_hist = config.history_for(seed);
    let (alpha, beta, n, h) = (config.alpha, config.beta, config.exponent, config.dt);

    let mut out = vec![0.0; steps];
    out[0] = x_hist;
    for i in 0..steps - 1 {
        let x = out[i];
        let xd = if i >= delay { out[i - delay] } else { x_hist };
        let forcing = alpha * xd / (1.0 + math::powf(xd, n));
        let f = |y: f64| forcing - beta * y;
        let k1 = f(x);
        let k2 = f(x + 0.5 * h * k1);
        let k3 = f(x + 0.5 * h * k2);
        let k4 = f(x + h * k3);
        let next = x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if !next.is_finite() {
            return Err(Error::Integration { step: i + 1 });
        }
        out[i + 1] = next;
    }
    Ok(out)
}

/// Every `factor`-th sample starting at index 0.
pub fn subsample(series: &[f64], factor: usize) -> Result<Vec<f64>> {
    if factor == 0 || factor > series.len() {
        return Err(invalid(format!("subsample factor {factor} invalid for {} samples", series.len())));
    }
    Ok(series.iter().step_by(factor).copied().collect())
}

/// Integrates and subsamples to `sample_dt`.
pub fn mackey_glass_series(config: &MackeyGlassConfig, seed: u64) -> Result<Vec<f64>> {
    let raw = integrate_mackey_glass(config, seed)?;
    subsample(&raw, config.subsample_factor()?)
}
