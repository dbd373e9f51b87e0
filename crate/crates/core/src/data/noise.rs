use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Result};
use crate::math;

/// Population variance.
pub fn variance(series: &[f64]) -> f64 {
    if series.is_empty() {
        return 0.0;
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    series.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}

/// Adds i.i.d. Gaussian noise with variance `var(series) / 10^(snr_db / 10)`.
pub fn add_noise_snr<R: Rng + ?Sized>(series: &[f64], snr_db: f64, rng: &mut R) -> Result<Vec<f64>> {
    let power = variance(series);
    if !(power > 0.0) {
        return Err(invalid("cannot set a signal-to-noise ratio on a constant series"));
    }
    if !snr_db.is_finite() {
        return Err(invalid(format!("snr must be finite, got {snr_db}")));
    }
    let sigma = math::sqrt(power / math::powf(10.0, snr_db / 10.0));
    let normal = Normal::new(0.0, sigma).map_err(|e| invalid(format!("noise distribution: {e}")))?;
    Ok(series.iter().map(|x| x + normal.sample(rng)).collect())
}
