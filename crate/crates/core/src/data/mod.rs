//! Time-series sources, preprocessing and splitting.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::tensor::Tensor;

mod mackey;
mod noise;
mod scale;
mod wave;

pub use mackey::{integrate_mackey_glass, mackey_glass_series, subsample, MackeyGlassConfig, LYAPUNOV_TIME};
pub use noise::{add_noise_snr, variance};
pub use scale::{scale_minmax, Scaler};
pub use wave::{generate_traveling_wave, wave_value, WaveConfig};

/// Scaled train / validation / test sequences (`steps × d_x` each).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesDataset {
    pub train: Vec<Tensor>,
    pub val: Vec<Tensor>,
    pub test: Vec<Tensor>,
    /// Fitted on the training split; maps raw values to model space.
    pub scaler: Scaler,
    /// Time between consecutive rows.
    pub dt: f64,
    pub input_dim: usize,
    /// Where the data came from (generator settings or file path).
    pub provenance: String,
}

impl SeriesDataset {
    /// Scales the raw splits with a scaler fitted on `train` only.
    pub fn from_raw(train: Vec<Tensor>, val: Vec<Tensor>, test: Vec<Tensor>, dt: f64, provenance: String) -> Result<Self> {
        let scaler = Scaler::fit(&train)?;
        Self::with_scaler(train, val, test, scaler, dt, provenance)
    }

    /// Applies `scaler` to raw splits.
    pub fn with_scaler(
        train: Vec<Tensor>,
        val: Vec<Tensor>,
        test: Vec<Tensor>,
        scaler: Scaler,
        dt: f64,
        provenance: String,
    ) -> Result<Self> {
        let apply = |v: Vec<Tensor>| v.iter().map(|t| scaler.transform(t)).collect::<Result<Vec<_>>>();
        let (train, val, test) = (apply(train)?, apply(val)?, apply(test)?);
        let input_dim = scaler.dim();
        Ok(Self { train, val, test, scaler, dt, input_dim, provenance })
    }

    /// Number of rows per split.
    pub fn split_rows(&self) -> [usize; 3] {
        let rows = |v: &[Tensor]| v.iter().map(Tensor::rows).sum();
        [rows(&self.train), rows(&self.val), rows(&self.test)]
    }
}

/// Block layout for a single long Mackey-Glass trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MackeySplit {
    pub train_sequences: usize,
    pub val_sequences: usize,
    /// Rows per training / validation sequence (10 Lyapunov times by default).
    pub sequence_len: usize,
}

impl Default for MackeySplit {
    fn default() -> Self {
        Self { train_sequences: 32, val_sequences: 32, sequence_len: 1120 }
    }
}

/// Cuts `series` into contiguous blocks in temporal order: training
/// sequences, then validation sequences, then the remainder as one test
/// sequence.
pub fn build_mackey_dataset(series: &[f64], split: &MackeySplit, dt: f64, provenance: String) -> Result<SeriesDataset> {
    let l = split.sequence_len;
    let used = (split.train_sequences + split.val_sequences) * l;
    if l < 2 || split.train_sequences == 0 || split.val_sequences == 0 {
        return Err(invalid("mackey split needs sequences of at least 2 rows in train and val"));
    }
    if series.len() <= used + 1 {
        return Err(invalid(format!("series of {} samples is too short for {used} train/val rows plus a test block", series.len())));
    }
    let block = |i: usize| Tensor::column(series[i * l..(i + 1) * l].to_vec());
    let train = (0..split.train_sequences).map(block).collect();
    let val = (split.train_sequences..split.train_sequences + split.val_sequences).map(block).collect();
    let test = alloc::vec![Tensor::column(series[used..].to_vec())];
    SeriesDataset::from_raw(train, val, test, dt, provenance)
}

/// First 600 rows train, next 400 validation, remainder test.
pub fn darwin_dataset(values: &[f64], provenance: String) -> Result<SeriesDataset> {
    const TRAIN: usize = 600;
    const VAL: usize = 400;
    if values.len() < 1400 {
        return Err(invalid(format!("darwin series needs at least 1400 rows, got {}", values.len())));
    }
    SeriesDataset::from_raw(
        alloc::vec![Tensor::column(values[..TRAIN].to_vec())],
        alloc::vec![Tensor::column(values[TRAIN..TRAIN + VAL].to_vec())],
        alloc::vec![Tensor::column(values[TRAIN + VAL..].to_vec())],
        1.0,
        provenance,
    )
}

/// Traveling-wave frames split 200 / 200 / rest; values already lie in
/// `[0.1, 0.9]`, so the scaler is the identity.
pub fn wave_dataset(cfg: &WaveConfig) -> Result<SeriesDataset> {
    cfg.validate()?;
    let frames = generate_traveling_wave(cfg)?;
    let n = frames.rows();
    SeriesDataset::with_scaler(
        alloc::vec![frames.rows_range(0, 200)],
        alloc::vec![frames.rows_range(200, 400)],
        alloc::vec![frames.rows_range(400, n)],
        Scaler::identity(cfg.cells()),
        1.0,
        format!("wave {}x{} steps={} speed={}", cfg.height, cfg.width, cfg.steps, cfg.speed),
    )
}

/// A contiguous ground-truth segment of the test split: a warm-up that
/// conditions the state followed by the horizon to forecast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCase {
    /// Row of the first warm-up step in the source sequence.
    pub start: usize,
    pub warmup: Tensor,
    pub horizon: Tensor,
}

/// Draws `n` distinct start rows uniformly from the valid positions of
/// `series` and cuts the matching cases, in draw order.
pub fn sample_eval_cases<R: Rng + ?Sized>(
    series: &Tensor,
    n: usize,
    warmup: usize,
    horizon: usize,
    rng: &mut R,
) -> Result<Vec<EvalCase>> {
    if warmup == 0 {
        return Err(invalid("warm-up must be at least one step"));
    }
    let need = warmup + horizon;
    if series.rows() < need {
        return Err(Error::Invalid(format!("test split of {} rows is shorter than warm-up + horizon = {need}", series.rows())));
    }
    let positions = series.rows() - need + 1;
    if n > positions {
        return Err(invalid(format!("{n} cases requested but only {positions} start positions exist")));
    }
    Ok(rand::seq::index::sample(rng, positions, n)
        .into_iter()
        .map(|start| EvalCase {
            start,
            warmup: series.rows_range(start, start + warmup),
            horizon: series.rows_range(start + warmup, start + need),
        })
        .collect())
}
