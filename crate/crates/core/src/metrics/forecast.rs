use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{EvalCase, Scaler};
use crate::error::{Error, Result};
use crate::lstm::{Forecaster, RnnState};
use crate::tensor::Tensor;

/// Closed-loop forecast of one evaluation case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastResult {
    pub case_index: usize,
    pub warmup: usize,
    /// `steps × d_x`; shorter than `truth` when the forecast diverged.
    pub prediction: Tensor,
    /// `horizon × d_x`.
    pub truth: Tensor,
    pub diverged: bool,
}

impl ForecastResult {
    pub fn completed_steps(&self) -> usize {
        self.prediction.rows()
    }

    /// Both trajectories mapped back to raw units.
    pub fn unscaled(&self, scaler: &Scaler) -> Result<Self> {
        Ok(Self { prediction: scaler.inverse(&self.prediction)?, truth: scaler.inverse(&self.truth)?, ..self.clone() })
    }
}

/// Teacher-forces the warm-up from zero state, then feeds every prediction
/// back for `horizon` steps. The first forecast is the output produced
/// while consuming the last warm-up row.
pub fn autoregressive_forecast(model: &Forecaster, case: &EvalCase, case_index: usize) -> Result<ForecastResult> {
    let dx = model.input_dim();
    if case.warmup.rows() == 0 || case.warmup.row_len() != dx || case.horizon.row_len() != dx {
        return Err(Error::Shape {
            op: "autoregressive_forecast",
            shapes: vec![case.warmup.shape().to_vec(), case.horizon.shape().to_vec(), vec![dx]],
        });
    }
    let horizon = case.horizon.rows();
    let mut state = RnnState::zeros(model.hidden_dim());
    let mut out = Vec::new();
    for t in 0..case.warmup.rows() {
        let (o, next) = model.step(case.warmup.row(t), &state)?;
        state = next;
        out = o;
    }
    let mut data = Vec::with_capacity(horizon * dx);
    let mut diverged = false;
    for step in 0..horizon {
        if !out.iter().all(|v| v.is_finite()) {
            diverged = true;
            break;
        }
        data.extend_from_slice(&out);
        if step + 1 < horizon {
            let (o, next) = model.step(&out, &state)?;
            state = next;
            out = o;
        }
    }
    let steps = data.len() / dx;
    Ok(ForecastResult {
        case_index,
        warmup: case.warmup.rows(),
        prediction: Tensor::new(vec![steps, dx], data)?,
        truth: case.horizon.clone(),
        diverged,
    })
}

/// Repeats the last warm-up value over the horizon.
pub fn persistence_forecast(case: &EvalCase, case_index: usize) -> Result<ForecastResult> {
    let last = case.warmup.row(case.warmup.rows() - 1);
    let horizon = case.horizon.rows();
    let data = (0..horizon).flat_map(|_| last.iter().copied()).collect();
    Ok(ForecastResult {
        case_index,
        warmup: case.warmup.rows(),
        prediction: Tensor::new(vec![horizon, last.len()], data)?,
        truth: case.horizon.clone(),
        diverged: false,
    })
}
