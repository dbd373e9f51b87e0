use alloc::vec;
use alloc::vec::Vec;

use super::{Feedback, UnrollPlan};
use crate::autodiff::{NodeRef, Tape};
use crate::error::{Error, Result};
use crate::lstm::{lstm_step, readout, ForecasterNodes, StateNodes};
use crate::tensor::Tensor;

/// Result of unrolling one window on a tape.
#[derive(Debug, Clone)]
pub struct Unrolled {
    /// Predictions `o_0..o_{n-2}`, each `d_x × 1`; `o_t` targets row `t + 1`.
    pub outputs: Vec<NodeRef>,
    pub loss: NodeRef,
    pub final_state: StateNodes,
}

/// Unrolls the forecaster over `sequence` (`n × d_x`, `n ≥ 2`) following `plan`.
///
/// The carried-in state is detached, so gradients stop at the window
/// boundary. Step `t` consumes `x_t` when `t == 0` or `mask[t-1] == 0`, and
/// otherwise the previous prediction (detached when the plan says so).
pub fn unroll(
    tape: &mut Tape,
    model: &ForecasterNodes,
    sequence: &Tensor,
    plan: &UnrollPlan,
    carry: StateNodes,
) -> Result<Unrolled> {
    let steps = sequence.rows();
    let dx = model.lstm.input_dim;
    if sequence.shape().len() != 2 || sequence.row_len() != dx {
        return Err(Error::Shape { op: "unroll", shapes: vec![sequence.shape().to_vec(), vec![dx]] });
    }
    if steps < 2 {
        return Err(Error::Invalid(alloc::format!("a window needs at least 2 steps, got {steps}")));
    }
    let expected = UnrollPlan::mask_len(steps);
    if plan.mask.len() != expected {
        return Err(Error::MaskLength { mask: plan.mask.len(), steps, expected });
    }

    let mut state = carry.detach();
    let mut outputs: Vec<NodeRef> = Vec::with_capacity(steps - 1);
    for t in 0..steps - 1 {
        let fed_back = t > 0 && plan.mask[t - 1] == 1;
        let input = if fed_back {
            let prev = outputs[t - 1];
            match plan.feedback {
                Feedback::Attached => prev,
                Feedback::Detached => prev.detach(),
            }
        } else {
            tape.constant(Tensor::column(sequence.row(t).to_vec()))
        };
        state = lstm_step(tape, &model.lstm, input, state)?;
        outputs.push(readout(tape, model.readout, state.h)?);
    }
    let targets = sequence.rows_range(1, steps);
    let loss = mse_loss(tape, &outputs, &targets)?;
    Ok(Unrolled { outputs, loss, final_state: state })
}

/// Mean over steps and components of the squared deviation.
///
/// `targets` holds one row per output; each output must be a `d_x × 1` column.
pub fn mse_loss(tape: &mut Tape, outputs: &[NodeRef], targets: &Tensor) -> Result<NodeRef> {
    let dx = targets.row_len();
    let shape_err = |tape: &Tape| Error::Shape {
        op: "mse_loss",
        shapes: outputs
            .iter()
            .map(|o| tape.value(*o).map(|v| v.shape().to_vec()).unwrap_or_default())
            .chain(core::iter::once(targets.shape().to_vec()))
            .collect(),
    };
    if outputs.is_empty() || outputs.len() != targets.rows() {
        return Err(shape_err(tape));
    }
    for o in outputs {
        if tape.value(*o)?.shape() != [dx, 1] {
            return Err(shape_err(tape));
        }
    }
    let stacked = if outputs.len() == 1 { outputs[0] } else { tape.concat(outputs)? };
    let neg = tape.constant(Tensor::column(targets.data().iter().map(|v| -v).collect()));
    let diff = tape.add(stacked, neg)?;
    let sq = tape.square(diff)?;
    let total = tape.sum(sq)?;
    tape.scale(total, 1.0 / targets.len() as f64)
}
