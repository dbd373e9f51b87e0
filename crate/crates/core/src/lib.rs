//! Allocation-only (`no_std` + `alloc`) engine for training LSTM forecasters
//! with teacher-forced, autoregressive, scheduled-sampling and
//! scheduled-autoregressive backpropagation through time.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] and [`autodiff`]: dense `f64` tensors and a reverse-mode tape
//!   over a fixed set of ten primitives.
//! * [`lstm`]: the single-layer LSTM cell and its linear readout.
//! * [`regimes`]: unroll plans for each training mode, the loss, the
//!   probability schedule, Adam, the training loop and the unrolled-recurrence
//!   identity used by the gradient derivations.
//! * [`data`]: Mackey-Glass integration, noise, scaling, splitting, the
//!   traveling-wave field and evaluation-case sampling.
//! * [`metrics`]: closed-loop forecasting and RMSE / spectrum / SSIM metrics.
//!
//! Everything that touches the file system lives in the companion `sarnn`
//! crate.

#![no_std]
// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod data;
mod error;
pub mod lstm;
pub(crate) mod math;
pub mod metrics;
pub mod regimes;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
