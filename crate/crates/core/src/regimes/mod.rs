//! Training regimes: how an unrolled window decides, per step, between the
//! ground-truth input and the model's own previous prediction, and whether
//! gradient flows back through that prediction.
//!
//! | mode | fed-back inputs | gradient through feedback |
//! |------|-----------------|---------------------------|
//! | teacher forcing (TF) | none | n/a |
//! | autoregressive (AR) | all | yes |
//! | scheduled sampling (SS) | Bernoulli(p) | no (detached) |
//! | scheduled autoregressive (SA) | Bernoulli(p) | yes |

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

mod adam;
pub mod checks;
mod lemma;
mod schedule;
mod train;
mod unroll;

pub use adam::{adam_step, Adam, AdamConfig};
pub use lemma::{lemma_recurrence, lemma_unrolled};
pub use schedule::{default_schedule_k, schedule_p};
pub use train::{
    autoregressive_window_loss, train, train_with, validation_loss, window_bounds, Checkpoint, EpochStats, TrainConfig, TrainOutcome,
};
pub use unroll::{mse_loss, unroll, Unrolled};

/// Training mode without its probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModeKind {
    #[serde(rename = "tf")]
    TeacherForcing,
    #[serde(rename = "ar")]
    Autoregressive,
    #[serde(rename = "ss")]
    ScheduledSampling,
    #[serde(rename = "sa")]
    ScheduledAutoregressive,
}

impl ModeKind {
    pub const ALL: [ModeKind; 4] = [
        ModeKind::TeacherForcing,
        ModeKind::Autoregressive,
        ModeKind::ScheduledSampling,
        ModeKind::ScheduledAutoregressive,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            ModeKind::TeacherForcing => "tf",
            ModeKind::Autoregressive => "ar",
            ModeKind::ScheduledSampling => "ss",
            ModeKind::ScheduledAutoregressive => "sa",
        }
    }

    /// Whether the feedback probability follows the schedule.
    pub fn is_scheduled(self) -> bool {
        matches!(self, ModeKind::ScheduledSampling | ModeKind::ScheduledAutoregressive)
    }

    pub fn feedback(self) -> Feedback {
        match self {
            ModeKind::ScheduledSampling => Feedback::Detached,
            _ => Feedback::Attached,
        }
    }
}

impl fmt::Display for ModeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for ModeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModeKind::ALL
            .into_iter()
            .find(|m| m.short_name().eq_ignore_ascii_case(s))
            .ok_or_else(|| invalid(alloc::format!("unknown mode {s:?} (expected tf, ar, ss or sa)")))
    }
}

/// A mode together with the feedback probability it uses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UnrollMode {
    TeacherForcing,
    Autoregressive,
    ScheduledSampling(f64),
    ScheduledAutoregressive(f64),
}

impl UnrollMode {
    /// `p` is ignored for TF (always 0) and AR (always 1).
    pub fn new(kind: ModeKind, p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(invalid(alloc::format!("feedback probability {p} outside [0, 1]")));
        }
        Ok(match kind {
            ModeKind::TeacherForcing => UnrollMode::TeacherForcing,
            ModeKind::Autoregressive => UnrollMode::Autoregressive,
            ModeKind::ScheduledSampling => UnrollMode::ScheduledSampling(p),
            ModeKind::ScheduledAutoregressive => UnrollMode::ScheduledAutoregressive(p),
        })
    }

    pub fn kind(self) -> ModeKind {
        match self {
            UnrollMode::TeacherForcing => ModeKind::TeacherForcing,
            UnrollMode::Autoregressive => ModeKind::Autoregressive,
            UnrollMode::ScheduledSampling(_) => ModeKind::ScheduledSampling,
            UnrollMode::ScheduledAutoregressive(_) => ModeKind::ScheduledAutoregressive,
        }
    }

    pub fn probability(self) -> f64 {
        match self {
            UnrollMode::TeacherForcing => 0.0,
            UnrollMode::Autoregressive => 1.0,
            UnrollMode::ScheduledSampling(p) | UnrollMode::ScheduledAutoregressive(p) => p,
        }
    }
}

/// Whether a fed-back prediction carries gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Feedback {
    Attached,
    Detached,
}

/// Per-step feedback decisions for one window.
///
/// A window of `n` ground-truth rows `x_0..x_{n-1}` produces `n - 1`
/// predictions. The first input is always `x_0`; `mask[t - 1] == 1` replaces
/// input `x_t` (for `t = 1..n-2`) with the previous prediction, so the mask
/// has `n - 2` entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnrollPlan {
    pub mask: Vec<u8>,
    pub feedback: Feedback,
}

impl UnrollPlan {
    /// Number of mask entries for a window of `steps` rows.
    pub fn mask_len(steps: usize) -> usize {
        steps.saturating_sub(2)
    }

    pub fn teacher_forcing(steps: usize) -> Self {
        Self { mask: vec![0; Self::mask_len(steps)], feedback: Feedback::Attached }
    }

    pub fn autoregressive(steps: usize) -> Self {
        Self { mask: vec![1; Self::mask_len(steps)], feedback: Feedback::Attached }
    }

    pub fn new(mask: Vec<u8>, feedback: Feedback) -> Result<Self> {
        if mask.iter().any(|&k| k > 1) {
            return Err(invalid("mask entries must be 0 or 1"));
        }
        Ok(Self { mask, feedback })
    }

    /// Plan for a window of `steps` rows under `mode`, drawing the mask from `rng`
    /// for the scheduled modes.
    pub fn for_mode<R: Rng + ?Sized>(mode: UnrollMode, steps: usize, rng: &mut R) -> Self {
        let n = Self::mask_len(steps);
        match mode {
            UnrollMode::TeacherForcing => Self::teacher_forcing(steps),
            UnrollMode::Autoregressive => Self::autoregressive(steps),
            UnrollMode::ScheduledSampling(p) => Self { mask: sample_mask(p, n, rng), feedback: Feedback::Detached },
            UnrollMode::ScheduledAutoregressive(p) => {
                Self { mask: sample_mask(p, n, rng), feedback: Feedback::Attached }
            }
        }
    }

    pub fn is_teacher_forcing(&self) -> bool {
        self.mask.iter().all(|&k| k == 0)
    }

    pub fn is_autoregressive(&self) -> bool {
        self.feedback == Feedback::Attached && self.mask.iter().all(|&k| k == 1)
    }
}

/// `n` independent Bernoulli(`p`) draws.
pub fn sample_mask<R: Rng + ?Sized>(p: f64, n: usize, rng: &mut R) -> Vec<u8> {
    let p = p.clamp(0.0, 1.0);
    (0..n).map(|_| u8::from(rng.random_bool(p))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn degenerate_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_mask(0.0, 5, &mut rng), vec![0; 5]);
        assert_eq!(sample_mask(1.0, 5, &mut rng), vec![1; 5]);
    }

    #[test]
    fn half_probability_concentrates() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let m = sample_mask(0.5, 10_000, &mut rng);
        let mean = m.iter().map(|&k| k as f64).sum::<f64>() / 10_000.0;
        assert!((0.48..=0.52).contains(&mean), "{mean}");
    }

    #[test]
    fn mask_is_deterministic_per_seed() {
        let a = sample_mask(0.3, 64, &mut ChaCha8Rng::seed_from_u64(5));
        let b = sample_mask(0.3, 64, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }

    #[test]
    fn plans_by_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let tf = UnrollPlan::for_mode(UnrollMode::TeacherForcing, 6, &mut rng);
        assert!(tf.is_teacher_forcing());
        assert_eq!(tf.mask.len(), 4);
        let ar = UnrollPlan::for_mode(UnrollMode::Autoregressive, 6, &mut rng);
        assert!(ar.is_autoregressive());
        let ss = UnrollPlan::for_mode(UnrollMode::ScheduledSampling(1.0), 6, &mut rng);
        assert_eq!(ss.feedback, Feedback::Detached);
        assert!(!ss.is_autoregressive());
        assert!(UnrollMode::new(ModeKind::ScheduledAutoregressive, 1.5).is_err());
        assert!(UnrollPlan::new(vec![0, 2], Feedback::Attached).is_err());
    }

    #[test]
    fn mode_names_roundtrip() {
        for m in ModeKind::ALL {
            assert_eq!(m.short_name().parse::<ModeKind>().unwrap(), m);
        }
        assert!("bptt".parse::<ModeKind>().is_err());
    }
}
