use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{default_schedule_k, schedule_p, unroll, Adam, AdamConfig, ModeKind, UnrollMode, UnrollPlan};
use crate::autodiff::Tape;
use crate::data::SeriesDataset;
use crate::error::{invalid, Error, Result};
use crate::lstm::{Forecaster, RnnState, StateNodes};
use crate::tensor::Tensor;

/// Hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: ModeKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Truncation length: each window has `seq_len` inputs and `seq_len` targets.
    pub seq_len: usize,
    pub hidden_dim: usize,
    /// Schedule shape; `None` selects [`default_schedule_k`].
    pub schedule_k: Option<f64>,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: ModeKind::ScheduledAutoregressive,
            epochs: 2000,
            batch_size: 32,
            learning_rate: 5e-4,
            seq_len: 40,
            hidden_dim: 100,
            schedule_k: None,
            patience: 50,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seq_len < 2 {
            return Err(invalid(format!("seq_len must be at least 2, got {}", self.seq_len)));
        }
        if self.epochs == 0 {
            return Err(invalid("epochs must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 || self.hidden_dim == 0 {
            return Err(invalid("batch_size and hidden_dim must be at least 1"));
        }
        if let Some(k) = self.schedule_k {
            if !(k > 0.0 && k.is_finite()) {
                return Err(invalid(format!("schedule k must be positive, got {k}")));
            }
        }
        Ok(())
    }

    pub fn effective_k(&self) -> f64 {
        self.schedule_k.unwrap_or_else(|| default_schedule_k(self.epochs))
    }

    /// Feedback probability used at `epoch` (0-based).
    pub fn probability(&self, epoch: usize) -> f64 {
        match self.mode {
            ModeKind::TeacherForcing => 0.0,
            ModeKind::Autoregressive => 1.0,
            ModeKind::ScheduledSampling | ModeKind::ScheduledAutoregressive => schedule_p(epoch, self.effective_k()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 0-based.
    pub epoch: usize,
    pub p: f64,
    pub train_loss: f64,
    /// Autoregressive (p = 1) validation loss.
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model: Forecaster,
    pub epoch: usize,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Parameters after the last completed epoch.
    pub last: Forecaster,
    /// Parameters with the lowest validation loss.
    pub best: Checkpoint,
    pub history: Vec<EpochStats>,
    pub stopped_early: bool,
}

/// Row ranges `[start, end]` (inclusive) of the consecutive windows of a
/// sequence with `len` rows. Each window shares its last row with the first
/// row of the next, so every transition is predicted exactly once.
pub fn window_bounds(len: usize, seq_len: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    if len < 2 || seq_len == 0 {
        return out;
    }
    let mut start = 0;
    while start + 1 < len {
        let end = (start + seq_len).min(len - 1);
        out.push((start, end));
        start = end;
    }
    out
}

/// Tape-free autoregressive loss of one window (bit-identical to the loss of
/// [`unroll`] under an all-ones attached plan), plus the state after it.
pub fn autoregressive_window_loss(model: &Forecaster, window: &Tensor, state: &RnnState) -> Result<(f64, RnnState)> {
    let steps = window.rows();
    if steps < 2 || window.row_len() != model.input_dim() {
        return Err(Error::Shape { op: "autoregressive_window_loss", shapes: alloc::vec![window.shape().to_vec()] });
    }
    let mut state = state.clone();
    let mut x = window.row(0).to_vec();
    let mut sq = Vec::with_capacity((steps - 1) * window.row_len());
    for t in 0..steps - 1 {
        let (o, next) = model.step(&x, &state)?;
        for (a, b) in o.iter().zip(window.row(t + 1)) {
            let d = a + (-b);
            sq.push(d * d);
        }
        state = next;
        x = o;
    }
    let total: f64 = sq.iter().sum();
    Ok(((1.0 / sq.len() as f64) * total, state))
}

/// Mean autoregressive loss over all windows of `sequences`, carrying state
/// across the windows of each sequence.
pub fn validation_loss(model: &Forecaster, sequences: &[Tensor], seq_len: usize) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for seq in sequences {
        let mut state = RnnState::zeros(model.hidden_dim());
        for (s, e) in window_bounds(seq.rows(), seq_len) {
            let (l, next) = autoregressive_window_loss(model, &seq.rows_range(s, e + 1), &state)?;
            total += l;
            count += 1;
            state = next;
        }
    }
    if count == 0 {
        return Err(invalid("validation split has no windows"));
    }
    Ok(total / count as f64)
}

pub fn train(dataset: &SeriesDataset, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with(dataset, config, |_| {})
}

/// Trains a freshly initialised forecaster, calling `on_epoch` after every
/// epoch.
///
/// Training is stateful and truncated: each training sequence is cut into
/// consecutive windows of `seq_len` transitions, the LSTM state is carried
/// (detached) from one window to the next, and sequences start from zero
/// state. Sequences are grouped into batches processed in lockstep; every
/// window index of a batch yields one Adam step on the batch-mean gradient.
pub fn train_with(
    dataset: &SeriesDataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.train.is_empty() || dataset.val.is_empty() {
        return Err(invalid("training needs non-empty train and validation splits"));
    }
    let dx = dataset.input_dim;
    for s in dataset.train.iter().chain(&dataset.val) {
        if s.row_len() != dx || s.rows() < 2 {
            return Err(Error::Shape { op: "train", shapes: alloc::vec![s.shape().to_vec(), alloc::vec![dx]] });
        }
    }

    let mut model = Forecaster::init(config.seed, dx, config.hidden_dim)?;
    let mut adam = Adam::new(&model, AdamConfig::with_lr(config.learning_rate));
    let mut mask_rng = ChaCha8Rng::seed_from_u64(config.seed);
    mask_rng.set_stream(1);

    let diverged = |epoch: usize, detail: alloc::string::String| Error::Divergence { epoch, mode: config.mode, detail };

    let initial_val = validation_loss(&model, &dataset.val, config.seq_len)?;
    let mut best = Checkpoint { model: model.clone(), epoch: 0, val_loss: initial_val };
    let mut best_set = false;
    let mut since_best = 0usize;
    let mut history = Vec::with_capacity(config.epochs);
    let mut stopped_early = false;

    for epoch in 0..config.epochs {
        let p = config.probability(epoch);
        let mode = UnrollMode::new(config.mode, p)?;
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;

        for batch in dataset.train.chunks(config.batch_size) {
            let windows: Vec<Vec<(usize, usize)>> =
                batch.iter().map(|s| window_bounds(s.rows(), config.seq_len)).collect();
            let n_windows = windows.iter().map(Vec::len).max().unwrap_or(0);
            let mut states: Vec<RnnState> = batch.iter().map(|_| RnnState::zeros(config.hidden_dim)).collect();

            for w in 0..n_windows {
                let mut tape = Tape::new();
                let nodes = model.register(&mut tape);
                let mut active = Vec::new();
                let mut total = None;
                for (i, seq) in batch.iter().enumerate() {
                    let Some(&(s, e)) = windows[i].get(w) else { continue };
                    let window = seq.rows_range(s, e + 1);
                    let plan = UnrollPlan::for_mode(mode, window.rows(), &mut mask_rng);
                    let carry = StateNodes::constant(&mut tape, &states[i]);
                    let u = unroll(&mut tape, &nodes, &window, &plan, carry)?;
                    let l = tape.value(u.loss)?.data()[0];
                    if !l.is_finite() {
                        return Err(diverged(epoch, format!("training loss {l} at window {w}")));
                    }
                    loss_sum += l;
                    loss_count += 1;
                    active.push((i, u.final_state));
                    total = Some(match total {
                        None => u.loss,
                        Some(acc) => tape.add(acc, u.loss)?,
                    });
                }
                let Some(total) = total else { continue };
                let root = tape.scale(total, 1.0 / active.len() as f64)?;
                let mut grads = tape.backward(root)?;
                let [gw, gb, go] = nodes.params();
                let g = [grads.take(gw)?, grads.take(gb)?, grads.take(go)?];
                for (i, st) in active {
                    states[i] = st.values(&tape)?;
                }
                adam.step(&mut model, &g).map_err(|e| diverged(epoch, e.to_string()))?;
            }
        }
        if !model.all_finite() {
            return Err(diverged(epoch, "non-finite parameters".to_string()));
        }

        let train_loss = loss_sum / loss_count.max(1) as f64;
        let val_loss = validation_loss(&model, &dataset.val, config.seq_len)?;
        if !val_loss.is_finite() {
            return Err(diverged(epoch, format!("validation loss {val_loss}")));
        }
        let stats = EpochStats { epoch, p, train_loss, val_loss };
        on_epoch(&stats);
        history.push(stats);

        if !best_set || val_loss < best.val_loss {
            best = Checkpoint { model: model.clone(), epoch, val_loss };
            best_set = true;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                stopped_early = epoch + 1 < config.epochs;
                break;
            }
        }
    }

    Ok(TrainOutcome { last: model, best, history, stopped_early })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Scaler, SeriesDataset};
    use crate::regimes::UnrollPlan;

    #[test]
    fn windows_cover_every_transition_once() {
        assert_eq!(window_bounds(10, 4), alloc::vec![(0, 4), (4, 8), (8, 9)]);
        assert_eq!(window_bounds(9, 4), alloc::vec![(0, 4), (4, 8)]);
        assert!(window_bounds(1, 4).is_empty());
        for (len, l) in [(1120, 40), (600, 100), (200, 20), (37, 5)] {
            let w = window_bounds(len, l);
            assert_eq!(w.first().unwrap().0, 0);
            assert_eq!(w.last().unwrap().1, len - 1);
            let transitions: usize = w.iter().map(|(s, e)| e - s).sum();
            assert_eq!(transitions, len - 1);
        }
    }

    #[test]
    fn tape_free_loss_is_bit_identical() {
        let model = Forecaster::init(9, 2, 5).unwrap();
        let data = (0..14).map(|i| 0.3 + 0.2 * libm::sin(i as f64)).collect();
        let window = Tensor::matrix(7, 2, data).unwrap();
        let state = RnnState { h: alloc::vec![0.1; 5], c: alloc::vec![-0.2; 5] };
        let (plain, plain_state) = autoregressive_window_loss(&model, &window, &state).unwrap();
        let mut tape = Tape::new();
        let nodes = model.register(&mut tape);
        let carry = StateNodes::constant(&mut tape, &state);
        let u = unroll(&mut tape, &nodes, &window, &UnrollPlan::autoregressive(7), carry).unwrap();
        assert_eq!(tape.value(u.loss).unwrap().data()[0].to_bits(), plain.to_bits());
        assert_eq!(u.final_state.values(&tape).unwrap(), plain_state);
    }

    fn constant_dataset(value: f64, len: usize) -> SeriesDataset {
        let seq = Tensor::filled(&[len, 1], value);
        SeriesDataset {
            train: alloc::vec![seq.clone(), seq.clone()],
            val: alloc::vec![seq.clone()],
            test: alloc::vec![seq],
            scaler: Scaler::identity(1),
            dt: 1.0,
            input_dim: 1,
            provenance: "constant".into(),
        }
    }

    #[test]
    fn teacher_forcing_learns_a_constant_series() {
        let ds = constant_dataset(0.6, 41);
        let cfg = TrainConfig {
            mode: ModeKind::TeacherForcing,
            epochs: 50,
            batch_size: 2,
            learning_rate: 0.03,
            seq_len: 5,
            hidden_dim: 4,
            schedule_k: None,
            patience: 100,
            seed: 3,
        };
        let out = train(&ds, &cfg).unwrap();
        let first = out.history[0].train_loss;
        let last = out.history.last().unwrap().train_loss;
        assert!(last < 1e-4 && last < first * 1e-2, "{first} -> {last}");
        assert!(out.history.iter().all(|s| s.p == 0.0));
        assert!(out.best.val_loss <= out.history.last().unwrap().val_loss);
    }

    #[test]
    fn scheduled_history_is_monotone_and_deterministic() {
        let ds = constant_dataset(0.4, 21);
        let cfg = TrainConfig {
            mode: ModeKind::ScheduledAutoregressive,
            epochs: 120,
            batch_size: 2,
            learning_rate: 0.005,
            seq_len: 5,
            hidden_dim: 3,
            schedule_k: None,
            patience: 1000,
            seed: 1,
        };
        let a = train(&ds, &cfg).unwrap();
        assert_eq!(a.history.len(), 120);
        assert!(a.history.windows(2).all(|w| w[1].p >= w[0].p));
        assert!(a.history.last().unwrap().p >= 0.95);
        assert!(a.history[0].p <= 0.05);
        let b = train(&ds, &cfg).unwrap();
        assert_eq!(a, b);
        let min_val = a.history.iter().map(|s| s.val_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(a.best.val_loss, min_val);
    }

    #[test]
    fn early_stopping_respects_patience() {
        let ds = constant_dataset(0.5, 21);
        let cfg = TrainConfig {
            mode: ModeKind::TeacherForcing,
            epochs: 500,
            batch_size: 1,
            learning_rate: 0.05,
            seq_len: 5,
            hidden_dim: 2,
            schedule_k: None,
            patience: 3,
            seed: 2,
        };
        let out = train(&ds, &cfg).unwrap();
        if out.stopped_early {
            let n = out.history.len();
            assert_eq!(out.best.epoch + 3, n - 1);
        }
    }

    #[test]
    fn rejects_bad_config() {
        let ds = constant_dataset(0.5, 21);
        let cfg = TrainConfig { seq_len: 1, ..TrainConfig::default() };
        assert!(train(&ds, &cfg).is_err());
        let cfg = TrainConfig { learning_rate: 0.0, ..TrainConfig::default() };
        assert!(train(&ds, &cfg).is_err());
    }

    #[test]
    fn divergence_names_epoch_and_mode() {
        let ds = constant_dataset(0.5, 21);
        let cfg = TrainConfig {
            mode: ModeKind::Autoregressive,
            epochs: 5,
            batch_size: 1,
            learning_rate: f64::MAX,
            seq_len: 5,
            hidden_dim: 2,
            schedule_k: None,
            patience: 10,
            seed: 2,
        };
        match train(&ds, &cfg) {
            Err(Error::Divergence { mode, .. }) => assert_eq!(mode, ModeKind::Autoregressive),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
