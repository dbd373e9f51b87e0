//! Gradient and identity checks for the four training modes.
//!
//! Each check builds small random problems, differentiates them on the tape
//! and compares against an independent reference: central differences, a
//! structurally different graph for the same quantity, or the closed form of
//! the unrolled recurrence.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{lemma_recurrence, lemma_unrolled, sample_mask, unroll, Feedback, ModeKind, UnrollPlan};
use crate::autodiff::checks::{primitive_checks, CheckResult, FD_EPS, FD_TOLERANCE};
use crate::autodiff::{finite_difference_grad, relative_error, OpKind, Tape};
use crate::error::Result;
use crate::lstm::{Forecaster, LstmParams, ReadoutParams, RnnState, StateNodes};
use crate::math;
use crate::tensor::Tensor;

/// Elementwise tolerance of the mode-limit identities.
pub const IDENTITY_TOLERANCE: f64 = 1e-12;
/// Minimum relative norm difference between SS and SA readout gradients.
pub const SEPARATION_THRESHOLD: f64 = 1e-3;
/// Largest tolerated fraction of draws where SS and SA do not separate.
pub const SEPARATION_MISS_RATE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradCheckConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// Predictions per window; windows have `seq_len + 1` rows.
    pub seq_len: usize,
    /// Random draws for the identity and separation checks.
    pub trials: usize,
    /// Random draws per primitive.
    pub primitive_trials: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { input_dim: 2, hidden_dim: 6, seq_len: 8, trials: 20, primitive_trials: 100, seed: 1 }
    }
}

/// A random problem instance: parameters, a window and a carried-in state.
#[derive(Debug, Clone)]
pub struct Problem {
    pub model: Forecaster,
    pub window: Tensor,
    pub carry: RnnState,
}

impl Problem {
    /// Parameters (biases included) uniform in `[-0.5, 0.5]`, data in
    /// `[0, 1]`, carried state in `[-0.5, 0.5]`.
    pub fn random(rng: &mut ChaCha8Rng, input_dim: usize, hidden_dim: usize, seq_len: usize) -> Result<Self> {
        let mut uniform = |n: usize, lo: f64, hi: f64| -> Vec<f64> { (0..n).map(|_| rng.random_range(lo..hi)).collect() };
        let cols = input_dim + hidden_dim;
        let lstm = LstmParams::new(
            Tensor::matrix(4 * hidden_dim, cols, uniform(4 * hidden_dim * cols, -0.5, 0.5))?,
            Tensor::column(uniform(4 * hidden_dim, -0.5, 0.5)),
        )?;
        let readout = ReadoutParams::new(Tensor::matrix(input_dim, hidden_dim, uniform(input_dim * hidden_dim, -0.5, 0.5))?)?;
        let window = Tensor::matrix(seq_len + 1, input_dim, uniform((seq_len + 1) * input_dim, 0.0, 1.0))?;
        let carry = RnnState { h: uniform(hidden_dim, -0.5, 0.5), c: uniform(hidden_dim, -0.5, 0.5) };
        Ok(Self { model: Forecaster::new(lstm, readout)?, window, carry })
    }
}

/// Output of one tape evaluation of a window.
#[derive(Debug, Clone)]
pub struct TapeEval {
    pub loss: f64,
    pub outputs: Vec<Vec<f64>>,
    /// Gradients of the loss with respect to LSTM weights, bias and readout.
    pub grads: [Tensor; 3],
}

pub fn tape_eval(problem: &Problem, plan: &UnrollPlan, fault: Option<OpKind>) -> Result<TapeEval> {
    let mut tape = Tape::new();
    tape.inject_adjoint_fault(fault);
    let nodes = problem.model.register(&mut tape);
    let carry = StateNodes::constant(&mut tape, &problem.carry);
    let u = unroll(&mut tape, &nodes, &problem.window, plan, carry)?;
    let mut grads = tape.backward(u.loss)?;
    let [w, b, o] = nodes.params();
    let outputs = u.outputs.iter().map(|n| tape.value(*n).map(|v| v.data().to_vec())).collect::<Result<_>>()?;
    Ok(TapeEval {
        loss: tape.value(u.loss)?.data()[0],
        outputs,
        grads: [grads.take(w)?, grads.take(b)?, grads.take(o)?],
    })
}

/// Tape-free window loss. Fed-back inputs come from `frozen` when given,
/// otherwise from the live outputs.
fn plain_loss(model: &Forecaster, window: &Tensor, mask: &[u8], carry: &RnnState, frozen: Option<&[Vec<f64>]>) -> Result<f64> {
    let steps = window.rows();
    let mut state = carry.clone();
    let mut outputs: Vec<Vec<f64>> = Vec::with_capacity(steps - 1);
    let mut total = 0.0;
    for t in 0..steps - 1 {
        let x: &[f64] = if t > 0 && mask[t - 1] == 1 {
            match frozen {
                Some(f) => &f[t - 1],
                None => &outputs[t - 1],
            }
        } else {
            window.row(t)
        };
        let (o, next) = model.step(x, &state)?;
        total += o.iter().zip(window.row(t + 1)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        outputs.push(o);
        state = next;
    }
    Ok(total / ((steps - 1) * window.row_len()) as f64)
}

/// Worst relative error between tape gradients and central differences for
/// one problem and plan. Detached feedback is differentiated with the
/// fed-back values frozen at the unperturbed parameters.
pub fn finite_difference_error(problem: &Problem, plan: &UnrollPlan, fault: Option<OpKind>) -> Result<f64> {
    let eval = tape_eval(problem, plan, fault)?;
    let frozen = match plan.feedback {
        Feedback::Detached => Some(eval.outputs.clone()),
        Feedback::Attached => None,
    };
    let mut worst: f64 = 0.0;
    for k in 0..3 {
        let numeric = finite_difference_grad(
            |probe| {
                let mut m = problem.model.clone();
                *m.tensors_mut()[k] = probe.clone();
                plain_loss(&m, &problem.window, &plan.mask, &problem.carry, frozen.as_deref()).unwrap_or(f64::NAN)
            },
            problem.model.tensors()[k],
            FD_EPS,
        )?;
        let e = relative_error(&eval.grads[k], &numeric);
        if e > worst || e.is_nan() {
            worst = e;
        }
    }
    Ok(worst)
}

fn plan_for(kind: ModeKind, steps: usize, rng: &mut ChaCha8Rng) -> UnrollPlan {
    let n = UnrollPlan::mask_len(steps);
    match kind {
        ModeKind::TeacherForcing => UnrollPlan::teacher_forcing(steps),
        ModeKind::Autoregressive => UnrollPlan::autoregressive(steps),
        ModeKind::ScheduledSampling => UnrollPlan { mask: random_mask(n, rng), feedback: Feedback::Detached },
        ModeKind::ScheduledAutoregressive => UnrollPlan { mask: random_mask(n, rng), feedback: Feedback::Attached },
    }
}

/// Bernoulli(1/2) mask with at least one fed-back step and one
/// ground-truth step whenever the length allows.
fn random_mask(n: usize, rng: &mut ChaCha8Rng) -> Vec<u8> {
    loop {
        let m = sample_mask(0.5, n, rng);
        if n < 2 || (m.contains(&0) && m.contains(&1)) {
            return m;
        }
    }
}

/// Finite-difference check of every mode (random mask for SS and SA).
pub fn mode_gradient_checks(cfg: &GradCheckConfig, fault: Option<OpKind>) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::new();
    for kind in ModeKind::ALL {
        let problem = Problem::random(&mut rng, cfg.input_dim, cfg.hidden_dim, cfg.seq_len)?;
        let plan = plan_for(kind, cfg.seq_len + 1, &mut rng);
        let e = finite_difference_error(&problem, &plan, fault)?;
        out.push(CheckResult::new(alloc::format!("grad_{}", kind.short_name()), e, FD_TOLERANCE));
    }
    Ok(out)
}

fn max_abs_diff(a: &[Tensor; 3], b: &[Tensor; 3]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.data().iter().zip(y.data()).map(|(p, q)| math::abs(p - q)))
        .fold(0.0, |m, d| if d > m || d.is_nan() { d } else { m })
}

/// Largest elementwise gradient difference between SA with an all-zero mask
/// and TF, and between SA with an all-one mask and AR, over `cfg.trials`
/// random problems. Each side is built on its own tape.
pub fn mode_limit_errors(cfg: &GradCheckConfig, fault: Option<OpKind>) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5a5a);
    let steps = cfg.seq_len + 1;
    let n = UnrollPlan::mask_len(steps);
    let (mut tf_err, mut ar_err) = (0.0f64, 0.0f64);
    for _ in 0..cfg.trials {
        let problem = Problem::random(&mut rng, cfg.input_dim, cfg.hidden_dim, cfg.seq_len)?;
        let sa0 = tape_eval(&problem, &UnrollPlan::new(vec![0; n], Feedback::Attached)?, fault)?;
        let tf = tape_eval(&problem, &UnrollPlan::teacher_forcing(steps), fault)?;
        let sa1 = tape_eval(&problem, &UnrollPlan::new(vec![1; n], Feedback::Attached)?, fault)?;
        let ar = tape_eval(&problem, &UnrollPlan::autoregressive(steps), fault)?;
        tf_err = tf_err.max(max_abs_diff(&sa0.grads, &tf.grads));
        ar_err = ar_err.max(max_abs_diff(&sa1.grads, &ar.grads));
    }
    Ok((tf_err, ar_err))
}

/// SS against SA with the same all-ones mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Separation {
    /// Largest forward-output difference across draws.
    pub forward_diff: f64,
    /// Relative norm difference of the readout gradients, per draw.
    pub readout_grad_rel_diff: Vec<f64>,
}

impl Separation {
    pub fn separated(&self) -> usize {
        self.readout_grad_rel_diff.iter().filter(|&&d| d > SEPARATION_THRESHOLD).count()
    }
}

pub fn ss_sa_separation(cfg: &GradCheckConfig, fault: Option<OpKind>) -> Result<Separation> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xa5a5);
    let n = UnrollPlan::mask_len(cfg.seq_len + 1);
    let mut forward_diff = 0.0f64;
    let mut rel = Vec::with_capacity(cfg.trials);
    for _ in 0..cfg.trials {
        let problem = Problem::random(&mut rng, cfg.input_dim, cfg.hidden_dim, cfg.seq_len)?;
        let ss = tape_eval(&problem, &UnrollPlan::new(vec![1; n], Feedback::Detached)?, fault)?;
        let sa = tape_eval(&problem, &UnrollPlan::new(vec![1; n], Feedback::Attached)?, fault)?;
        for (a, b) in ss.outputs.iter().flatten().zip(sa.outputs.iter().flatten()) {
            forward_diff = forward_diff.max(math::abs(a - b));
        }
        let diff: Vec<f64> = ss.grads[2].data().iter().zip(sa.grads[2].data()).map(|(a, b)| a - b).collect();
        let num = math::sqrt(diff.iter().map(|d| d * d).sum());
        rel.push(num / sa.grads[2].norm().max(f64::MIN_POSITIVE));
    }
    Ok(Separation { forward_diff, readout_grad_rel_diff: rel })
}

/// SS gradients against SA gradients of a graph whose fed-back outputs are
/// explicitly detached, built here step by step without the unroll helper.
pub fn ss_constructive_error(cfg: &GradCheckConfig) -> Result<f64> {
    use crate::lstm::{lstm_step, readout};
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x3c3c);
    let mut worst = 0.0f64;
    for _ in 0..cfg.trials {
        let problem = Problem::random(&mut rng, cfg.input_dim, cfg.hidden_dim, cfg.seq_len)?;
        let steps = cfg.seq_len + 1;
        let mask = random_mask(UnrollPlan::mask_len(steps), &mut rng);
        let ss = tape_eval(&problem, &UnrollPlan::new(mask.clone(), Feedback::Detached)?, None)?;

        let mut tape = Tape::new();
        let nodes = problem.model.register(&mut tape);
        let mut state = StateNodes::constant(&mut tape, &problem.carry).detach();
        let mut outs = Vec::new();
        for t in 0..steps - 1 {
            let x = if t > 0 && mask[t - 1] == 1 {
                let prev: crate::autodiff::NodeRef = outs[t - 1];
                prev.detach()
            } else {
                tape.constant(Tensor::column(problem.window.row(t).to_vec()))
            };
            state = lstm_step(&mut tape, &nodes.lstm, x, state)?;
            outs.push(readout(&mut tape, nodes.readout, state.h)?);
        }
        let loss = super::mse_loss(&mut tape, &outs, &problem.window.rows_range(1, steps))?;
        let g = tape.backward(loss)?;
        let [w, b, o] = nodes.params();
        let reference = [g.wrt(w)?.clone(), g.wrt(b)?.clone(), g.wrt(o)?.clone()];
        worst = worst.max(max_abs_diff(&ss.grads, &reference));
    }
    Ok(worst)
}

/// Gradient flowing out of a window into the carried-in state and into a
/// copy of the parameters used only by the preceding window.
pub fn truncation_leak(cfg: &GradCheckConfig) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7e7e);
    let problem = Problem::random(&mut rng, cfg.input_dim, cfg.hidden_dim, cfg.seq_len)?;
    let steps = cfg.seq_len + 1;
    let mut tape = Tape::new();
    let h0 = tape.param(Tensor::column(problem.carry.h.clone()));
    let c0 = tape.param(Tensor::column(problem.carry.c.clone()));
    let earlier = problem.model.register(&mut tape);
    let first = unroll(&mut tape, &earlier, &problem.window, &UnrollPlan::autoregressive(steps), StateNodes { h: h0, c: c0 })?;
    let current = problem.model.register(&mut tape);
    let second = unroll(&mut tape, &current, &problem.window, &UnrollPlan::autoregressive(steps), first.final_state)?;
    let g = tape.backward(second.loss)?;
    let mut leak = 0.0f64;
    for node in [h0, c0].into_iter().chain(earlier.params()) {
        leak = leak.max(g.wrt(node)?.max_abs());
    }
    Ok(leak)
}

/// Closed form against recurrence of the unrolled linear recurrence over
/// `trials` random sequences of length `1..=20`.
pub fn lemma_error(seed: u64, trials: usize) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let t = rng.random_range(1..=20);
        let b: Vec<f64> = (0..t).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c: Vec<f64> = (0..t).map(|_| rng.random_range(-1.0..1.0)).collect();
        worst = worst.max(math::abs(lemma_unrolled(&b, &c)? - lemma_recurrence(&b, &c)?));
    }
    Ok(worst)
}

/// Every check, in a stable order. `fault` corrupts the adjoint of one
/// primitive on every tape the checks build.
pub fn run_all(cfg: &GradCheckConfig, fault: Option<OpKind>) -> Result<Vec<CheckResult>> {
    let mut out = primitive_checks(cfg.seed, cfg.primitive_trials, fault)?;
    out.extend(mode_gradient_checks(cfg, fault)?);
    let (tf, ar) = mode_limit_errors(cfg, fault)?;
    out.push(CheckResult::new("identity_sa0_tf", tf, IDENTITY_TOLERANCE));
    out.push(CheckResult::new("identity_sa1_ar", ar, IDENTITY_TOLERANCE));
    let sep = ss_sa_separation(cfg, fault)?;
    out.push(CheckResult::new("ss_sa_forward", sep.forward_diff, IDENTITY_TOLERANCE));
    let missed = (sep.readout_grad_rel_diff.len() - sep.separated()) as f64 / sep.readout_grad_rel_diff.len().max(1) as f64;
    out.push(CheckResult::new("ss_sa_separation", missed, SEPARATION_MISS_RATE));
    out.push(CheckResult::new("ss_detached_graph", ss_constructive_error(cfg)?, IDENTITY_TOLERANCE));
    out.push(CheckResult::new("truncation", truncation_leak(cfg)?, f64::MIN_POSITIVE));
    out.push(CheckResult::new("lemma", lemma_error(cfg.seed, 100)?, IDENTITY_TOLERANCE));
    Ok(out)
}

/// Names of failed checks.
pub fn failures(results: &[CheckResult]) -> Vec<String> {
    results.iter().filter(|r| !r.passed).map(|r| r.name.clone()).collect()
}
