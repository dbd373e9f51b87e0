//! Single-layer LSTM cell with a bias-free linear readout.
//!
//! Layout conventions (fixed so that seeds reproduce across implementations):
//!
//! * the cell input is the column `[x; h]` (input first, then hidden state);
//! * the four gates are stacked row-wise in the order input, forget,
//!   cell-candidate, output, so `weights` is `4·d_h × (d_x + d_h)` and
//!   `bias` is `4·d_h × 1`;
//! * the readout is `o = w_o · h` with `w_o` of shape `d_x × d_h`.
//!
//! Two evaluation paths exist: [`lstm_step`] / [`readout`] record on a
//! [`Tape`], while [`LstmParams::step`] / [`ReadoutParams::apply`] evaluate
//! plain values for inference. Both perform the same floating-point
//! operations in the same order and agree bit for bit.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{matmul_into, NodeRef, Tape};
use crate::error::{invalid, Error, Result};
use crate::math;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Input = 0,
    Forget = 1,
    Candidate = 2,
    Output = 3,
}

/// Recurrent weights: the four gate matrices and biases, stacked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub weights: Tensor,
    pub bias: Tensor,
}

/// Hidden-to-output map `w_o` (`d_x × d_h`, no bias).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadoutParams {
    pub weights: Tensor,
}

/// Hidden and cell state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnnState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl RnnState {
    pub fn zeros(hidden: usize) -> Self {
        Self { h: vec![0.0; hidden], c: vec![0.0; hidden] }
    }
}

impl LstmParams {
    pub fn new(weights: Tensor, bias: Tensor) -> Result<Self> {
        let ws = weights.shape();
        if ws.len() != 2 || !ws[0].is_multiple_of(4) || ws[0] == 0 || ws[1] <= ws[0] / 4 || bias.shape() != [ws[0], 1] {
            return Err(Error::Shape { op: "lstm", shapes: vec![ws.to_vec(), bias.shape().to_vec()] });
        }
        Ok(Self { weights, bias })
    }

    pub fn hidden_dim(&self) -> usize {
        self.weights.shape()[0] / 4
    }

    pub fn input_dim(&self) -> usize {
        self.weights.shape()[1] - self.hidden_dim()
    }

    /// Row block of `weights` belonging to `gate`.
    pub fn gate_weights(&self, gate: Gate) -> &[f64] {
        let h = self.hidden_dim();
        let cols = self.weights.shape()[1];
        let g = gate as usize;
        &self.weights.data()[g * h * cols..(g + 1) * h * cols]
    }

    pub fn gate_bias(&self, gate: Gate) -> &[f64] {
        let h = self.hidden_dim();
        &self.bias.data()[gate as usize * h..(gate as usize + 1) * h]
    }

    /// Registers the weights and bias as trainable leaves.
    pub fn register(&self, tape: &mut Tape) -> LstmNodes {
        LstmNodes {
            weights: tape.param(self.weights.clone()),
            bias: tape.param(self.bias.clone()),
            input_dim: self.input_dim(),
            hidden_dim: self.hidden_dim(),
        }
    }

    /// Tape-free step, bit-identical to [`lstm_step`].
    pub fn step(&self, x: &[f64], state: &RnnState) -> Result<RnnState> {
        let (dx, dh) = (self.input_dim(), self.hidden_dim());
        if x.len() != dx || state.h.len() != dh || state.c.len() != dh {
            return Err(Error::Shape {
                op: "lstm_step",
                shapes: vec![vec![x.len()], vec![state.h.len()], vec![state.c.len()]],
            });
        }
        let mut z = Vec::with_capacity(dx + dh);
        z.extend_from_slice(x);
        z.extend_from_slice(&state.h);
        let mut pre = vec![0.0; 4 * dh];
        matmul_into(self.weights.data(), &z, &mut pre, 4 * dh, dx + dh, 1);
        for (p, b) in pre.iter_mut().zip(self.bias.data()) {
            *p += b;
        }
        let mut h = vec![0.0; dh];
        let mut c = vec![0.0; dh];
        for j in 0..dh {
            let i_g = math::sigmoid(pre[j]);
            let f_g = math::sigmoid(pre[dh + j]);
            let cand = math::tanh(pre[2 * dh + j]);
            let o_g = math::sigmoid(pre[3 * dh + j]);
            c[j] = f_g * state.c[j] + i_g * cand;
            h[j] = o_g * math::tanh(c[j]);
        }
        Ok(RnnState { h, c })
    }
}

impl ReadoutParams {
    pub fn new(weights: Tensor) -> Result<Self> {
        if weights.shape().len() != 2 || weights.shape().contains(&0) {
            return Err(Error::Shape { op: "readout", shapes: vec![weights.shape().to_vec()] });
        }
        Ok(Self { weights })
    }

    pub fn output_dim(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn hidden_dim(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn register(&self, tape: &mut Tape) -> NodeRef {
        tape.param(self.weights.clone())
    }

    /// `w_o · h` without a tape.
    pub fn apply(&self, h: &[f64]) -> Result<Vec<f64>> {
        if h.len() != self.hidden_dim() {
            return Err(Error::Shape { op: "readout", shapes: vec![self.weights.shape().to_vec(), vec![h.len()]] });
        }
        let mut out = vec![0.0; self.output_dim()];
        matmul_into(self.weights.data(), h, &mut out, self.output_dim(), self.hidden_dim(), 1);
        Ok(out)
    }
}

/// LSTM parameters registered on a tape.
#[derive(Debug, Clone, Copy)]
pub struct LstmNodes {
    pub weights: NodeRef,
    pub bias: NodeRef,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

/// Hidden and cell state as tape nodes.
#[derive(Debug, Clone, Copy)]
pub struct StateNodes {
    pub h: NodeRef,
    pub c: NodeRef,
}

impl StateNodes {
    pub fn constant(tape: &mut Tape, state: &RnnState) -> Self {
        Self {
            h: tape.constant(Tensor::column(state.h.clone())),
            c: tape.constant(Tensor::column(state.c.clone())),
        }
    }

    pub fn detach(self) -> Self {
        Self { h: self.h.detach(), c: self.c.detach() }
    }

    pub fn values(&self, tape: &Tape) -> Result<RnnState> {
        Ok(RnnState { h: tape.value(self.h)?.data().to_vec(), c: tape.value(self.c)?.data().to_vec() })
    }
}

/// One LSTM step on the tape: gates `σ(W·[x; h] + b)`,
/// `c' = f ⊙ c + i ⊙ tanh(ĉ)`, `h' = o ⊙ tanh(c')`.
pub fn lstm_step(tape: &mut Tape, params: &LstmNodes, x: NodeRef, state: StateNodes) -> Result<StateNodes> {
    let dh = params.hidden_dim;
    let xs = tape.value(x)?.shape().to_vec();
    let hs = tape.value(state.h)?.shape().to_vec();
    let cs = tape.value(state.c)?.shape().to_vec();
    if xs != [params.input_dim, 1] || hs != [dh, 1] || cs != [dh, 1] {
        return Err(Error::Shape { op: "lstm_step", shapes: vec![xs, hs, cs] });
    }
    let z = tape.concat(&[x, state.h])?;
    let wz = tape.matmul(params.weights, z)?;
    let pre = tape.add(wz, params.bias)?;
    let i_pre = tape.slice(pre, 0, dh)?;
    let f_pre = tape.slice(pre, dh, 2 * dh)?;
    let g_pre = tape.slice(pre, 2 * dh, 3 * dh)?;
    let o_pre = tape.slice(pre, 3 * dh, 4 * dh)?;
    let i_g = tape.sigmoid(i_pre)?;
    let f_g = tape.sigmoid(f_pre)?;
    let cand = tape.tanh(g_pre)?;
    let o_g = tape.sigmoid(o_pre)?;
    let keep = tape.hadamard(f_g, state.c)?;
    let write = tape.hadamard(i_g, cand)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c)?;
    let h = tape.hadamard(o_g, tc)?;
    Ok(StateNodes { h, c })
}

/// `o = w_o · h` on the tape.
pub fn readout(tape: &mut Tape, weights: NodeRef, h: NodeRef) -> Result<NodeRef> {
    tape.matmul(weights, h)
}

/// Draws LSTM weights and readout uniformly in `[-1/√fan_in, 1/√fan_in]`
/// (fan-in `d_x + d_h` and `d_h` respectively); biases are zero.
pub fn init_params(seed: u64, input_dim: usize, hidden_dim: usize) -> Result<(LstmParams, ReadoutParams)> {
    if input_dim == 0 || hidden_dim == 0 {
        return Err(invalid("model dimensions must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cols = input_dim + hidden_dim;
    let bound = 1.0 / math::sqrt(cols as f64);
    let w: Vec<f64> = (0..4 * hidden_dim * cols).map(|_| rng.random_range(-bound..=bound)).collect();
    let bound_o = 1.0 / math::sqrt(hidden_dim as f64);
    let wo: Vec<f64> = (0..input_dim * hidden_dim).map(|_| rng.random_range(-bound_o..=bound_o)).collect();
    Ok((
        LstmParams::new(Tensor::matrix(4 * hidden_dim, cols, w)?, Tensor::zeros(&[4 * hidden_dim, 1]))?,
        ReadoutParams::new(Tensor::matrix(input_dim, hidden_dim, wo)?)?,
    ))
}

/// The full forecaster: recurrent map plus readout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forecaster {
    pub lstm: LstmParams,
    pub readout: ReadoutParams,
}

/// A [`Forecaster`] registered on a tape.
#[derive(Debug, Clone, Copy)]
pub struct ForecasterNodes {
    pub lstm: LstmNodes,
    pub readout: NodeRef,
}

impl ForecasterNodes {
    /// Parameter nodes in the order of [`Forecaster::tensors`].
    pub fn params(&self) -> [NodeRef; 3] {
        [self.lstm.weights, self.lstm.bias, self.readout]
    }
}

impl Forecaster {
    pub fn new(lstm: LstmParams, readout: ReadoutParams) -> Result<Self> {
        if readout.output_dim() != lstm.input_dim() || readout.hidden_dim() != lstm.hidden_dim() {
            return Err(Error::Shape {
                op: "forecaster",
                shapes: vec![lstm.weights.shape().to_vec(), readout.weights.shape().to_vec()],
            });
        }
        Ok(Self { lstm, readout })
    }

    pub fn init(seed: u64, input_dim: usize, hidden_dim: usize) -> Result<Self> {
        let (lstm, readout) = init_params(seed, input_dim, hidden_dim)?;
        Self::new(lstm, readout)
    }

    pub fn input_dim(&self) -> usize {
        self.lstm.input_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.lstm.hidden_dim()
    }

    pub fn register(&self, tape: &mut Tape) -> ForecasterNodes {
        ForecasterNodes { lstm: self.lstm.register(tape), readout: self.readout.register(tape) }
    }

    /// Trainable tensors: LSTM weights, LSTM bias, readout.
    pub fn tensors(&self) -> [&Tensor; 3] {
        [&self.lstm.weights, &self.lstm.bias, &self.readout.weights]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 3] {
        [&mut self.lstm.weights, &mut self.lstm.bias, &mut self.readout.weights]
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.all_finite())
    }

    /// Consumes `x`, returns the prediction of the next value and the new state.
    pub fn step(&self, x: &[f64], state: &RnnState) -> Result<(Vec<f64>, RnnState)> {
        let next = self.lstm.step(x, state)?;
        let o = self.readout.apply(&next.h)?;
        Ok((o, next))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_difference_grad, relative_error};
    use proptest::prelude::*;

    fn run_step(params: &LstmParams, x: &[f64], state: &RnnState) -> RnnState {
        let mut tape = Tape::new();
        let nodes = params.register(&mut tape);
        let xn = tape.constant(Tensor::column(x.to_vec()));
        let s = StateNodes::constant(&mut tape, state);
        lstm_step(&mut tape, &nodes, xn, s).unwrap().values(&tape).unwrap()
    }

    #[test]
    fn zero_params_give_zero_hidden() {
        let p = LstmParams::new(Tensor::zeros(&[12, 5]), Tensor::zeros(&[12, 1])).unwrap();
        let s = run_step(&p, &[0.7, -3.0], &RnnState::zeros(3));
        assert_eq!(s.h, vec![0.0; 3]);
        assert_eq!(s.c, vec![0.0; 3]);
    }

    #[test]
    fn saturated_forget_gate_keeps_cell() {
        let dh = 2;
        let mut bias = vec![0.0; 4 * dh];
        bias[dh..2 * dh].iter_mut().for_each(|b| *b = 50.0);
        let p = LstmParams::new(Tensor::zeros(&[4 * dh, 1 + dh]), Tensor::column(bias)).unwrap();
        let state = RnnState { h: vec![0.1, -0.2], c: vec![0.8, -1.3] };
        let s = run_step(&p, &[0.4], &state);
        for (a, b) in s.c.iter().zip(&state.c) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gate_formulas_by_hand() {
        let (p, _) = init_params(1, 1, 4).unwrap();
        let state = RnnState { h: vec![0.1, -0.3, 0.25, 0.0], c: vec![0.5, -0.1, 0.0, 0.9] };
        let x = 0.3;
        let got = run_step(&p, &[x], &state);
        // Independent evaluation with std float routines, one gate at a time.
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let pre = |gate: Gate, j: usize| {
            let w = &p.gate_weights(gate)[j * 5..(j + 1) * 5];
            let mut v = w[0] * x;
            for k in 0..4 {
                v += w[1 + k] * state.h[k];
            }
            v + p.gate_bias(gate)[j]
        };
        for j in 0..4 {
            let c = sig(pre(Gate::Forget, j)) * state.c[j] + sig(pre(Gate::Input, j)) * pre(Gate::Candidate, j).tanh();
            let h = sig(pre(Gate::Output, j)) * c.tanh();
            assert!((got.c[j] - c).abs() < 1e-14, "c[{j}]");
            assert!((got.h[j] - h).abs() < 1e-14, "h[{j}]");
        }
    }

    #[test]
    fn readout_examples() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap());
        let h = tape.constant(Tensor::column(vec![1.0, 1.0]));
        let o = readout(&mut tape, w, h).unwrap();
        assert_eq!(tape.value(o).unwrap().data(), &[3.0, 7.0]);

        let ident = ReadoutParams::new(Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap()).unwrap();
        assert_eq!(ident.apply(&[0.3, -0.4]).unwrap(), vec![0.3, -0.4]);
        let zero = ReadoutParams::new(Tensor::zeros(&[2, 3])).unwrap();
        assert_eq!(zero.apply(&[0.3, -0.4, 9.0]).unwrap(), vec![0.0, 0.0]);
        assert!(zero.apply(&[1.0]).is_err());
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = init_params(1, 2, 5).unwrap();
        let b = init_params(1, 2, 5).unwrap();
        let c = init_params(2, 2, 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.0, c.0);
        let bound = 1.0 / (7.0f64).sqrt();
        assert!(a.0.weights.data().iter().all(|w| w.abs() <= bound));
        assert!(a.0.bias.data().iter().all(|&b| b == 0.0));
        assert!(a.1.weights.data().iter().all(|w| w.abs() <= 1.0 / 5.0f64.sqrt()));
        assert!(init_params(1, 0, 3).is_err());
    }

    #[test]
    fn plain_step_matches_tape_bitwise() {
        let f = Forecaster::init(3, 2, 5).unwrap();
        let mut state = RnnState::zeros(5);
        let mut x = vec![0.2, -0.6];
        for _ in 0..6 {
            let taped = run_step(&f.lstm, &x, &state);
            let (o, plain) = f.step(&x, &state).unwrap();
            assert_eq!(taped, plain);
            state = plain;
            x = o;
        }
    }

    #[test]
    fn shape_mismatch_is_error() {
        let f = Forecaster::init(3, 2, 5).unwrap();
        let mut tape = Tape::new();
        let nodes = f.lstm.register(&mut tape);
        let x = tape.constant(Tensor::column(vec![1.0, 2.0, 3.0]));
        let s = StateNodes::constant(&mut tape, &RnnState::zeros(5));
        assert!(matches!(lstm_step(&mut tape, &nodes, x, s), Err(Error::Shape { op: "lstm_step", .. })));
        assert!(f.step(&[1.0], &RnnState::zeros(5)).is_err());
    }

    /// Loss `Σ w ⊙ h_T` after `steps` LSTM steps, as a function of one tensor.
    fn composed_loss(f: &Forecaster, which: usize, probe: Option<&Tensor>, steps: usize) -> (f64, Option<Tensor>) {
        let mut model = f.clone();
        if let Some(p) = probe {
            *model.tensors_mut()[which] = p.clone();
        }
        let mut tape = Tape::new();
        let nodes = model.register(&mut tape);
        let mut state = StateNodes::constant(&mut tape, &RnnState { h: vec![0.1, -0.2, 0.3], c: vec![0.4, 0.0, -0.5] });
        for t in 0..steps {
            let x = tape.constant(Tensor::column(vec![0.3 - 0.1 * t as f64, 0.5]));
            state = lstm_step(&mut tape, &nodes.lstm, x, state).unwrap();
        }
        let o = readout(&mut tape, nodes.readout, state.h).unwrap();
        let sq = tape.square(o).unwrap();
        let cw = tape.constant(Tensor::column(vec![0.7, -1.3, 0.2]));
        let hw = tape.hadamard(state.c, cw).unwrap();
        let a = tape.sum(sq).unwrap();
        let b = tape.sum(hw).unwrap();
        let loss = tape.add(a, b).unwrap();
        let value = tape.value(loss).unwrap().data()[0];
        if probe.is_some() {
            return (value, None);
        }
        let g = tape.backward(loss).unwrap();
        (value, Some(g.wrt(nodes.params()[which]).unwrap().clone()))
    }

    #[test]
    fn step_gradients_match_finite_differences() {
        let f = Forecaster::init(11, 2, 3).unwrap();
        // nonzero biases so every bias coordinate matters
        let mut f = f;
        f.lstm.bias.data_mut().iter_mut().enumerate().for_each(|(i, b)| *b = 0.05 * i as f64 - 0.3);
        for steps in [1, 5] {
            for which in 0..3 {
                let (_, analytic) = composed_loss(&f, which, None, steps);
                let numeric =
                    finite_difference_grad(|p| composed_loss(&f, which, Some(p), steps).0, f.tensors()[which], 1e-5)
                        .unwrap();
                let e = relative_error(&analytic.unwrap(), &numeric);
                assert!(e < 1e-6, "steps={steps} tensor={which} err={e}");
            }
        }
    }

    proptest! {
        #[test]
        fn hidden_state_is_bounded(seed in 0u64..1000, x in -50.0f64..50.0, c0 in -20.0f64..20.0, scale in 0.1f64..30.0) {
            let (mut p, _) = init_params(seed, 1, 3).unwrap();
            p.weights.data_mut().iter_mut().for_each(|w| *w *= scale);
            let s = p.step(&[x], &RnnState { h: vec![1.0, -1.0, 0.5], c: vec![c0; 3] }).unwrap();
            prop_assert!(s.h.iter().all(|h| h.abs() <= 1.0));
            prop_assert!(s.c.iter().all(|c| c.is_finite()));
        }

        #[test]
        fn readout_is_linear(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let (_, r) = init_params(seed, 2, 4).unwrap();
            let h1 = [0.3, -0.2, 0.9, 0.1];
            let h2 = [-0.5, 0.4, 0.0, 0.7];
            let mix: Vec<f64> = h1.iter().zip(&h2).map(|(x, y)| a * x + b * y).collect();
            let lhs = r.apply(&mix).unwrap();
            let (o1, o2) = (r.apply(&h1).unwrap(), r.apply(&h2).unwrap());
            for k in 0..2 {
                prop_assert!((lhs[k] - (a * o1[k] + b * o2[k])).abs() < 1e-12);
            }
        }
    }
}
