//! Self-checks of every primitive's adjoint against central differences.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{finite_difference_grad, relative_error, NodeRef, OpKind, Primitive, Tape};
use crate::error::Result;
use crate::tensor::Tensor;

/// Outcome of one named gradient or identity check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    /// Worst error observed (relative for gradient checks, absolute for identities).
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckResult {
    pub fn new(name: impl Into<String>, max_error: f64, tolerance: f64) -> Self {
        // NaN compares false, so it fails.
        let passed = max_error < tolerance;
        Self { name: name.into(), max_error, tolerance, passed }
    }
}

pub const FD_EPS: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-6;

struct Case {
    prim: Primitive,
    shapes: Vec<[usize; 2]>,
}

fn cases(rng: &mut ChaCha8Rng) -> Vec<Case> {
    OpKind::PRIMITIVES
        .iter()
        .map(|&kind| {
            let (prim, shapes) = match kind {
                OpKind::MatMul => (Primitive::MatMul, vec![[3, 4], [4, 2]]),
                OpKind::Add => (Primitive::Add, vec![[3, 2], [3, 2]]),
                OpKind::Hadamard => (Primitive::Hadamard, vec![[3, 2], [3, 2]]),
                OpKind::Concat => (Primitive::Concat, vec![[2, 2], [3, 2]]),
                OpKind::Sigmoid => (Primitive::Sigmoid, vec![[3, 2]]),
                OpKind::Tanh => (Primitive::Tanh, vec![[3, 2]]),
                OpKind::Scale => (Primitive::Scale(rng.random_range(-2.0..=2.0)), vec![[3, 2]]),
                OpKind::Slice => (Primitive::Slice { start: 1, end: 4 }, vec![[5, 2]]),
                OpKind::Sum => (Primitive::Sum, vec![[3, 2]]),
                OpKind::Square => (Primitive::Square, vec![[3, 2]]),
                OpKind::Param | OpKind::Constant => unreachable!(),
            };
            Case { prim, shapes }
        })
        .collect()
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: [usize; 2]) -> Tensor {
    let data = (0..shape[0] * shape[1]).map(|_| rng.random_range(-2.0..=2.0)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

/// Scalar objective for checking `prim`: the primitive's output reduced with
/// a fixed random weighting (or reduced directly for `sum`).
fn objective(tape: &mut Tape, prim: Primitive, inputs: &[NodeRef], weight: &Tensor) -> Result<NodeRef> {
    let out = tape.apply(prim, inputs)?;
    if prim == Primitive::Sum {
        return Ok(out);
    }
    let w = tape.constant(weight.clone());
    let weighted = tape.hadamard(out, w)?;
    tape.sum(weighted)
}

/// Runs `trials` randomized checks per primitive. `fault` corrupts one
/// primitive's adjoint so the harness itself can be tested.
pub fn primitive_checks(seed: u64, trials: usize, fault: Option<OpKind>) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = vec![0.0f64; OpKind::PRIMITIVES.len()];
    for _ in 0..trials {
        for (ci, case) in cases(&mut rng).into_iter().enumerate() {
            let inputs: Vec<Tensor> = case.shapes.iter().map(|&s| random_tensor(&mut rng, s)).collect();
            let out_shape = {
                let mut t = Tape::new();
                let refs: Vec<_> = inputs.iter().map(|x| t.constant(x.clone())).collect();
                let o = t.apply(case.prim, &refs)?;
                t.value(o)?.shape().to_vec()
            };
            let weight = {
                let n: usize = out_shape.iter().product();
                Tensor::new(out_shape.clone(), (0..n).map(|_| rng.random_range(-2.0..=2.0)).collect())?
            };

            let mut tape = Tape::new();
            tape.inject_adjoint_fault(fault);
            let refs: Vec<_> = inputs.iter().map(|x| tape.param(x.clone())).collect();
            let root = objective(&mut tape, case.prim, &refs, &weight)?;
            let grads = tape.backward(root)?;

            for (j, r) in refs.iter().enumerate() {
                let numeric = finite_difference_grad(
                    |probe| {
                        let mut t = Tape::new();
                        let rs: Vec<_> = inputs
                            .iter()
                            .enumerate()
                            .map(|(k, x)| t.constant(if k == j { probe.clone() } else { x.clone() }))
                            .collect();
                        objective(&mut t, case.prim, &rs, &weight)
                            .and_then(|o| t.value(o).map(|v| v.data()[0]))
                            .unwrap_or(f64::NAN)
                    },
                    &inputs[j],
                    FD_EPS,
                )?;
                let e = relative_error(grads.wrt(*r)?, &numeric);
                if e > worst[ci] || e.is_nan() {
                    worst[ci] = e;
                }
            }
        }
    }
    Ok(OpKind::PRIMITIVES
        .iter()
        .zip(worst)
        .map(|(k, e)| CheckResult::new(k.name().to_string(), e, FD_TOLERANCE))
        .collect())
}
