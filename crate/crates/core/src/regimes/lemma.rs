//! The linear first-order recurrence `a_t = b_t + c_t · a_{t-1}`, `a_0 = 0`,
//! that governs `∂h_t/∂w_h` under every training mode (with `c_t` the
//! teacher-forced, autoregressive or mixed step Jacobian).

use alloc::format;

use crate::error::{invalid, Result};

fn validate(b: &[f64], c: &[f64]) -> Result<()> {
    if b.is_empty() {
        return Err(invalid("recurrence needs at least one term"));
    }
    if b.len() != c.len() {
        return Err(invalid(format!("sequence lengths differ: {} vs {}", b.len(), c.len())));
    }
    Ok(())
}

/// Closed form `a_T = b_T + Σ_{i<T} (Π_{j=i+1}^{T} c_j) · b_i`.
pub fn lemma_unrolled(b: &[f64], c: &[f64]) -> Result<f64> {
    validate(b, c)?;
    let t = b.len();
    let mut total = b[t - 1];
    for i in 0..t - 1 {
        let product: f64 = c[i + 1..t].iter().product();
        total += product * b[i];
    }
    Ok(total)
}

/// Direct iteration of the recurrence from `a_0 = 0`.
pub fn lemma_recurrence(b: &[f64], c: &[f64]) -> Result<f64> {
    validate(b, c)?;
    Ok(b.iter().zip(c).fold(0.0, |a, (bt, ct)| bt + ct * a))
}
