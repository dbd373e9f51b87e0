use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{invalid, Error, Result};
use crate::math;
use crate::tensor::Tensor;

/// Regulariser inside the logarithms of [`power_spectrum_error`].
pub const SPECTRUM_EPS: f64 = 1e-12;
/// Shortest series accepted by [`power_spectrum_error`].
pub const MIN_SPECTRUM_LEN: usize = 16;

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape { op, shapes: vec![a.shape().to_vec(), b.shape().to_vec()] });
    }
    Ok(())
}

/// Aggregate RMSE over all steps and components, and the per-step curve
/// `√(mean_j (p_tj - y_tj)²)`. Inputs are `steps × d`.
pub fn rmse(pred: &Tensor, truth: &Tensor) -> Result<(f64, Vec<f64>)> {
    same_shape("rmse", pred, truth)?;
    let d = truth.row_len().max(1);
    let mut total = 0.0;
    let mut curve = Vec::with_capacity(truth.rows());
    for t in 0..truth.rows() {
        let s: f64 = pred.row(t).iter().zip(truth.row(t)).map(|(p, y)| (p - y) * (p - y)).sum();
        total += s;
        curve.push(math::sqrt(s / d as f64));
    }
    let n = truth.len();
    let agg = if n == 0 { 0.0 } else { math::sqrt(total / n as f64) };
    Ok((agg, curve))
}

/// Periodogram `|X_k|² / N`, `k = 1..=⌊N/2⌋`, of the mean-removed signal by
/// direct DFT.
pub fn periodogram(signal: &[f64]) -> Vec<f64> {
    let n = signal.len();
    if n == 0 {
        return Vec::new();
    }
    let mean = signal.iter().sum::<f64>() / n as f64;
    let centred: Vec<f64> = signal.iter().map(|x| x - mean).collect();
    (1..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, x) in centred.iter().enumerate() {
                // reduce k·t mod N first to keep the angle small
                let angle = 2.0 * PI * ((k * t) % n) as f64 / n as f64;
                re += x * math::cos(angle);
                im -= x * math::sin(angle);
            }
            (re * re + im * im) / n as f64
        })
        .collect()
}

/// Mean over components and frequency bins of
/// `|log10(P_pred + ε) - log10(P_truth + ε)|`. Inputs are `N × d`, `N ≥ 16`.
pub fn power_spectrum_error(pred: &Tensor, truth: &Tensor) -> Result<f64> {
    same_shape("power_spectrum_error", pred, truth)?;
    let n = truth.rows();
    if n < MIN_SPECTRUM_LEN {
        return Err(invalid(format!("spectrum error needs at least {MIN_SPECTRUM_LEN} steps, got {n}")));
    }
    let d = truth.row_len();
    let column = |t: &Tensor, j: usize| -> Vec<f64> { (0..n).map(|i| t.row(i)[j]).collect() };
    let mut total = 0.0;
    let mut count = 0usize;
    for j in 0..d {
        let pp = periodogram(&column(pred, j));
        let pt = periodogram(&column(truth, j));
        for (a, b) in pp.iter().zip(&pt) {
            total += math::abs(math::log10(a + SPECTRUM_EPS) - math::log10(b + SPECTRUM_EPS));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rmse_examples() {
        let y = Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(rmse(&y, &y).unwrap().0, 0.0);
        let (a, c) = rmse(&y.map(|v| v + 2.0), &y).unwrap();
        assert_eq!(a, 2.0);
        assert_eq!(c, vec![2.0; 3]);
        let (a, c) = rmse(&Tensor::column(vec![0.0, 0.0]), &Tensor::column(vec![3.0, 4.0])).unwrap();
        assert!((a - 12.5f64.sqrt()).abs() < 1e-15);
        assert!((a - 3.5355).abs() < 1e-4);
        assert_eq!(c, vec![3.0, 4.0]);
        assert!(rmse(&Tensor::column(vec![0.0]), &y).is_err());
    }

    fn sine(freq: f64, n: usize) -> Vec<f64> {
        (0..n).map(|t| libm::sin(2.0 * PI * freq * t as f64 / n as f64)).collect()
    }

    #[test]
    fn spectrum_examples() {
        let n = 256;
        let truth = Tensor::column(sine(5.0, n));
        assert_eq!(power_spectrum_error(&truth, &truth).unwrap(), 0.0);
        let shifted = truth.map(|v| v + 3.0);
        assert!(power_spectrum_error(&shifted, &truth).unwrap() < 1e-9);

        let pred = Tensor::column(sine(10.0, n));
        assert!(power_spectrum_error(&pred, &truth).unwrap() > 0.0);
        let argmax = |p: &[f64]| p.iter().enumerate().fold((0, f64::MIN), |b, (i, &v)| if v > b.1 { (i, v) } else { b }).0 + 1;
        assert_eq!(argmax(&periodogram(truth.data())), 5);
        assert_eq!(argmax(&periodogram(pred.data())), 10);
        // a unit sinusoid at an integer bin carries N/4 in that bin
        assert!((periodogram(truth.data())[4] - n as f64 / 4.0).abs() < 1e-9);

        let short = Tensor::column(vec![0.0; 15]);
        assert!(power_spectrum_error(&short, &short).is_err());
    }

    proptest! {
        #[test]
        fn metrics_are_symmetric(
            a in proptest::collection::vec(-5.0f64..5.0, 32),
            b in proptest::collection::vec(-5.0f64..5.0, 32),
        ) {
            let (a, b) = (Tensor::matrix(16, 2, a).unwrap(), Tensor::matrix(16, 2, b).unwrap());
            let (r1, r2) = (rmse(&a, &b).unwrap().0, rmse(&b, &a).unwrap().0);
            prop_assert!(r1 >= 0.0 && r1 == r2);
            let (s1, s2) = (power_spectrum_error(&a, &b).unwrap(), power_spectrum_error(&b, &a).unwrap());
            prop_assert!(s1 >= 0.0 && s1 == s2);
            prop_assert_eq!(rmse(&a, &a).unwrap().0, 0.0);
            prop_assert_eq!(power_spectrum_error(&a, &a).unwrap(), 0.0);
        }
    }
}
