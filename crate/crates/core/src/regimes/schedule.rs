use crate::math;

/// Inverse-sigmoid feedback probability `p(e) = 1 - k / (k + exp(e / k))`.
///
/// Non-decreasing in `epoch` and tends to 1. `total_epochs` only enters
/// through [`default_schedule_k`].
pub fn schedule_p(epoch: usize, k: f64) -> f64 {
    let k = if k > 0.0 { k } else { f64::MIN_POSITIVE };
    let e = math::exp(epoch as f64 / k);
    // exp overflow gives k / inf = 0, i.e. p = 1.
    1.0 - k / (k + e)
}

/// Shape parameter used when the config leaves it unset:
/// `max(total_epochs / 18, 20)`.
///
/// `total / 18` places the midpoint and the saturation of the curve at the
/// same relative epochs for any run length. The floor keeps
/// `p(0) = 1 / (k + 1) < 0.05` for short runs; `p(total) ≥ 0.95` then holds
/// from 119 epochs on.
pub fn default_schedule_k(total_epochs: usize) -> f64 {
    (total_epochs as f64 / 18.0).max(20.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn saturates_to_one() {
        assert_eq!(schedule_p(1_000_000, 5.0), 1.0);
        assert!(schedule_p(2000, default_schedule_k(2000)) > 0.9999);
    }

    #[test]
    fn midpoint_at_k_ln_k() {
        for k in [2.0, 19.0, 111.1] {
            // exp(e/k) = k at e = k·ln k; evaluate the formula there directly.
            let e = k * libm::log(k);
            let p = 1.0 - k / (k + libm::exp(e / k));
            assert!((p - 0.5).abs() < 1e-12);
            // and the integer epoch nearest the midpoint brackets 0.5
            let lo = schedule_p(e.floor() as usize, k);
            let hi = schedule_p(e.ceil() as usize, k);
            assert!(lo <= 0.5 && hi >= 0.5, "{lo} {hi}");
        }
    }

    #[test]
    fn monotone_with_endpoint_bounds() {
        for total in [119, 300, 500, 2000, 5000] {
            let k = default_schedule_k(total);
            let mut prev = schedule_p(0, k);
            assert!(prev <= 0.05, "p(0)={prev} for total {total}");
            for e in 1..=total {
                let p = schedule_p(e, k);
                assert!(p >= prev);
                prev = p;
            }
            assert!(prev >= 0.95, "p(end)={prev} for total {total}");
        }
    }
}
