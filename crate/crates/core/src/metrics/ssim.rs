use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::math;
use crate::tensor::Tensor;

pub const SSIM_WINDOW: usize = 7;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn gaussian_1d() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = math::exp(-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA));
    }
    w
}

/// Windowed SSIM of two `H × W` frames: a 7×7 Gaussian window (σ = 1.5)
/// centred on every pixel, clipped at the borders and renormalised; the
/// frame score is the mean of the local map.
pub fn ssim(pred: &Tensor, truth: &Tensor, data_range: f64) -> Result<f64> {
    if pred.shape() != truth.shape() || truth.shape().len() != 2 {
        return Err(Error::Shape { op: "ssim", shapes: vec![pred.shape().to_vec(), truth.shape().to_vec()] });
    }
    if !(data_range > 0.0) {
        return Err(invalid("ssim data range must be positive"));
    }
    let (h, w) = (truth.rows(), truth.row_len());
    let c1 = (SSIM_K1 * data_range) * (SSIM_K1 * data_range);
    let c2 = (SSIM_K2 * data_range) * (SSIM_K2 * data_range);
    let g = gaussian_1d();
    let r = (SSIM_WINDOW / 2) as isize;
    let (x, y) = (pred.data(), truth.data());
    let mut total = 0.0;
    for i in 0..h as isize {
        for j in 0..w as isize {
            let (mut sw, mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
            for di in -r..=r {
                let ii = i + di;
                if ii < 0 || ii >= h as isize {
                    continue;
                }
                for dj in -r..=r {
                    let jj = j + dj;
                    if jj < 0 || jj >= w as isize {
                        continue;
                    }
                    let wt = g[(di + r) as usize] * g[(dj + r) as usize];
                    let k = ii as usize * w + jj as usize;
                    sw += wt;
                    mx += wt * x[k];
                    my += wt * y[k];
                    sxx += wt * x[k] * x[k];
                    syy += wt * y[k] * y[k];
                    sxy += wt * x[k] * y[k];
                }
            }
            let (mx, my) = (mx / sw, my / sw);
            let vx = sxx / sw - mx * mx;
            let vy = syy / sw - my * my;
            let cov = sxy / sw - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
    }
    Ok(total / (h * w) as f64)
}

/// Per-frame SSIM of `steps × (H·W)` sequences and its mean.
pub fn ssim_sequence(pred: &Tensor, truth: &Tensor, height: usize, width: usize, data_range: f64) -> Result<(f64, Vec<f64>)> {
    if pred.shape() != truth.shape() || truth.row_len() != height * width {
        return Err(Error::Shape { op: "ssim_sequence", shapes: vec![pred.shape().to_vec(), truth.shape().to_vec(), vec![height, width]] });
    }
    let frame = |t: &Tensor, i: usize| Tensor::matrix(height, width, t.row(i).to_vec());
    let curve = (0..truth.rows()).map(|i| ssim(&frame(pred, i)?, &frame(truth, i)?, data_range)).collect::<Result<Vec<_>>>()?;
    let mean = if curve.is_empty() { 0.0 } else { curve.iter().sum::<f64>() / curve.len() as f64 };
    Ok((mean, curve))
}
