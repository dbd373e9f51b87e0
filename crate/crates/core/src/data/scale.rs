use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::tensor::Tensor;

/// Per-component affine map sending the fitted minimum to 0 and maximum to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Scaler {
    /// Leaves values unchanged.
    pub fn identity(dim: usize) -> Self {
        Self { min: vec![0.0; dim], max: vec![1.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    /// Fits on the rows of every sequence (`steps × d`).
    pub fn fit(sequences: &[Tensor]) -> Result<Self> {
        let dim = sequences.first().map(Tensor::row_len).ok_or_else(|| invalid("cannot fit a scaler on no data"))?;
        let mut min = vec![f64::INFINITY; dim];
        let mut max = vec![f64::NEG_INFINITY; dim];
        for s in sequences {
            if s.row_len() != dim {
                return Err(Error::Shape { op: "scaler_fit", shapes: vec![s.shape().to_vec(), vec![dim]] });
            }
            for r in 0..s.rows() {
                for (j, &v) in s.row(r).iter().enumerate() {
                    min[j] = min[j].min(v);
                    max[j] = max[j].max(v);
                }
            }
        }
        for j in 0..dim {
            if !(max[j] > min[j]) || !max[j].is_finite() || !min[j].is_finite() {
                return Err(invalid(format!("component {j} has no spread (min {}, max {})", min[j], max[j])));
            }
        }
        Ok(Self { min, max })
    }

    fn check(&self, t: &Tensor) -> Result<()> {
        if t.row_len() != self.dim() {
            return Err(Error::Shape { op: "scaler", shapes: vec![t.shape().to_vec(), vec![self.dim()]] });
        }
        Ok(())
    }

    pub fn transform(&self, t: &Tensor) -> Result<Tensor> {
        self.check(t)?;
        let d = self.dim();
        let mut out = t.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let j = i % d;
            *v = (*v - self.min[j]) / (self.max[j] - self.min[j]);
        }
        Ok(out)
    }

    pub fn inverse(&self, t: &Tensor) -> Result<Tensor> {
        self.check(t)?;
        let d = self.dim();
        let mut out = t.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let j = i % d;
            *v = *v * (self.max[j] - self.min[j]) + self.min[j];
        }
        Ok(out)
    }
}

/// Fits on `series` (`steps × d`) and returns it scaled.
pub fn scale_minmax(series: &Tensor) -> Result<(Tensor, Scaler)> {
    let scaler = Scaler::fit(core::slice::from_ref(series))?;
    Ok((scaler.transform(series)?, scaler))
}
