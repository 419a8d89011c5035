use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Per-feature affine map onto `[0, 1]` fitted on training rows.
///
/// Values outside the fitted range map outside `[0, 1]`; nothing is clamped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(features: &Tensor) -> Result<Self> {
        if features.rank() != 2 || features.rows() == 0 {
            return Err(Error::contract("cannot fit a scaler on empty data"));
        }
        let d = features.cols();
        let mut min = vec![f64::INFINITY; d];
        let mut max = vec![f64::NEG_INFINITY; d];
        for r in 0..features.rows() {
            for (j, &v) in features.row(r).iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        for j in 0..d {
            if max[j] <= min[j] {
                log::warn!("feature {j} is constant ({}); it scales to 0", min[j]);
            }
        }
        Ok(Self { min, max })
    }

    fn check(&self, features: &Tensor) -> Result<()> {
        if features.cols() != self.min.len() {
            return Err(Error::Dimension {
                op: "minmax",
                lhs: features.shape().to_vec(),
                rhs: vec![self.min.len()],
            });
        }
        Ok(())
    }

    pub fn transform(&self, features: &Tensor) -> Result<Tensor> {
        self.check(features)?;
        let mut out = features.clone();
        let d = self.min.len();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let j = i % d;
            let range = self.max[j] - self.min[j];
            *v = if range > 0.0 { (*v - self.min[j]) / range } else { 0.0 };
        }
        Ok(out)
    }

    pub fn inverse_transform(&self, features: &Tensor) -> Result<Tensor> {
        self.check(features)?;
        let mut out = features.clone();
        let d = self.min.len();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let j = i % d;
            *v = *v * (self.max[j] - self.min[j]) + self.min[j];
        }
        Ok(out)
    }
}
