//! Class-conditional density estimators.

mod gmm;
mod kde;
mod maf;

pub use gmm::{GmmComponent, GmmDensity, GMM_JITTER};
pub use kde::KdeDensity;
pub use maf::{train_flow, FlowArch, MadeMasks, MadeTransform, MafFlow, LOG_SCALE_CLAMP};

use crate::autodiff::Tensor;
use crate::error::Result;

/// Anything that scores `log p(x | y)` row by row.
pub trait ConditionalDensity {
    fn log_density(&self, x: &Tensor, y: &[usize]) -> Result<Vec<f64>>;
}

impl ConditionalDensity for MafFlow {
    fn log_density(&self, x: &Tensor, y: &[usize]) -> Result<Vec<f64>> {
        self.log_prob(x, y)
    }
}

impl ConditionalDensity for GmmDensity {
    fn log_density(&self, x: &Tensor, y: &[usize]) -> Result<Vec<f64>> {
        self.log_prob(x, y)
    }
}

impl ConditionalDensity for KdeDensity {
    fn log_density(&self, x: &Tensor, y: &[usize]) -> Result<Vec<f64>> {
        self.log_prob(x, y)
    }
}
