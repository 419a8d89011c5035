use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::density::ConditionalDensity;
use crate::error::{Error, Result};

/// Per-class log-density threshold `log δ_c`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityThreshold {
    pub log_delta: Vec<f64>,
}

impl DensityThreshold {
    pub fn for_targets(&self, targets: &[usize]) -> Result<Vec<f64>> {
        targets
            .iter()
            .map(|&t| {
                self.log_delta
                    .get(t)
                    .copied()
                    .ok_or_else(|| Error::contract(format!("no threshold for class {t}")))
            })
            .collect()
    }
}

/// Median; the mean of the two central values for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// `log δ_c` = median log-density of the class-`c` training rows under
/// their own class.
pub fn compute_delta<D: ConditionalDensity>(density: &D, train: &Dataset) -> Result<DensityThreshold> {
    let lp = density.log_density(&train.features, &train.labels)?;
    let log_delta = (0..train.n_classes)
        .map(|c| {
            let vals: Vec<f64> = train.class_indices(c).iter().map(|&i| lp[i]).collect();
            median(&vals).ok_or_else(|| Error::contract(format!("class {c} has no training rows")))
        })
        .collect::<Result<Vec<_>>>()?;
    if log_delta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("density threshold".into()));
    }
    Ok(DensityThreshold { log_delta })
}
