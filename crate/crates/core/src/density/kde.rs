use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::Dataset;
use crate::error::{Error, Result};

/// Gaussian kernel density estimate per class with an isotropic bandwidth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KdeDensity {
    /// Stored training points, one matrix per class.
    pub points: Vec<Tensor>,
    pub bandwidths: Vec<f64>,
}

/// Scott's factor `n^(-1/(d+4))` times the geometric mean of the per-feature
/// standard deviations.
fn scott_bandwidth(points: &Tensor) -> f64 {
    let (n, d) = (points.rows(), points.cols());
    let mut log_std = 0.0;
    for j in 0..d {
        let mean = (0..n).map(|i| points.row(i)[j]).sum::<f64>() / n as f64;
        let var = (0..n).map(|i| (points.row(i)[j] - mean).powi(2)).sum::<f64>()
            / (n.saturating_sub(1).max(1)) as f64;
        log_std += var.sqrt().max(1e-12).ln();
    }
    (n as f64).powf(-1.0 / (d as f64 + 4.0)) * (log_std / d as f64).exp()
}

impl KdeDensity {
    pub fn fit(data: &Dataset) -> Result<Self> {
        let mut points = Vec::new();
        let mut bandwidths = Vec::new();
        for c in 0..data.n_classes {
            let idx = data.class_indices(c);
            if idx.is_empty() {
                return Err(Error::contract(format!("class {c} has no points")));
            }
            let p = data.features.select_rows(&idx);
            bandwidths.push(scott_bandwidth(&p));
            points.push(p);
        }
        Ok(Self { points, bandwidths })
    }

    pub fn with_bandwidth(points: Vec<Tensor>, bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0) {
            return Err(Error::contract("bandwidth must be positive"));
        }
        if points.iter().any(Tensor::is_empty) {
            return Err(Error::contract("empty class"));
        }
        let bandwidths = vec![bandwidth; points.len()];
        Ok(Self { points, bandwidths })
    }

    /// Log of the mean Gaussian kernel over the stored points of the row's
    /// class.
    pub fn log_prob(&self, x: &Tensor, y: &[usize]) -> Result<Vec<f64>> {
        if x.rows() != y.len() {
            return Err(Error::Dimension {
                op: "kde",
                lhs: x.shape().to_vec(),
                rhs: vec![y.len()],
            });
        }
        let mut out = Vec::with_capacity(y.len());
        for (r, &c) in y.iter().enumerate() {
            let pts = self
                .points
                .get(c)
                .ok_or_else(|| Error::contract(format!("unknown class {c}")))?;
            let h = self.bandwidths[c];
            let d = pts.cols() as f64;
            let q = x.row(r);
            let exps: Vec<f64> = (0..pts.rows())
                .map(|i| {
                    let sq: f64 = pts.row(i).iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum();
                    -0.5 * sq / (h * h)
                })
                .collect();
            let m = exps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + exps.iter().map(|e| (e - m).exp()).sum::<f64>().ln();
            out.push(lse - (pts.rows() as f64).ln() - 0.5 * d * (2.0 * PI * h * h).ln());
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_point_peak() {
        let kde = KdeDensity::with_bandwidth(vec![Tensor::matrix(1, 1, vec![0.7]).unwrap()], 1.0).unwrap();
        let lp = kde.log_prob(&Tensor::matrix(1, 1, vec![0.7]).unwrap(), &[0]).unwrap()[0];
        assert!((lp - (1.0 / (2.0 * PI).sqrt()).ln()).abs() < 1e-12);
        assert!((lp + 0.9189).abs() < 1e-4);
    }

    #[test]
    fn symmetric_pair() {
        let pts = Tensor::matrix(2, 2, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let kde = KdeDensity::with_bandwidth(vec![pts.clone()], 0.4).unwrap();
        let lp = kde.log_prob(&pts, &[0, 0]).unwrap();
        assert!((lp[0] - lp[1]).abs() < 1e-14);
    }

    #[test]
    fn empty_class_is_rejected() {
        let ds = Dataset::new(Tensor::zeros(&[2, 1]), vec![0, 0], 2).unwrap();
        assert!(matches!(KdeDensity::fit(&ds), Err(Error::Contract(_))));
        assert!(KdeDensity::with_bandwidth(vec![Tensor::zeros(&[1, 1])], 0.0).is_err());
    }
}
