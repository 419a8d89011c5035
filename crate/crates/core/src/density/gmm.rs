//! Per-class Gaussian mixtures fitted by EM, scored by their largest
//! weighted component.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::Dataset;
use crate::error::{Error, Result};

/// Diagonal jitter added to every covariance estimate.
pub const GMM_JITTER: f64 = 1e-6;
const MAX_ITERS: usize = 200;
const TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    /// Lower Cholesky factor of `covariance`, row-major.
    chol: Vec<f64>,
    log_det: f64,
}

impl GmmComponent {
    pub fn new(weight: f64, mean: Vec<f64>, covariance: Vec<Vec<f64>>) -> Result<Self> {
        let d = mean.len();
        let m = DMatrix::from_fn(d, d, |i, j| covariance[i][j]);
        let chol = m
            .cholesky()
            .ok_or_else(|| Error::Fit("covariance is not positive definite".into()))?;
        let l = chol.l();
        let log_det = 2.0 * (0..d).map(|i| l[(i, i)].ln()).sum::<f64>();
        let chol = (0..d * d).map(|k| l[(k / d, k % d)]).collect();
        Ok(Self {
            weight,
            mean,
            covariance,
            chol,
            log_det,
        })
    }

    /// `log N(x | mean, covariance)`.
    pub fn log_normal(&self, x: &[f64]) -> f64 {
        let d = self.mean.len();
        // forward substitution L v = x - mean
        let mut v = vec![0.0; d];
        for i in 0..d {
            let mut s = x[i] - self.mean[i];
            for k in 0..i {
                s -= self.chol[i * d + k] * v[k];
            }
            v[i] = s / self.chol[i * d + i];
        }
        let maha: f64 = v.iter().map(|a| a * a).sum();
        -0.5 * (d as f64 * (2.0 * PI).ln() + self.log_det + maha)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmDensity {
    pub components: usize,
    /// Mixture per class.
    pub classes: Vec<Vec<GmmComponent>>,
}

impl GmmDensity {
    /// Fits `j` components per class by EM, stopping when the mean
    /// log-likelihood improves by less than `1e-6` or after 200 iterations.
    pub fn fit(data: &Dataset, j: usize, seed: u64) -> Result<Self> {
        if j == 0 {
            return Err(Error::contract("GMM needs at least one component"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let classes = (0..data.n_classes)
            .map(|c| {
                let idx = data.class_indices(c);
                if idx.len() <= j {
                    return Err(Error::contract(format!(
                        "class {c} has {} samples, need more than {j}",
                        idx.len()
                    )));
                }
                let rows: Vec<DVector<f64>> = idx
                    .iter()
                    .map(|&i| DVector::from_column_slice(data.features.row(i)))
                    .collect();
                fit_class(&rows, j, &mut rng)
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            components: j,
            classes,
        })
    }

    /// `max_j [log π_j + log N(x | μ_j, Σ_j)]` for the row's class.
    pub fn log_prob(&self, x: &Tensor, y: &[usize]) -> Result<Vec<f64>> {
        if x.rows() != y.len() {
            return Err(Error::Dimension {
                op: "gmm",
                lhs: x.shape().to_vec(),
                rhs: vec![y.len()],
            });
        }
        (0..y.len())
            .map(|r| {
                let comps = self
                    .classes
                    .get(y[r])
                    .ok_or_else(|| Error::contract(format!("unknown class {}", y[r])))?;
                Ok(comps
                    .iter()
                    .map(|c| c.weight.ln() + c.log_normal(x.row(r)))
                    .fold(f64::NEG_INFINITY, f64::max))
            })
            .collect()
    }
}

fn covariance(rows: &[DVector<f64>], resp: &[f64], mean: &DVector<f64>, total: f64) -> DMatrix<f64> {
    let d = mean.len();
    let mut cov = DMatrix::zeros(d, d);
    for (x, &r) in rows.iter().zip(resp) {
        let diff = x - mean;
        cov += r * &diff * diff.transpose();
    }
    cov /= total;
    for i in 0..d {
        cov[(i, i)] += GMM_JITTER;
    }
    cov
}

fn to_component(weight: f64, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<GmmComponent> {
    let d = mean.len();
    GmmComponent::new(
        weight,
        mean.iter().copied().collect(),
        (0..d).map(|i| (0..d).map(|k| cov[(i, k)]).collect()).collect(),
    )
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|a| (a - m).exp()).sum::<f64>().ln()
}

fn fit_class(rows: &[DVector<f64>], j: usize, rng: &mut ChaCha8Rng) -> Result<Vec<GmmComponent>> {
    let n = rows.len();
    let all = vec![1.0; n];
    let global_mean = rows.iter().fold(DVector::zeros(rows[0].len()), |a, x| a + x) / n as f64;
    let global_cov = covariance(rows, &all, &global_mean, n as f64);

    // k-means++ style seeding of the means
    let mut means = vec![rows[rng.random_range(0..n)].clone()];
    while means.len() < j {
        let d2: Vec<f64> = rows
            .iter()
            .map(|x| means.iter().map(|m| (x - m).norm_squared()).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut t = rng.random_range(0.0..total);
            d2.iter()
                .position(|&w| {
                    t -= w;
                    t <= 0.0
                })
                .unwrap_or(n - 1)
        } else {
            rng.random_range(0..n)
        };
        means.push(rows[pick].clone());
    }
    let mut comps: Vec<GmmComponent> = means
        .iter()
        .map(|m| to_component(1.0 / j as f64, m, &global_cov))
        .collect::<Result<_>>()?;

    let mut prev = f64::NEG_INFINITY;
    for _ in 0..MAX_ITERS {
        let mut resp = vec![vec![0.0; n]; j];
        let mut ll = 0.0;
        for (i, x) in rows.iter().enumerate() {
            let xs = x.as_slice();
            let logs: Vec<f64> = comps.iter().map(|c| c.weight.ln() + c.log_normal(xs)).collect();
            let lse = log_sum_exp(&logs);
            ll += lse;
            for (k, l) in logs.iter().enumerate() {
                resp[k][i] = (l - lse).exp();
            }
        }
        ll /= n as f64;
        comps = resp
            .iter()
            .map(|r| {
                let total: f64 = r.iter().sum::<f64>().max(1e-300);
                let mean = rows
                    .iter()
                    .zip(r)
                    .fold(DVector::zeros(rows[0].len()), |a, (x, &w)| a + w * x)
                    / total;
                let cov = covariance(rows, r, &mean, total);
                to_component(total / n as f64, &mean, &cov)
            })
            .collect::<Result<_>>()?;
        if (ll - prev).abs() < TOL {
            break;
        }
        prev = ll;
    }
    Ok(comps)
}
