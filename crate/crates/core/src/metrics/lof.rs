//! Local outlier factor in novelty mode: queries are scored against a fixed
//! reference set.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Reported in place of an infinite factor.
pub const LOF_SENTINEL: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LofScore {
    pub value: f64,
    /// True when the factor was infinite and replaced by [`LOF_SENTINEL`].
    pub saturated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LofModel {
    pub reference: Tensor,
    pub k: usize,
    k_distance: Vec<f64>,
    lrd: Vec<f64>,
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// The `k` nearest reference rows to `q` as `(distance, index)`, ties broken
/// by index, optionally skipping one index.
fn knn(reference: &Tensor, q: &[f64], k: usize, skip: Option<usize>) -> Vec<(f64, usize)> {
    let mut d: Vec<(f64, usize)> = (0..reference.rows())
        .filter(|&i| Some(i) != skip)
        .map(|i| (euclid(reference.row(i), q), i))
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d.truncate(k);
    d
}

impl LofModel {
    pub fn fit(reference: &Tensor, k: usize) -> Result<Self> {
        let n = reference.rows();
        if k < 1 || n <= k {
            return Err(Error::contract(format!(
                "LOF needs 1 <= k < reference size, got k={k} with {n} points"
            )));
        }
        let neighbors: Vec<Vec<(f64, usize)>> = (0..n)
            .map(|i| knn(reference, reference.row(i), k, Some(i)))
            .collect();
        let k_distance: Vec<f64> = neighbors.iter().map(|nb| nb[k - 1].0).collect();
        let lrd = neighbors
            .iter()
            .map(|nb| local_density(nb, &k_distance))
            .collect();
        Ok(Self {
            reference: reference.clone(),
            k,
            k_distance,
            lrd,
        })
    }

    fn factor(&self, neighbors: &[(f64, usize)]) -> LofScore {
        let own = local_density(neighbors, &self.k_distance);
        let mean_nb = neighbors.iter().map(|&(_, b)| self.lrd[b]).sum::<f64>() / neighbors.len() as f64;
        let value = if own.is_infinite() && mean_nb.is_infinite() {
            1.0
        } else {
            mean_nb / own
        };
        if value.is_infinite() {
            LofScore {
                value: LOF_SENTINEL,
                saturated: true,
            }
        } else {
            LofScore {
                value,
                saturated: false,
            }
        }
    }

    pub fn score(&self, x: &[f64]) -> LofScore {
        self.factor(&knn(&self.reference, x, self.k, None))
    }

    pub fn score_rows(&self, x: &Tensor) -> Vec<LofScore> {
        (0..x.rows()).map(|r| self.score(x.row(r))).collect()
    }

    /// Factors of the reference points themselves, each excluding itself
    /// from its neighborhood.
    pub fn training_scores(&self) -> Vec<LofScore> {
        (0..self.reference.rows())
            .map(|i| self.factor(&knn(&self.reference, self.reference.row(i), self.k, Some(i))))
            .collect()
    }
}

/// `1 / mean reach-dist`; infinite when every reachability distance is 0.
fn local_density(neighbors: &[(f64, usize)], k_distance: &[f64]) -> f64 {
    let reach: f64 = neighbors.iter().map(|&(d, b)| d.max(k_distance[b])).sum::<f64>()
        / neighbors.len() as f64;
    1.0 / reach
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(side: usize) -> Tensor {
        let mut rows = Vec::new();
        for i in 0..side {
            for j in 0..side {
                rows.push(vec![i as f64, j as f64]);
            }
        }
        Tensor::from_rows(&rows).unwrap()
    }

    #[test]
    fn grid_center_and_far_point() {
        let m = LofModel::fit(&grid(10), 20).unwrap();
        let c = m.score(&[4.5, 4.5]);
        assert!((0.9..=1.1).contains(&c.value), "{c:?}");
        let far = m.score(&[104.5, 4.5]);
        assert!(far.value > 5.0);
    }

    #[test]
    fn duplicates_saturate() {
        let pts = Tensor::from_rows(&vec![vec![1.0, 1.0]; 5]).unwrap();
        let m = LofModel::fit(&pts, 2).unwrap();
        let s = m.score(&[2.0, 1.0]);
        assert!(s.saturated && s.value == LOF_SENTINEL);
        assert_eq!(m.score(&[1.0, 1.0]).value, 1.0);
    }

    #[test]
    fn k_must_be_below_reference_size() {
        assert!(LofModel::fit(&grid(2), 4).is_err());
        assert!(LofModel::fit(&grid(2), 0).is_err());
    }
}
