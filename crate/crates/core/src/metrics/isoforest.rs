//! Isolation forest with the score reported as `0.5 - s`, so anomalies are
//! negative.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Average path length of an unsuccessful binary-search-tree lookup among
/// `n` points.
pub fn average_path_length(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let n = n as f64;
            2.0 * ((n - 1.0).ln() + EULER_GAMMA) - 2.0 * (n - 1.0) / n
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        size: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsolationTree {
    /// Node 0 is the root.
    pub nodes: Vec<Node>,
    /// Reference rows the tree was grown on.
    pub subsample: Vec<usize>,
}

impl IsolationTree {
    fn grow(data: &Tensor, idx: Vec<usize>, height_limit: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut tree = Self {
            nodes: Vec::new(),
            subsample: idx.clone(),
        };
        tree.build(data, idx, 0, height_limit, rng);
        tree
    }

    fn build(&mut self, data: &Tensor, idx: Vec<usize>, depth: usize, limit: usize, rng: &mut ChaCha8Rng) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { size: idx.len() });
        if depth >= limit || idx.len() <= 1 {
            return id;
        }
        let ranges: Vec<(usize, f64, f64)> = (0..data.cols())
            .filter_map(|j| {
                let (lo, hi) = idx.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                    let v = data.row(i)[j];
                    (lo.min(v), hi.max(v))
                });
                (hi > lo).then_some((j, lo, hi))
            })
            .collect();
        if ranges.is_empty() {
            return id;
        }
        let (feature, lo, hi) = ranges[rng.random_range(0..ranges.len())];
        let threshold = rng.random_range(lo..hi);
        let (l, r): (Vec<usize>, Vec<usize>) = idx.into_iter().partition(|&i| data.row(i)[feature] < threshold);
        let left = self.build(data, l, depth + 1, limit, rng);
        let right = self.build(data, r, depth + 1, limit, rng);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }

    /// Depth of the leaf reached by `x` plus the correction for its size.
    pub fn path_length(&self, x: &[f64]) -> f64 {
        let mut node = 0;
        let mut depth = 0.0;
        loop {
            match &self.nodes[node] {
                Node::Leaf { size } => return depth + average_path_length(*size),
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if x[*feature] < *threshold { *left } else { *right };
                    depth += 1.0;
                }
            }
        }
    }

    pub fn height(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsolationForestModel {
    pub trees: Vec<IsolationTree>,
    pub psi: usize,
}

impl IsolationForestModel {
    /// `T` trees, each grown on `min(ψ, n)` rows drawn without replacement
    /// and limited to height `ceil(log2 ψ)`.
    pub fn fit(reference: &Tensor, trees: usize, psi: usize, seed: u64) -> Result<Self> {
        let n = reference.rows();
        if n < 2 || trees < 1 || psi < 2 {
            return Err(Error::contract(format!(
                "isolation forest needs >= 2 points, >= 1 tree, psi >= 2 (got {n}, {trees}, {psi})"
            )));
        }
        let psi = psi.min(n);
        let limit = (psi as f64).log2().ceil() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trees = (0..trees)
            .map(|_| {
                let idx = sample(&mut rng, n, psi).into_vec();
                IsolationTree::grow(reference, idx, limit, &mut rng)
            })
            .collect();
        Ok(Self { trees, psi })
    }

    pub fn mean_path_length(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.path_length(x)).sum::<f64>() / self.trees.len() as f64
    }

    /// `0.5 - 2^(-E[h] / c(ψ))`, in `(-0.5, 0.5)`.
    pub fn score(&self, x: &[f64]) -> f64 {
        0.5 - 2f64.powf(-self.mean_path_length(x) / average_path_length(self.psi))
    }

    pub fn score_rows(&self, x: &Tensor) -> Vec<f64> {
        (0..x.rows()).map(|r| self.score(x.row(r))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_length_constants() {
        assert_eq!(average_path_length(1), 0.0);
        assert_eq!(average_path_length(2), 1.0);
        // 2 (ln 255 + γ) - 2·255/256
        assert!((average_path_length(256) - 10.244_770_920_116_851).abs() < 1e-9);
    }

    #[test]
    fn heights_are_limited() {
        let x = Tensor::from_rows(&(0..600).map(|i| vec![(i as f64).sin(), (i as f64 * 0.37).cos()]).collect::<Vec<_>>()).unwrap();
        let m = IsolationForestModel::fit(&x, 20, 256, 3).unwrap();
        assert!(m.trees.iter().all(|t| t.height() <= 8 && t.subsample.len() == 256));
    }

    #[test]
    fn too_small_reference() {
        assert!(IsolationForestModel::fit(&Tensor::zeros(&[1, 2]), 10, 256, 0).is_err());
    }
}
