use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Dataset;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

fn linspace(n: usize, hi: f64) -> impl Iterator<Item = f64> {
    let step = if n > 1 { hi / (n - 1) as f64 } else { 0.0 };
    (0..n).map(move |i| i as f64 * step)
}

fn shuffled(mut rows: Vec<(Vec<f64>, usize)>, rng: &mut ChaCha8Rng, classes: usize) -> Result<Dataset> {
    rows.shuffle(rng);
    let d = rows.first().map_or(0, |r| r.0.len());
    let labels = rows.iter().map(|r| r.1).collect();
    let data = rows.into_iter().flat_map(|r| r.0).collect::<Vec<_>>();
    let n = data.len() / d.max(1);
    Dataset::new(Tensor::matrix(n, d, data)?, labels, classes)
}

/// Two interleaving half circles.
///
/// Class 0 follows `(cos t, sin t)` and class 1 `(1 - cos t, 0.5 - sin t)`
/// for evenly spaced `t ∈ [0, π]`; isotropic Gaussian noise of standard
/// deviation `noise` is added to every coordinate and the rows are shuffled.
pub fn make_moons(n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::contract("make_moons needs n >= 2"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, noise.max(0.0)).map_err(|e| Error::contract(e.to_string()))?;
    let n_upper = n / 2;
    let n_lower = n - n_upper;
    let mut rows = Vec::with_capacity(n);
    for t in linspace(n_upper, PI) {
        rows.push((vec![t.cos(), t.sin()], 0));
    }
    for t in linspace(n_lower, PI) {
        rows.push((vec![1.0 - t.cos(), 0.5 - t.sin()], 1));
    }
    if noise > 0.0 {
        for (x, _) in &mut rows {
            for v in x.iter_mut() {
                *v += jitter.sample(&mut rng);
            }
        }
    }
    shuffled(rows, &mut rng, 2)
}

/// Default layout for `k` blob centers: a regular polygon with adjacent
/// centers 9 units apart.
pub fn blob_centers(k: usize) -> Vec<[f64; 2]> {
    let radius = 4.5 / (PI / k as f64).sin();
    (0..k)
        .map(|i| {
            let a = PI / 2.0 + 2.0 * PI * i as f64 / k as f64;
            [radius * a.cos(), radius * a.sin()]
        })
        .collect()
}

/// Equal-size isotropic Gaussian clusters around [`blob_centers`].
pub fn make_blobs(n: usize, centers: usize, std: f64, seed: u64) -> Result<Dataset> {
    if centers < 2 {
        return Err(Error::contract("make_blobs needs at least two centers"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, std.max(0.0)).map_err(|e| Error::contract(e.to_string()))?;
    let mut rows = Vec::with_capacity(n);
    for (c, center) in blob_centers(centers).into_iter().enumerate() {
        let count = n / centers + usize::from(c < n % centers);
        for _ in 0..count {
            let p = center
                .iter()
                .map(|&m| if std > 0.0 { m + noise.sample(&mut rng) } else { m })
                .collect();
            rows.push((p, c));
        }
    }
    shuffled(rows, &mut rng, centers)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moons_shape_and_balance() {
        let ds = make_moons(1024, 0.01, 0).unwrap();
        assert_eq!(ds.len(), 1024);
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.n_classes, 2);
        assert_eq!(ds.class_counts(), vec![512, 512]);
    }

    #[test]
    fn noiseless_upper_moon_on_unit_circle() {
        let ds = make_moons(200, 0.0, 3).unwrap();
        for i in ds.class_indices(0) {
            let r = ds.features.row(i);
            assert!((r[0].hypot(r[1]) - 1.0).abs() < 1e-12);
            assert!(r[1] >= 0.0);
        }
    }

    #[test]
    fn moons_are_seed_deterministic() {
        assert_eq!(make_moons(300, 0.1, 42).unwrap(), make_moons(300, 0.1, 42).unwrap());
        assert_ne!(make_moons(300, 0.1, 42).unwrap(), make_moons(300, 0.1, 43).unwrap());
    }

    #[test]
    fn blobs_shape() {
        let ds = make_blobs(1500, 3, 1.0, 0).unwrap();
        assert_eq!(ds.len(), 1500);
        assert_eq!(ds.class_counts(), vec![500, 500, 500]);
    }

    #[test]
    fn zero_std_blobs_sit_on_centers() {
        let ds = make_blobs(30, 3, 0.0, 1).unwrap();
        let centers = blob_centers(3);
        for i in 0..ds.len() {
            let c = centers[ds.labels[i]];
            assert_eq!(ds.features.row(i), &c);
        }
    }

    #[test]
    fn blob_centers_are_well_separated() {
        for k in 2..6 {
            let c = blob_centers(k);
            for a in 0..k {
                for b in a + 1..k {
                    let d = (c[a][0] - c[b][0]).hypot(c[a][1] - c[b][1]);
                    assert!(d >= 6.0, "k={k}: {d}");
                }
            }
        }
    }

    #[test]
    fn blob_std_matches_request() {
        let std = 1.3;
        let ds = make_blobs(1500, 3, std, 11).unwrap();
        let centers = blob_centers(3);
        for c in 0..3 {
            let idx = ds.class_indices(c);
            for j in 0..2 {
                let mean = idx.iter().map(|&i| ds.features.row(i)[j]).sum::<f64>() / idx.len() as f64;
                let var = idx
                    .iter()
                    .map(|&i| (ds.features.row(i)[j] - mean).powi(2))
                    .sum::<f64>()
                    / (idx.len() - 1) as f64;
                assert!((var.sqrt() / std - 1.0).abs() < 0.1);
                assert!((mean - centers[c][j]).abs() < 0.2);
            }
        }
    }
}
