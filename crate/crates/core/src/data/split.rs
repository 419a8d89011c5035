use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

/// Disjoint test folds covering `0..n`; each fold's training set is the
/// complement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub folds: Vec<Vec<usize>>,
    pub n: usize,
    pub seed: u64,
}

impl SplitPlan {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    /// `(train, test)` indices for `fold`.
    pub fn train_test(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        let test = self.folds[fold].clone();
        let mut in_test = vec![false; self.n];
        for &i in &test {
            in_test[i] = true;
        }
        let train = (0..self.n).filter(|&i| !in_test[i]).collect();
        (train, test)
    }
}

fn shuffled_classes(data: &Dataset, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    (0..data.n_classes)
        .map(|c| {
            let mut idx = data.class_indices(c);
            idx.shuffle(rng);
            idx
        })
        .collect()
}

/// Stratified k-fold partition.
///
/// Members of each class are shuffled and dealt round-robin over the folds,
/// with the dealing position carried from one class to the next, so per-fold
/// class counts differ from proportionality by at most one and fold sizes by
/// at most one.
pub fn stratified_kfold(data: &Dataset, k: usize, seed: u64) -> Result<SplitPlan> {
    if k < 2 {
        return Err(Error::contract("stratified_kfold needs k >= 2"));
    }
    for (c, &count) in data.class_counts().iter().enumerate() {
        if count > 0 && count < k {
            return Err(Error::contract(format!(
                "class {c} has {count} members, fewer than {k} folds"
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut pos = 0;
    for idx in shuffled_classes(data, &mut rng) {
        for i in idx {
            folds[pos % k].push(i);
            pos += 1;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(SplitPlan {
        folds,
        n: data.len(),
        seed,
    })
}

/// Single stratified train/test split holding out `test_fraction` of each
/// class.
pub fn holdout_split(data: &Dataset, test_fraction: f64, seed: u64) -> Result<SplitPlan> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::contract("test fraction must lie in [0, 1)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test = Vec::new();
    for idx in shuffled_classes(data, &mut rng) {
        let take = ((idx.len() as f64) * test_fraction).round() as usize;
        test.extend_from_slice(&idx[..take.min(idx.len())]);
    }
    test.sort_unstable();
    Ok(SplitPlan {
        folds: vec![test],
        n: data.len(),
        seed,
    })
}

/// Downsamples every class, without replacement, to the minority count and
/// shuffles the result.
pub fn downsample_majority(data: &Dataset, seed: u64) -> Result<Dataset> {
    if data.n_classes < 2 {
        return Err(Error::contract("downsampling needs at least two classes"));
    }
    let counts = data.class_counts();
    let minority = counts.iter().copied().filter(|&c| c > 0).min().unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep: Vec<usize> = shuffled_classes(data, &mut rng)
        .into_iter()
        .flat_map(|idx| idx.into_iter().take(minority))
        .collect();
    keep.shuffle(&mut rng);
    Ok(data.subset(&keep))
}
