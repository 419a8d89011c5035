use serde::{Deserialize, Serialize};

use super::MinMaxScaler;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Labelled feature matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    /// `(N, d)` row-major features.
    pub features: Tensor,
    /// Integer labels in `0..n_classes`.
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub feature_names: Vec<String>,
    /// Scaler the features were normalized with, if any.
    pub scaler: Option<MinMaxScaler>,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if features.rank() != 2 {
            return Err(Error::contract("dataset features must be a matrix"));
        }
        if features.rows() != labels.len() {
            return Err(Error::Dimension {
                op: "dataset",
                lhs: features.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(Error::contract(format!(
                "label {bad} outside 0..{n_classes}"
            )));
        }
        let feature_names = (0..features.cols()).map(|j| format!("x{j}")).collect();
        Ok(Self {
            features,
            labels,
            n_classes,
            feature_names,
            scaler: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    pub fn class_indices(&self, class: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == class).collect()
    }

    /// Rows `idx`, in the given order. Class count and scaler carry over.
    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
            feature_names: self.feature_names.clone(),
            scaler: self.scaler.clone(),
        }
    }

    /// Copy with features passed through `scaler`.
    pub fn scaled(&self, scaler: &MinMaxScaler) -> Result<Self> {
        let mut out = self.clone();
        out.features = scaler.transform(&self.features)?;
        out.scaler = Some(scaler.clone());
        Ok(out)
    }
}
