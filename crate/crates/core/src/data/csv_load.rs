use std::collections::HashMap;
use std::path::Path;

use super::Dataset;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Result of reading a CSV file: the accepted rows plus the file line
/// numbers (header is line 1) of rows rejected for missing or non-numeric
/// features.
#[derive(Clone, Debug)]
pub struct CsvLoad {
    pub dataset: Dataset,
    pub rejected_rows: Vec<u64>,
    /// Original label strings, indexed by encoded label.
    pub label_names: Vec<String>,
}

/// Reads a headed, comma-separated file. Every column other than
/// `label_column` must be numeric; labels are encoded in order of first
/// appearance.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<CsvLoad> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())
        .map_err(|e| Error::Format(e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Format(e.to_string()))?
        .clone();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::contract(format!("no label column named {label_column:?}")))?;
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != label_idx)
        .map(|(_, h)| h.to_string())
        .collect();

    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut codes: HashMap<String, usize> = HashMap::new();
    let mut label_names = Vec::new();
    let mut rejected_rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Format(e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let mut row = Vec::with_capacity(feature_names.len());
        let mut ok = true;
        for (i, field) in record.iter().enumerate() {
            if i == label_idx {
                continue;
            }
            match field.parse::<f64>() {
                Ok(v) if v.is_finite() => row.push(v),
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        let label = record.get(label_idx).unwrap_or("");
        if !ok || label.is_empty() {
            rejected_rows.push(line);
            continue;
        }
        let next = codes.len();
        let code = *codes.entry(label.to_string()).or_insert_with(|| {
            label_names.push(label.to_string());
            next
        });
        data.extend(row);
        labels.push(code);
    }
    if !rejected_rows.is_empty() {
        log::warn!("rejected {} CSV rows: {:?}", rejected_rows.len(), rejected_rows);
    }
    let n = labels.len();
    let features = Tensor::matrix(n, feature_names.len(), data)?;
    let mut dataset = Dataset::new(features, labels, label_names.len())?;
    dataset.feature_names = feature_names;
    Ok(CsvLoad {
        dataset,
        rejected_rows,
        label_names,
    })
}
