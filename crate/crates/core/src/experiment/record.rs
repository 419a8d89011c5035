use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::Method;
use crate::error::Result;
use crate::metrics::EvaluationReport;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldOutcome {
    pub fold: usize,
    pub report: Option<EvaluationReport>,
    pub error: Option<String>,
}

/// Mean and population standard deviation over the folds that reported a
/// value; `std` is `None` for a single fold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: Option<f64>,
    pub n: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.len() > 1)
            .then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt());
        Some(Self {
            mean,
            std,
            n: values.len(),
        })
    }
}

type Field = fn(&EvaluationReport) -> Option<f64>;

pub const AGGREGATED: [(&str, Field); 9] = [
    ("coverage", |r| Some(r.coverage)),
    ("validity", |r| Some(r.validity)),
    ("prob_plausibility", |r| Some(r.prob_plausibility)),
    ("l1_mean", |r| r.l1_mean),
    ("l2_mean", |r| r.l2_mean),
    ("log_density_mean", |r| r.log_density_mean),
    ("lof_mean", |r| r.lof_mean),
    ("isoforest_mean", |r| r.isoforest_mean),
    ("wall_time_secs", |r| Some(r.wall_time_secs)),
];

pub fn aggregate<'a>(reports: impl IntoIterator<Item = &'a EvaluationReport> + Clone) -> BTreeMap<String, Summary> {
    AGGREGATED
        .iter()
        .filter_map(|(name, field)| {
            let values: Vec<f64> = reports.clone().into_iter().filter_map(field).collect();
            Summary::of(&values).map(|s| (name.to_string(), s))
        })
        .collect()
}

/// Top-level `report.json` of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub dataset: String,
    pub method: Method,
    pub config_hash: String,
    pub versions: BTreeMap<String, String>,
    pub folds: Vec<FoldOutcome>,
    pub aggregate: BTreeMap<String, Summary>,
}

impl ExperimentRecord {
    pub fn new(dataset: String, method: Method, config_hash: String, folds: Vec<FoldOutcome>) -> Self {
        let aggregate = aggregate(folds.iter().filter_map(|f| f.report.as_ref()));
        let versions = BTreeMap::from([(
            env!("CARGO_PKG_NAME").to_string(),
            env!("CARGO_PKG_VERSION").to_string(),
        )]);
        Self {
            dataset,
            method,
            config_hash,
            versions,
            folds,
            aggregate,
        }
    }

    pub fn reports(&self) -> impl Iterator<Item = &EvaluationReport> {
        self.folds.iter().filter_map(|f| f.report.as_ref())
    }

    pub fn mean(&self, metric: &str) -> Option<f64> {
        self.aggregate.get(metric).map(|s| s.mean)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
