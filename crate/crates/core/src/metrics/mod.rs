//! Evaluation of counterfactual batches: coverage, validity, plausibility,
//! distances, log-density, LOF and isolation-forest scores.

mod isoforest;
mod lof;
mod report;

pub use isoforest::{average_path_length, IsolationForestModel, IsolationTree, Node};
pub use lof::{LofModel, LofScore, LOF_SENTINEL};
pub use report::{
    coverage, evaluate, log_density_mean, prob_plausibility, validity, EvaluationReport,
    OutlierModels, ISOFOREST_PSI, ISOFOREST_TREES, LOF_K,
};
