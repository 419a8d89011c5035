//! Cross-validated experiments and their on-disk artifacts.

mod commands;
mod config;
mod persist;
mod pipeline;
mod record;

pub use commands::{
    cmd_ablate_lambda, cmd_ablate_loss, cmd_compare_density, cmd_export_trajectory, cmd_run,
    prepare_all, run_prepared, DensityComparison, Estimator, TrajectoryExport, GRID_HI, GRID_LO,
    GRID_SIZE,
};
pub use config::{ClassifierSection, DatasetSource, FlowSection, Method, RunConfig};
pub use persist::{fold_dir, save_fold, write_counterfactuals_csv};
pub use pipeline::{prepare_fold, run_method, scaled_split, split_plan, FoldRun, PreparedFold, HOLDOUT_FRACTION};
pub use record::{aggregate, ExperimentRecord, FoldOutcome, Summary, AGGREGATED};
