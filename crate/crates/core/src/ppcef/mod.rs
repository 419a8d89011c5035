//! Counterfactual search: validity and plausibility hinges, the per-class
//! density threshold, and the batched optimizer over inputs.

mod generate;
mod losses;
pub mod optim;
mod threshold;
mod trajectory;

pub use generate::{
    default_targets, generate, wachter_generate, CfConfig, CfLosses, CfResult, TrajectoryPoint,
    ValidityLoss,
};
pub use losses::{
    cross_entropy_var, distance, distance_var, plausibility_hinge_var, plausibility_loss,
    validity_hinge_var, validity_loss_binary, validity_loss_multiclass, DistanceKind, L2_SMOOTHING,
};
pub use optim::{adam_step, AdamState};
pub use threshold::{compute_delta, median, DensityThreshold};
pub use trajectory::write_trajectory_csv;
