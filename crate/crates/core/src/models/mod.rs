//! Differentiable classifiers `p(y | x)`: logistic regression and a
//! three-layer perceptron.

mod classifier;
pub(crate) mod train;

pub use classifier::{train_classifier, Arch, Classifier, Dense};
pub use train::{Parametric, FLOW_INPUT_NOISE, TrainConfig, TrainReport};
