//! Dataset synthesis, CSV ingestion, preprocessing and stratified splitting.

mod csv_load;
mod dataset;
mod scaler;
mod split;
mod synth;

pub use csv_load::{load_csv, CsvLoad};
pub use dataset::Dataset;
pub use scaler::MinMaxScaler;
pub use split::{downsample_majority, holdout_split, stratified_kfold, SplitPlan};
pub use synth::{blob_centers, make_blobs, make_moons};
