pub mod adaptive;
pub mod boosting;
pub mod data;
pub mod error;
pub mod eval;
pub mod learners;
pub mod parallel;
pub mod persist;
pub mod points;
pub mod random;
pub mod regions;
pub mod rotation;
pub mod transform;

pub use adaptive::{fit_abht, AbhtConfig, AbhtModel, RegionSpec, StageRecord, StopReason};
pub use boosting::{fit_bht, BhtModel, BhtParams, RejectPolicy};
pub use data::{LabeledDataset, ScaleParams, SplitSpec};
pub use error::{Error, Result};
pub use eval::{run_experiment, ExperimentConfig, ExperimentReport, FittedModel, Method};
pub use learners::{BaseLearner, BaseSpec, BinaryHistRegressor, BinaryPartition, HtRegressor};
pub use parallel::{fit_peht, fit_peht_mixed, PehtModel};
pub use persist::{load_model, save_model, SavedModel};
pub use points::Rows;
pub use random::RngStream;
pub use rotation::RotationMatrix;
pub use transform::{BinKey, HistogramTransform};
