//! Data, training, evaluation and experiment plumbing around the
//! classifier.

pub mod ablation;
pub mod config;
pub mod dataset;
pub mod synthetic;
pub mod train;

pub use ablation::{ablation_grid, parse_grid, AblationRow, AblationTable, GridEntry};
pub use config::{DataSource, OptimizerName, RunConfig};
pub use dataset::{load_dataset, save_dataset, Dataset, LabeledCloud, Split, SplitKind};
pub use synthetic::{generate_synthetic, SyntheticSpec};
pub use train::{
    epoch_order, evaluate, metrics_from_predictions, prepare_dataset, train, EpochMetrics, Evaluation, TrainOutcome,
    METRICS_HEADER,
};
