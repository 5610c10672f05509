//! Datasets, graph builders and the training and evaluation loops.

pub mod build;
pub mod data;
pub mod train;

pub use build::{build_constellation, build_sphira, ConstellationConfig, SphiraConfig, Task};
pub use data::{load_csv, CsvLayout, Dataset, Example};
pub use train::{
    evaluate, evaluate_sequential, prepare, train, DataKind, MetricRow, Outcome, Provisioning, TrainConfig,
};
#[cfg(feature = "parallel")]
pub use train::evaluate_parallel;
