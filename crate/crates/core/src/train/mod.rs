//! Dataset building and behavior-cloning training.

pub mod dataset;
pub mod trainer;

pub use dataset::{build_dataset, build_raster_dataset, scripted_reference, BuildOptions, ProcessedDataset, ProcessedTrajectory, Provenance};
pub use trainer::{dataset_mse, smoothed, train, train_baseline, train_with, Adam, TrainConfig, TrainOutput, TrainSummary};
