//! Spatiotemporal vision transformer forecaster: three parallel attention
//! streams (spatial, temporal per pixel, temporal meteo), additive fusion and
//! a per-cell linear head, trained with masked MSE and Adam.

mod checkpoint;
pub mod kernel;
pub mod layers;
mod model;
mod params;
mod predict;
mod train;

use thiserror::Error;

use crate::dataset::DatasetError;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CheckpointHeader,
    CHECKPOINT_MAGIC,
};
pub use model::{batch_sse, forward, loss_and_grad};
pub use params::{init_params, Attention, Block, Precision, StVitConfig, StVitParams, CELL_FEATURES};
pub use predict::{persistence_baseline, predict_region, Bbox, RegionForecast, PERSISTENCE_PERIOD};
pub use train::{
    evaluate_loss, train, train_with, Adam, CroppedWindows, EpochRecord, SampleSource, StopReason, TrainOptions,
    TrainReport,
};

#[derive(Debug, Error)]
pub enum StVitError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("batch is empty or fully masked")]
    EmptyBatch,
    #[error("training and validation sets must be non-empty")]
    EmptySplit,
    #[error("non-finite loss at batch item {item}")]
    NonFiniteLoss { item: usize },
    #[error("training diverged at epoch {epoch}, batch {batch}")]
    Diverged {
        epoch: usize,
        batch: usize,
        report: Box<TrainReport>,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(String),
    #[error("region: {0}")]
    Region(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}
