//! Graph collaborative filtering with prediction-confidence diagnostics.
//!
//! The pipeline: load interactions ([`dataset`]), split them per user,
//! build the bipartite training graph ([`graph`]), train linear propagated
//! embeddings with a BPR objective plus a penalty on confident negatives
//! ([`train`]), then score users ([`model`]), optionally compress
//! overconfident ratings ([`calibration`]) and measure top-N quality and
//! reliability ([`metrics`], [`eval`]).

pub mod calibration;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod graph;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod par;
pub mod rng;
pub mod synth;
pub mod train;

pub use calibration::{calibrate_rating, calibrate_sheet, user_mean, CalibrationParams, MeanMode};
pub use checkpoint::Checkpoint;
pub use dataset::{apportion, Bucket, RawDataset, SplitDataset};
pub use error::{Error, Result};
pub use graph::{InteractionGraph, NormalizedAdjacency};
pub use matrix::Matrix;
pub use metrics::{
    accuracy_at_n, precision_at_n, reliability, ReliabilityMode, ReliabilityReport, TopKResult,
};
pub use model::{normalize_scores, propagate, EmbeddingState, ScoreSheet};
pub use train::{bpr_loss, conf_loss, sample_batch, TrainBatch, TrainConfig, Trainer};
