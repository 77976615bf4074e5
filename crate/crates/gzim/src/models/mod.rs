//! Driver and gaze-predictor networks.
//!
//! Both networks are expressed as flat lists of named parameter tensors plus
//! a config describing how [`crate::numerics::Graph`] ops are wired together
//! on each forward pass. The driver is a PilotNet-style regression network
//! with four interchangeable gaze-integration modes; the gaze predictor is a
//! small encoder-decoder emitting a frame-wide softmax heatmap.

mod checkpoint;
mod config;
mod driver;
mod gaze_net;

pub use checkpoint::{
    load_driver, load_gaze_predictor, save_driver, save_gaze_predictor, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use config::{ConvSpec, GazeLossMode, GazePredictorConfig, IntegrationMode, ModelConfig};
pub use driver::{
    build_pilotnet, driver_graph, forward_driver, preprocess_gaze_as_input, train_driver,
    DriverSample, TrainParams,
};
pub use gaze_net::{
    build_discriminator, build_gaze_predictor, discriminator_logit, gaze_graph, predict_gaze,
    train_gaze_adversarial, train_gaze_supervised, AdversarialReport, DiscriminatorConfig,
    GazeSample,
};

use crate::gazemap::GazeMapError;
use crate::numerics::{NumericsError, Tensor};
use serde::{de::DeserializeOwned, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("integration mode requires a gaze map but none was provided")]
    MissingGaze,
    #[error("input has {got} values, expected {expected}")]
    InputSize { expected: usize, got: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("checkpoint magic bytes do not match")]
    CheckpointBadMagic,
    #[error("checkpoint format version {0} is not supported")]
    CheckpointVersion(u32),
    #[error("checkpoint file ended prematurely")]
    CheckpointTruncated,
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Gaze(#[from] GazeMapError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint config is not valid JSON: {0}")]
    BadConfigJson(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// A network: config plus named parameters in forward-pass order.
#[derive(Debug, Clone)]
pub struct Model<C> {
    pub config: C,
    pub params: Vec<(String, Tensor)>,
    /// Mean loss per completed training epoch.
    pub training_history: Vec<f64>,
}

impl<C: Serialize + DeserializeOwned + Clone> Model<C> {
    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn param_tensors(&self) -> Vec<Tensor> {
        self.params.iter().map(|(_, t)| t.clone()).collect()
    }

    pub fn set_params(&mut self, tensors: &[Tensor]) {
        assert_eq!(tensors.len(), self.params.len());
        for ((_, dst), src) in self.params.iter_mut().zip(tensors) {
            dst.data = src.data.clone();
        }
    }

    pub fn n_scalars(&self) -> usize {
        self.params.iter().map(|(_, t)| t.data.len()).sum()
    }
}
