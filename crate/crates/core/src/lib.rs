//! Core library for a small video-prediction lab: tensors with reverse-mode
//! autodiff, the model family (feed-forward, deterministic recurrent, and
//! stochastic latent-variable predictors), synthetic datasets, training, and
//! the evaluation harness.

pub mod data;
pub mod error;
pub mod io;
pub mod layers;
pub mod metrics;
pub mod models;
pub mod objective;
pub mod rng;
pub mod tensor;

pub use data::{ActionSequence, DataKind, DatasetSpec, Split, VideoBatch};
pub use error::{Error, Result};
pub use metrics::{
    evaluate_trajectories, MetricReport, ProbeNetworks, TrajectorySet,
};
pub use models::rollout::{sample_rollout, train_rollout, RolloutOutput};
pub use models::{build_model, ModelConfig, ModelKind, ParameterStore};
pub use objective::{train, TrainConfig, TrainOutcome};
pub use rng::SeededRng;
pub use tensor::graph::{concat_channels, Gradients, Var};
pub use tensor::Tensor;
