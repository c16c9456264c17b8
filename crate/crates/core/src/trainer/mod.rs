//! Table-style metrics, the minibatch training loop and evaluation reports.

mod eval;
mod metrics;
mod train;

pub use eval::{evaluate, ConstantPredictor, MetricReport, Predictor, SynthOracle};
pub use metrics::{anisotropy_invariant, Metric, MetricValues};
pub use train::{batch_gradient, per_atom_scale, predict_prepared, train, EpochRecord, TrainConfig, TrainOutcome};

use thiserror::Error;

use crate::diffengine::DiffError;
use crate::molgraph::MolError;
use crate::svtnet::SvtError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] SvtError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Mol(#[from] MolError),
    #[error("molecule `{0}` has no polarizability label")]
    MissingLabel(String),
    #[error("no molecules to train or evaluate on")]
    EmptyDataset,
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("non-finite gradient for `{param}` at epoch {epoch}, batch {batch}")]
    NonFiniteGradient { epoch: usize, batch: usize, param: String },
    #[error("invalid training config: {0}")]
    Config(String),
}
