//! Reverse-mode differentiation, parameter storage, the two-layer MLP
//! block, Adam and checkpoints.

mod adam;
mod checkpoint;
mod mlp;
mod params;
mod tape;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, OptimizerRecord, MAGIC, VERSION};
pub use mlp::{init_mlp, mlp_forward, mlp_tail, Activation, MlpSpec};
pub use params::{glorot_bound, Param, ParamStore};
pub use tape::{logistic, Gradients, Shape, Tape, Var};

#[derive(Debug, thiserror::Error)]
pub enum DiffError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape { op: &'static str, left: (usize, usize), right: (usize, usize) },
    #[error("backward needs a 1x1 loss, got {0:?}")]
    NotScalar((usize, usize)),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),
    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("i/o error on {path}")]
    Io { path: String, source: std::io::Error },
}

#[cfg(test)]
mod tests;
