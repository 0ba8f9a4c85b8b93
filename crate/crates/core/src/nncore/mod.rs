//! Minimal dense differentiable kernel: tensors, a reverse-mode tape, MLPs,
//! parameter storage and Adam.

mod adam;
mod mlp;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use mlp::{bias_name, mlp_forward, weight_name, Activation, MlpSpec, MlpTrace};
pub use params::{init_params, param_rng, path_hash, Param, ParamKind, ParamStore};
pub use tape::{segment_softmax_values, Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("loss node is not on this tape")]
    GraphNotRecorded,
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("unknown parameter {0}")]
    UnknownParam(String),
    #[error("parameter {0} registered twice")]
    DuplicateParam(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("invalid MLP spec: {0}")]
    InvalidSpec(String),
}
