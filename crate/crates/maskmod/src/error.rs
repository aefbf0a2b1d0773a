//! Crate-wide error type.

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Two shapes that must agree do not, inside the named operation.
    #[error("shape mismatch in `{op}`: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: String,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A tensor construction or operation argument is invalid.
    #[error("invalid argument to `{op}`: {msg}")]
    InvalidArgument { op: String, msg: String },

    /// `backward` was called on a tensor that is not a scalar.
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    /// `backward` was called on a tensor that does not require gradients.
    #[error("backward requires a loss with requires_grad = true")]
    LossWithoutGrad,

    /// Convolution/pooling geometry does not produce integral output extents.
    #[error("invalid geometry in `{op}`: {msg}")]
    BadGeometry { op: String, msg: String },

    /// Batch statistics would be computed over fewer than two elements.
    #[error("batchnorm training mode needs at least 2 elements per channel, got {count}")]
    DegenerateBatchStats { count: usize },

    /// A class label lies outside the valid range.
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    /// k parameters are inconsistent with the requested transform variant.
    #[error("invalid k parameters for variant {variant}: {msg}")]
    InvalidKParams { variant: String, msg: String },

    /// A task parameter set does not line up with the architecture.
    #[error("layer `{layer}` mismatch: {msg}")]
    LayerMismatch { layer: String, msg: String },

    /// Checkpoint file does not start with the container magic.
    #[error("bad checkpoint magic: expected \"MTMK\", got {found:?}")]
    BadMagic { found: [u8; 4] },

    /// Checkpoint version is not supported.
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    BadVersion { found: u16, expected: u16 },

    /// Checkpoint kind byte does not match what the caller asked for.
    #[error("checkpoint kind {found} does not match expected kind {expected}")]
    WrongKind { found: u8, expected: u8 },

    /// File ended before the record being parsed was complete.
    #[error("truncated checkpoint: {msg}")]
    Truncated { msg: String },

    /// Stored digest does not match the digest of the file contents.
    #[error("content digest mismatch: {msg}")]
    DigestMismatch { msg: String },

    /// The frozen baseline changed while it was supposed to be immutable.
    #[error("baseline parameters were modified: {msg}")]
    BaselineModified { msg: String },

    /// Training produced a non-finite loss.
    #[error("training diverged (non-finite loss) at epoch {epoch}, batch {batch}; adam_lr={adam_lr}, sgd_lr={sgd_lr}")]
    TrainingDiverged {
        epoch: usize,
        batch: usize,
        adam_lr: f64,
        sgd_lr: f64,
    },

    /// Evaluation over an empty dataset.
    #[error("cannot evaluate an empty dataset")]
    EmptyDataset,

    /// A decathlon score was requested for a task with no configured baseline error.
    #[error("missing task `{task}` in {what}")]
    MissingTask { task: String, what: String },

    /// IDX file problems that are not plain truncation.
    #[error("bad IDX file `{path}`: {msg}")]
    BadIdx { path: String, msg: String },

    /// Configuration file problems.
    #[error("bad config: {msg}")]
    BadConfig { msg: String },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(op: &str, msg: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op: op.to_string(),
            msg: msg.into(),
        }
    }

    pub fn shape_mismatch(op: &str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::ShapeMismatch {
            op: op.to_string(),
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
