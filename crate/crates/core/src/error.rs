use alloc::string::String;
use alloc::vec::Vec;

use crate::frame::PrivacyLevel;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("backward root must be scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("zero output dimension requested")]
    ZeroDimension,
    #[error("frame data must be normalized before {0}")]
    NotNormalized(&'static str),
    #[error("frame has no depth range")]
    MissingDepthRange,
    #[error("privacy violation: {width}x{height} frame is {level:?}, policy requires {required:?}")]
    PrivacyViolation {
        width: usize,
        height: usize,
        level: PrivacyLevel,
        required: PrivacyLevel,
    },
    #[error("private-provenance data rejected: super-resolution training data must be disjoint from the deployment dataset")]
    PrivateProvenance,
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("class {0} has no samples")]
    EmptyClass(usize),
    #[error("empty {0} split")]
    EmptySplit(&'static str),
    #[error("AUC undefined: scores cover a single class")]
    UndefinedAuc,
    #[error("{width}x{height} input at scale {scale} exceeds maximum output side {max}")]
    DimensionOverflow {
        width: usize,
        height: usize,
        scale: usize,
        max: usize,
    },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("unknown parameter {0}")]
    UnknownParameter(String),
}

pub(crate) fn shape_err(op: &'static str, detail: String) -> Error {
    Error::Shape { op, detail }
}
