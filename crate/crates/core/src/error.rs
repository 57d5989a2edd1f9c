use std::io;

use thiserror::Error;

use crate::taxonomy::NodeId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    // taxonomy
    #[error("taxonomy has no edges")]
    EmptyTaxonomy,
    #[error("cycle detected through nodes {0:?}")]
    CycleDetected(Vec<u64>),
    #[error("taxonomy has multiple roots: {0:?}")]
    MultipleRoots(Vec<u64>),
    #[error("dangling reference to node {0}")]
    DanglingReference(u64),
    #[error("unknown node {0:?}")]
    UnknownNode(NodeId),
    #[error("node {0:?} is not a super class")]
    NotASuperClass(NodeId),
    #[error("node {0:?} is not a known leaf")]
    NotALeaf(NodeId),
    #[error("the root cannot be removed")]
    CannotRemoveRoot,
    #[error("relabeling rate {0} outside [0, 1]")]
    InvalidRate(f64),

    // numerics and training
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("probability vector does not sum to one (sum = {0})")]
    NotADistribution(f64),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("training set is empty")]
    EmptyData,

    // top-down
    #[error("super class {super_class:?} has no training data under child {child:?}")]
    EmptyChildData { super_class: NodeId, child: NodeId },
    #[error("no validation data for super class {0:?}")]
    NoValidationData(NodeId),
    #[error("candidate grid is empty")]
    EmptyGrid,

    // flatten
    #[error("model was trained on a different taxonomy")]
    TaxonomyMismatch,

    // evaluation
    #[error("sample {0} has no ground truth")]
    MissingGroundTruth(u64),
    #[error("target known accuracy {0} is outside the curve")]
    TargetOutOfRange(f64),
    #[error("class {0} has no test samples")]
    EmptyClass(u64),

    // gzsl
    #[error("unseen class {0} is not attached to a known super class")]
    UnattachedClass(u64),
    #[error("node {0} is disconnected from the taxonomy")]
    DisconnectedNode(u64),
    #[error("score tables are misaligned: {0}")]
    Misalignment(String),

    // data io
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("file is truncated")]
    TruncatedFile,
    #[error("unsupported format version {0}")]
    VersionMismatch(u32),
    #[error("degenerate synthetic spec: {0}")]
    DegenerateSpec(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("duplicate sample id {0}")]
    DuplicateSample(u64),

    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("serialization: {0}")]
    Serialization(#[from] bincode::Error),
}
