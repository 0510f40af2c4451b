use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid embedding: {0}")]
    InvalidEmbedding(String),
    #[error("corrupt template: {0}")]
    CorruptTemplate(String),
    #[error("truncated template: {len} bytes, need at least 4")]
    TruncatedTemplate { len: usize },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("zero-norm vector cannot be normalized")]
    ZeroNorm,
    #[error("fusion weight {0} outside [0, 1]")]
    InvalidWeight(f64),
    #[error("score {0} outside [0, 1]")]
    InvalidScore(f64),
    #[error("invalid search policy: {0}")]
    InvalidPolicy(String),
    #[error("empty gallery")]
    EmptyGallery,
    #[error("invalid subject id: {0}")]
    InvalidSubjectId(String),
    #[error("unknown subject: {0}")]
    UnknownSubject(String),
    #[error("corrupt gallery: {0}")]
    CorruptGallery(String),
    #[error("truncated gallery file")]
    TruncatedGallery,
    #[error("empty score set")]
    EmptyScoreSet,
    #[error("no mated trials")]
    NoMatedTrials,
    #[error("insufficient trials: {0}")]
    InsufficientTrials(String),
    #[error("rejection fraction {0} removes every probe")]
    AllRejected(f64),
    #[error("no reducer model for dimension {0}")]
    MissingModel(usize),
    #[error("quality values from different methods cannot be mixed")]
    MixedQualityMethods,
    #[error("rejection fraction {0} outside [0, 1)")]
    InvalidFraction(f64),
    #[error("image {width}x{height} too small for quality estimation")]
    RoiTooSmall { width: usize, height: usize },
    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize },
    #[error("corrupt reducer model: {0}")]
    CorruptModel(String),
    #[error("invalid training configuration: {0}")]
    InvalidTrainConfig(String),
    #[error("degenerate keypoint configuration: {0}")]
    DegenerateKeypoints(String),
    #[error("homography is not invertible")]
    SingularHomography,
    #[error("degenerate control points: {0}")]
    DegenerateControlPoints(String),
    #[error("patch size {0} does not divide 224")]
    BadPatchSize(usize),
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("invalid degradation spec: {0}")]
    InvalidSpec(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}
