use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("rotation angle {angle} is too close to pi for a stable logarithm")]
    AngleNearPi { angle: f64 },
    #[error("pitch {pitch} is at gimbal lock")]
    GimbalLock { pitch: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CameraError {
    #[error("point at depth {z} is behind the camera")]
    BehindCamera { z: f64 },
    #[error("disparity {disparity} px is not above the minimum {min} px")]
    DisparityTooSmall { disparity: f64, min: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid configuration field `{field}`: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LabelingError {
    #[error("frame {frame} is not covered by both the tracklet and the label")]
    FrameNotCovered { frame: usize },
    #[error("tracklet and label share no consecutive covered frames")]
    NoOverlap,
    #[error("fewer than three co-visible tracklets")]
    InsufficientTracklets,
    #[error("degenerate minimal sample")]
    DegenerateSample,
    #[error("no motion survived sanitization")]
    NoModelsFound,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BatchError {
    #[error("reduced system is singular: {0}")]
    RankDeficient(String),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error("label has no usable frames")]
    EmptyProblem,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("only {available} overlapping frames, {needed} required for calibration")]
    InsufficientOverlap { needed: usize, available: usize },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Labeling(#[from] LabelingError),
    #[error(transparent)]
    Batch(#[from] BatchError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
