use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("invalid value for `{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum GeometryError {
    #[error("rotation angle is at the branch cut (pi)")]
    AngleAtCut,
    #[error("point is behind the camera")]
    BehindCamera,
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum AlignError {
    #[error("degenerate regression: normal matrix determinant {determinant:e}")]
    DegenerateRegression { determinant: f64 },
    #[error("solved scale {scale} is not positive")]
    NonPositiveScale { scale: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum FilterError {
    #[error("mean of the filtered variance is zero")]
    ZeroMeanVariance,
    #[error("variance map has no valid pixel")]
    NoValidPixel,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DensifyError {
    #[error("non-finite energy at iteration {iteration} (e_cnn_grad={e_cnn_grad}, e_semi_dense={e_semi_dense})")]
    NonFiniteEnergy {
        iteration: usize,
        e_cnn_grad: f64,
        e_semi_dense: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PoseError {
    #[error("pixel ({x}, {y}) is kept but has no source variance")]
    MissingVariance { x: usize, y: usize },
    #[error("only {usable} usable residuals, need {required}")]
    InsufficientOverlap { usable: usize, required: usize },
    #[error("alignment diverged after {iterations} iterations")]
    Diverged { iterations: usize },
    #[error("pose graph is disconnected")]
    DisconnectedGraph,
    #[error("unknown keyframe id {0}")]
    UnknownNode(u32),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("no pixel is valid in both maps")]
    NoOverlap,
    #[error("dimension mismatch: {0:?} vs {1:?}")]
    DimensionMismatch((usize, usize), (usize, usize)),
    #[error("degenerate trajectory: {0}")]
    DegenerateTrajectory(&'static str),
}

/// Error raised by the pipeline, tagged with the keyframe that failed.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("empty keyframe sequence")]
    NoKeyframes,
    #[error("keyframe {id}: invalid input ({count} violations, first: {first})")]
    InvalidKeyframe {
        id: u32,
        count: usize,
        first: String,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("keyframe {id}: {source}")]
    Align { id: u32, source: AlignError },
    #[error("keyframe {id}: {source}")]
    Filter { id: u32, source: FilterError },
    #[error("keyframe {id}: {source}")]
    Densify { id: u32, source: DensifyError },
    #[error("keyframe {id}: {source}")]
    Pose { id: u32, source: PoseError },
}
