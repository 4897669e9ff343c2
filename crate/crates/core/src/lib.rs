//! Dense inverse-depth fusion back-end for monocular SLAM.
//!
//! Semi-dense inverse-depth maps from a tracking front-end are combined with
//! single-image relative depth predictions: the prediction is scale/shift
//! corrected ([`align`]), the semi-dense map is adaptively filtered
//! ([`filter`]), a dense map is optimized ([`densify`]), and the dense
//! structure is used to refine the keyframe pose graph ([`poserefine`]).
//! [`pipeline`] chains the stages and [`metrics`] scores the results.
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`); the `*D`
//! aliases below fix `f64`.

pub mod align;
pub mod densify;
pub mod error;
pub mod filter;
pub mod geometry;
pub mod metrics;
pub mod pipeline;
pub mod poserefine;
pub mod scalar;
pub mod types;

pub use error::{
    AlignError, ConfigError, DensifyError, FilterError, GeometryError, MetricsError, PipelineError,
    PoseError,
};
pub use geometry::{Matrix7, Sim3, Sim3Tangent, Vector7};
pub use scalar::Real;
pub use types::{
    validate_keyframe, FusionConfig, GrayImage, Grid, Intrinsics, InverseDepthMap, Keyframe, Pixel,
    VarianceMap, Violation,
};

pub type Sim3D = Sim3<f64>;
pub type Sim3F = Sim3<f32>;
pub type GridD = Grid<f64>;
pub type KeyframeD = Keyframe<f64>;
pub type IntrinsicsD = Intrinsics<f64>;
pub type FusionConfigD = FusionConfig<f64>;
pub type PipelineResultD = pipeline::PipelineResult<f64>;
