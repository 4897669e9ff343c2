//! Deterministic synthetic scenes with exact ground truth.
//!
//! A [`SceneSpec`] of textured planes and boxes is ray-cast along a camera
//! trajectory ([`scene`]); the renders are then turned into front-end-like
//! observations ([`noise`]) and packaged as pipeline keyframes ([`bundle`]).
//! All randomness comes from the counter-based streams in [`rng`], so the
//! output is a pure function of the spec, the noise model and the seed.

pub mod bundle;
pub mod noise;
pub mod rng;
pub mod scene;

use thiserror::Error;

pub use bundle::{
    covisible_mask, make_bundle, perturb_poses, standard_bundle, standard_noise, standard_scene,
    SynthSpec, SyntheticBundle, POSE_COVARIANCE, STANDARD_SEED,
};
pub use noise::{simulate_relative_depth, simulate_semidense, NoiseModel};
pub use rng::{Purpose, Stream};
pub use scene::{render, Placement, PoseTuple, RenderedView, SceneSpec, Surface, Texture};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("camera {frame} sees no surface")]
    EmptyView { frame: usize },
    #[error("invalid scene: {0}")]
    InvalidSpec(String),
}
