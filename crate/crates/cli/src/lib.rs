//! File formats and the `densefuse` command line: keyframe bundles, float
//! maps, pose files, fused results and point clouds.

pub mod app;
pub mod bundle;
pub mod config;
pub mod error;
pub mod manifest;
pub mod pfm;
pub mod ply;
pub mod poses;
pub mod result;

pub use app::main_with_args;
pub use bundle::{read_bundle, write_bundle, Bundle, GroundTruth};
pub use error::CliError;
pub use ply::export_ply;
pub use result::{read_result, write_result, FusedBundle, FusedKeyframe};
