//! The `bundle.json` manifest. Paths are relative to the bundle directory.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{read_text, CliError};

pub const MANIFEST_FILE: &str = "bundle.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicsEntry {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeyframeEntry {
    pub id: u32,
    pub image: String,
    pub semi_dense: String,
    pub semi_dense_var: String,
    pub cnn_depth: String,
    pub pose: String,
    pub covariance: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthEntry {
    pub id: u32,
    pub path: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthEntry {
    /// Pose file covering every keyframe.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poses: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub depth: Vec<DepthEntry>,
}

/// Extra pose-graph edge; `constraint` is `T_from⁻¹·T_to` as
/// `[tx, ty, tz, qx, qy, qz, qw, scale]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopEdgeEntry {
    pub from: u32,
    pub to: u32,
    pub constraint: [f64; 8],
    /// 49 numbers, row-major.
    pub information: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub version: u32,
    pub intrinsics: IntrinsicsEntry,
    pub keyframes: Vec<KeyframeEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<GroundTruthEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub loop_edges: Vec<LoopEdgeEntry>,
}

/// Byte offset of a serde_json error position (1-based line and column).
fn json_offset(text: &str, line: usize, column: usize) -> usize {
    let before: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    (before + column.saturating_sub(1)).min(text.len())
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| {
        let offset = json_offset(&text, e.line(), e.column());
        CliError::parse(path, offset, e.to_string())
    })
}

pub(crate) fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("manifest types always serialize");
    v.push(b'\n');
    v
}
