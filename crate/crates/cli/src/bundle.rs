//! Keyframe bundles on disk.
//!
//! ```text
//! bundle.json
//! keyframes/<id>/{image,semi_dense,semi_dense_var,cnn_depth}.pfm
//! keyframes/<id>/{pose,covariance}.txt
//! ground_truth/poses.txt, ground_truth/depth_<id>.pfm   (optional)
//! ```
//!
//! Maps are stored as 32-bit floats; values that are not representable in
//! `f32` are rounded on write. Poses and covariances are stored exactly.

use std::path::{Path, PathBuf};

use densefuse_core::poserefine::PoseEdge;
use densefuse_core::{Grid, Intrinsics, Keyframe, Matrix7, Sim3};

use crate::error::{read_text, write_file, CliError};
use crate::manifest::{
    read_json, to_json, BundleManifest, DepthEntry, GroundTruthEntry, IntrinsicsEntry,
    KeyframeEntry, LoopEdgeEntry, MANIFEST_FILE, MANIFEST_VERSION,
};
use crate::{pfm, poses};

#[derive(Clone, Debug, PartialEq, Default)]
pub struct GroundTruth {
    pub poses: Vec<(u32, Sim3<f64>)>,
    pub depth: Vec<(u32, Grid<f64>)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bundle {
    pub intrinsics: Intrinsics<f64>,
    pub keyframes: Vec<Keyframe<f64>>,
    pub ground_truth: Option<GroundTruth>,
    pub loop_edges: Vec<PoseEdge<f64>>,
}

impl Bundle {
    pub fn gt_depth(&self, id: u32) -> Option<&Grid<f64>> {
        self.ground_truth
            .as_ref()?
            .depth
            .iter()
            .find(|(i, _)| *i == id)
            .map(|(_, g)| g)
    }
}

pub(crate) fn intrinsics_entry(k: &Intrinsics<f64>) -> IntrinsicsEntry {
    IntrinsicsEntry {
        fx: k.fx,
        fy: k.fy,
        cx: k.cx,
        cy: k.cy,
        width: k.width,
        height: k.height,
    }
}

pub(crate) fn intrinsics_from_entry(
    e: &IntrinsicsEntry,
    file: &Path,
) -> Result<Intrinsics<f64>, CliError> {
    Intrinsics::new(e.fx, e.fy, e.cx, e.cy, e.width, e.height)
        .map_err(|err| CliError::invalid(file, format!("intrinsics: {err}")))
}

/// Loads a map and checks it against the image size.
pub(crate) fn read_map(dir: &Path, rel: &str, dims: (usize, usize)) -> Result<Grid<f64>, CliError> {
    let path = dir.join(rel);
    let g = pfm::read_as::<f64>(&path)?;
    if g.dims() != dims {
        return Err(CliError::invalid(
            &path,
            format!(
                "size {}x{} differs from {}x{}",
                g.width(),
                g.height(),
                dims.0,
                dims.1
            ),
        ));
    }
    Ok(g)
}

fn read_single_pose(path: &Path, id: u32) -> Result<Sim3<f64>, CliError> {
    let v = poses::parse_poses(&read_text(path)?, path)?;
    match v.as_slice() {
        [(i, p)] if *i == id => Ok(*p),
        [(i, _)] => Err(CliError::invalid(
            path,
            format!("pose id {i} does not match keyframe {id}"),
        )),
        _ => Err(CliError::invalid(
            path,
            format!("expected one pose line, found {}", v.len()),
        )),
    }
}

/// Checks that keyframe ids are strictly increasing (hence unique).
pub(crate) fn check_ids(ids: impl IntoIterator<Item = u32>, file: &Path) -> Result<(), CliError> {
    let mut last: Option<u32> = None;
    for id in ids {
        if let Some(l) = last {
            if id <= l {
                return Err(CliError::invalid(
                    file,
                    format!("keyframe ids must be unique and increasing ({l} then {id})"),
                ));
            }
        }
        last = Some(id);
    }
    Ok(())
}

pub fn read_bundle(dir: &Path) -> Result<Bundle, CliError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let m: BundleManifest = read_json(&manifest_path)?;
    if m.version != MANIFEST_VERSION {
        return Err(CliError::invalid(
            &manifest_path,
            format!("unsupported manifest version {}", m.version),
        ));
    }
    let intrinsics = intrinsics_from_entry(&m.intrinsics, &manifest_path)?;
    let dims = (intrinsics.width, intrinsics.height);
    check_ids(m.keyframes.iter().map(|e| e.id), &manifest_path)?;

    let mut keyframes = Vec::with_capacity(m.keyframes.len());
    for e in &m.keyframes {
        let cov_path = dir.join(&e.covariance);
        keyframes.push(Keyframe {
            id: e.id,
            image: read_map(dir, &e.image, dims)?,
            semi_dense: read_map(dir, &e.semi_dense, dims)?,
            semi_dense_var: read_map(dir, &e.semi_dense_var, dims)?,
            cnn_depth: read_map(dir, &e.cnn_depth, dims)?,
            pose: read_single_pose(&dir.join(&e.pose), e.id)?,
            pose_cov: poses::parse_covariance(&read_text(&cov_path)?, &cov_path)?,
        });
    }

    let ground_truth = match &m.ground_truth {
        None => None,
        Some(gt) => {
            let poses = match &gt.poses {
                None => Vec::new(),
                Some(rel) => {
                    let path = dir.join(rel);
                    poses::parse_poses(&read_text(&path)?, &path)?
                }
            };
            let depth = gt
                .depth
                .iter()
                .map(|d| Ok((d.id, read_map(dir, &d.path, dims)?)))
                .collect::<Result<_, CliError>>()?;
            Some(GroundTruth { poses, depth })
        }
    };

    let loop_edges = m
        .loop_edges
        .iter()
        .map(|e| {
            let pose = poses::pose_from_array(&e.constraint).map_err(|msg| {
                CliError::invalid(
                    &manifest_path,
                    format!("loop edge {}-{}: {msg}", e.from, e.to),
                )
            })?;
            if e.information.len() != 49 {
                return Err(CliError::invalid(
                    &manifest_path,
                    format!(
                        "loop edge {}-{}: information needs 49 numbers",
                        e.from, e.to
                    ),
                ));
            }
            Ok(PoseEdge {
                from: e.from,
                to: e.to,
                constraint: pose,
                information: Matrix7::from_row_slice(&e.information),
            })
        })
        .collect::<Result<_, CliError>>()?;

    Ok(Bundle {
        intrinsics,
        keyframes,
        ground_truth,
        loop_edges,
    })
}

fn keyframe_dir(id: u32) -> String {
    format!("keyframes/{id:06}")
}

pub fn write_bundle(bundle: &Bundle, dir: &Path) -> Result<(), CliError> {
    let mut entries = Vec::with_capacity(bundle.keyframes.len());
    for kf in &bundle.keyframes {
        let base = keyframe_dir(kf.id);
        let rel = |name: &str| format!("{base}/{name}");
        let entry = KeyframeEntry {
            id: kf.id,
            image: rel("image.pfm"),
            semi_dense: rel("semi_dense.pfm"),
            semi_dense_var: rel("semi_dense_var.pfm"),
            cnn_depth: rel("cnn_depth.pfm"),
            pose: rel("pose.txt"),
            covariance: rel("covariance.txt"),
        };
        pfm::write_from(&dir.join(&entry.image), &kf.image)?;
        pfm::write_from(&dir.join(&entry.semi_dense), &kf.semi_dense)?;
        pfm::write_from(&dir.join(&entry.semi_dense_var), &kf.semi_dense_var)?;
        pfm::write_from(&dir.join(&entry.cnn_depth), &kf.cnn_depth)?;
        write_file(
            &dir.join(&entry.pose),
            poses::format_pose_line(kf.id, &kf.pose).as_bytes(),
        )?;
        write_file(
            &dir.join(&entry.covariance),
            poses::format_covariance(&kf.pose_cov).as_bytes(),
        )?;
        entries.push(entry);
    }

    let ground_truth = match &bundle.ground_truth {
        None => None,
        Some(gt) => {
            let poses_rel = if gt.poses.is_empty() {
                None
            } else {
                let rel = "ground_truth/poses.txt".to_string();
                write_file(&dir.join(&rel), poses::format_poses(&gt.poses).as_bytes())?;
                Some(rel)
            };
            let mut depth = Vec::with_capacity(gt.depth.len());
            for (id, g) in &gt.depth {
                let rel = format!("ground_truth/depth_{id:06}.pfm");
                pfm::write_from(&dir.join(&rel), g)?;
                depth.push(DepthEntry { id: *id, path: rel });
            }
            Some(GroundTruthEntry {
                poses: poses_rel,
                depth,
            })
        }
    };

    let manifest = BundleManifest {
        version: MANIFEST_VERSION,
        intrinsics: intrinsics_entry(&bundle.intrinsics),
        keyframes: entries,
        ground_truth,
        loop_edges: bundle
            .loop_edges
            .iter()
            .map(|e| LoopEdgeEntry {
                from: e.from,
                to: e.to,
                constraint: poses::pose_to_array(&e.constraint),
                information: e.information.transpose().as_slice().to_vec(),
            })
            .collect(),
    };
    write_file(&dir.join(MANIFEST_FILE), &to_json(&manifest))
}

/// Directory of a written bundle's manifest, for error messages.
pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join(MANIFEST_FILE)
}
