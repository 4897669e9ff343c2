//! Text formats for poses and covariances.
//!
//! A pose line is `id tx ty tz qx qy qz qw`, the TUM trajectory tuple with
//! the keyframe id in the timestamp column, describing the camera-to-world
//! transform. Similarities whose scale is not exactly one carry the scale as
//! a ninth number. Numbers are printed in shortest round-trip form, so
//! parsing a written file reproduces every bit.

use std::fmt::Write as _;
use std::path::Path;

use densefuse_core::{Matrix7, Sim3};
use nalgebra::{Quaternion, Unit, UnitQuaternion, Vector3};

use crate::error::CliError;

/// Whitespace-separated tokens with their byte offsets.
pub(crate) fn tokens(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.split_ascii_whitespace()
        .map(move |t| (t.as_ptr() as usize - text.as_ptr() as usize, t))
}

pub(crate) fn parse_f64(file: &Path, offset: usize, tok: &str) -> Result<f64, CliError> {
    tok.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| {
            CliError::parse(
                file,
                offset,
                format!("expected a finite number, found `{tok}`"),
            )
        })
}

/// The 8 numbers after the id: translation, quaternion (x, y, z, w), scale.
pub fn pose_to_array(p: &Sim3<f64>) -> [f64; 8] {
    let t = p.translation();
    let q = p.rotation().quaternion().coords;
    [t.x, t.y, t.z, q.x, q.y, q.z, q.w, p.scale()]
}

/// Inverse of [`pose_to_array`]. Quaternions already normalized to within
/// 1e-12 are kept bit-for-bit; others are renormalized.
pub fn pose_from_array(v: &[f64; 8]) -> Result<Sim3<f64>, String> {
    let q = Quaternion::new(v[6], v[3], v[4], v[5]);
    let n = q.norm();
    if !(n > 1e-6) {
        return Err(format!("degenerate quaternion norm {n}"));
    }
    if !(v[7] > 0.0) {
        return Err(format!("scale {} is not positive", v[7]));
    }
    let t = Vector3::new(v[0], v[1], v[2]);
    Ok(if (n - 1.0).abs() <= 1e-12 {
        Sim3::from_parts_unchecked(Unit::new_unchecked(q), t, v[7])
    } else {
        Sim3::new(UnitQuaternion::from_quaternion(q), t, v[7])
    })
}

pub fn format_pose_line(id: u32, p: &Sim3<f64>) -> String {
    let a = pose_to_array(p);
    let mut s = id.to_string();
    let n = if a[7] == 1.0 { 7 } else { 8 };
    for v in &a[..n] {
        let _ = write!(s, " {v}");
    }
    s.push('\n');
    s
}

pub fn format_poses(poses: &[(u32, Sim3<f64>)]) -> String {
    poses
        .iter()
        .map(|(id, p)| format_pose_line(*id, p))
        .collect()
}

/// Parses a pose file. Blank lines and lines starting with `#` are skipped.
pub fn parse_poses(text: &str, file: &Path) -> Result<Vec<(u32, Sim3<f64>)>, CliError> {
    let mut out = Vec::new();
    let mut line_start = 0;
    for line in text.split_inclusive('\n') {
        let offset = line_start;
        line_start += line.len();
        let body = line.trim();
        if body.is_empty() || body.starts_with('#') {
            continue;
        }
        let toks: Vec<(usize, &str)> = tokens(line).map(|(o, t)| (o + offset, t)).collect();
        if toks.len() != 8 && toks.len() != 9 {
            return Err(CliError::parse(
                file,
                offset,
                format!(
                    "expected 8 numbers (id tx ty tz qx qy qz qw), found {}",
                    toks.len()
                ),
            ));
        }
        let (at, id_tok) = toks[0];
        let id = id_tok
            .parse::<u32>()
            .map_err(|_| CliError::parse(file, at, format!("bad keyframe id `{id_tok}`")))?;
        let mut v = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0];
        for (slot, &(at, tok)) in v.iter_mut().zip(&toks[1..]) {
            *slot = parse_f64(file, at, tok)?;
        }
        let pose = pose_from_array(&v).map_err(|m| CliError::parse(file, toks[1].0, m))?;
        out.push((id, pose));
    }
    Ok(out)
}

/// Seven lines of seven numbers, row-major.
pub fn format_covariance(m: &Matrix7<f64>) -> String {
    let mut s = String::new();
    for r in 0..7 {
        for c in 0..7 {
            if c > 0 {
                s.push(' ');
            }
            let _ = write!(s, "{}", m[(r, c)]);
        }
        s.push('\n');
    }
    s
}

/// Exactly 49 numbers in row-major order, any whitespace layout.
pub fn parse_covariance(text: &str, file: &Path) -> Result<Matrix7<f64>, CliError> {
    let toks: Vec<(usize, &str)> = tokens(text).collect();
    if toks.len() != 49 {
        let at = toks.get(49).map_or(text.len(), |t| t.0);
        return Err(CliError::parse(
            file,
            at,
            format!("expected 49 numbers, found {}", toks.len()),
        ));
    }
    let mut m = Matrix7::zeros();
    for (i, &(at, tok)) in toks.iter().enumerate() {
        m[(i / 7, i % 7)] = parse_f64(file, at, tok)?;
    }
    Ok(m)
}
