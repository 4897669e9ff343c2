//! ASCII point-cloud export.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use densefuse_core::geometry::backproject;
use densefuse_core::{GrayImage, Intrinsics, InverseDepthMap, Real, Sim3};
use nalgebra::Vector3;

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Vertex {
    pub position: Vector3<f64>,
    pub gray: u8,
}

/// One world-space vertex per valid pixel, coloured by the image.
pub fn cloud<T: Real>(
    depth: &InverseDepthMap<T>,
    image: &GrayImage<T>,
    pose: &Sim3<T>,
    k: &Intrinsics<T>,
) -> Vec<Vertex> {
    depth
        .pixels()
        .filter(|&(_, _, d)| d > T::zero())
        .map(|(x, y, d)| {
            let p = pose.transform_point(&backproject((T::from_count(x), T::from_count(y)), d, k));
            let gray = image.get(x, y).to_f64().round().clamp(0.0, 255.0) as u8;
            Vertex {
                position: Vector3::new(p.x.to_f64(), p.y.to_f64(), p.z.to_f64()),
                gray,
            }
        })
        .collect()
}

pub fn write_ply<W: Write>(mut w: W, vertices: &[Vertex]) -> io::Result<()> {
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "element vertex {}", vertices.len())?;
    for axis in ["x", "y", "z"] {
        writeln!(w, "property double {axis}")?;
    }
    for channel in ["red", "green", "blue"] {
        writeln!(w, "property uchar {channel}")?;
    }
    writeln!(w, "end_header")?;
    for v in vertices {
        let p = v.position;
        writeln!(w, "{} {} {} {g} {g} {g}", p.x, p.y, p.z, g = v.gray)?;
    }
    w.flush()
}

pub fn write_ply_file(path: &Path, vertices: &[Vertex]) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    let f = File::create(path).map_err(|e| CliError::io(path, e))?;
    write_ply(BufWriter::new(f), vertices).map_err(|e| CliError::io(path, e))
}

/// Back-projects one keyframe into `path`.
pub fn export_ply<T: Real>(
    depth: &InverseDepthMap<T>,
    image: &GrayImage<T>,
    pose: &Sim3<T>,
    k: &Intrinsics<T>,
    path: &Path,
) -> Result<(), CliError> {
    write_ply_file(path, &cloud(depth, image, pose, k))
}
