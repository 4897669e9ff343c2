//! Depth-map accuracy and trajectory error.

use nalgebra::{Matrix3, Vector3};

use crate::error::MetricsError;
use crate::geometry::Sim3;
use crate::scalar::Real;
use crate::types::InverseDepthMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScaleMode {
    None,
    /// Scale the estimate by the least-squares factor in depth space.
    PerMapLs,
}

impl ScaleMode {
    pub fn name(self) -> &'static str {
        match self {
            ScaleMode::None => "none",
            ScaleMode::PerMapLs => "per_map_ls",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DepthScore {
    /// Percentage in `[0, 100]`.
    pub percent: f64,
    pub pixels: usize,
    /// Factor applied to the estimated depth (1 without scaling).
    pub scale: f64,
}

/// Share of pixels valid in both maps whose depth relative error is below
/// `rel_tol`.
pub fn percent_correct_depth<T: Real>(
    est: &InverseDepthMap<T>,
    gt: &InverseDepthMap<T>,
    rel_tol: f64,
    mode: ScaleMode,
) -> Result<DepthScore, MetricsError> {
    if !est.same_dims(gt) {
        return Err(MetricsError::DimensionMismatch(est.dims(), gt.dims()));
    }
    let pairs: Vec<(f64, f64)> = est
        .as_slice()
        .iter()
        .zip(gt.as_slice())
        .filter(|(e, g)| **e > T::zero() && **g > T::zero())
        .map(|(e, g)| (1.0 / e.to_f64(), 1.0 / g.to_f64()))
        .collect();
    if pairs.is_empty() {
        return Err(MetricsError::NoOverlap);
    }
    let scale = match mode {
        ScaleMode::None => 1.0,
        ScaleMode::PerMapLs => {
            let (num, den) = pairs
                .iter()
                .fold((0.0, 0.0), |(n, d), (e, g)| (n + e * g, d + e * e));
            num / den
        }
    };
    let correct = pairs
        .iter()
        .filter(|(e, g)| ((scale * e - g) / g).abs() < rel_tol)
        .count();
    Ok(DepthScore {
        percent: 100.0 * correct as f64 / pairs.len() as f64,
        pixels: pairs.len(),
        scale,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DepthReport {
    pub rel_tol: f64,
    pub mode: ScaleMode,
    pub per_keyframe: Vec<(u32, DepthScore)>,
    pub mean_percent: f64,
}

impl DepthReport {
    /// Scores every `(id, estimate, ground truth)` triple.
    pub fn evaluate<T: Real>(
        maps: &[(u32, &InverseDepthMap<T>, &InverseDepthMap<T>)],
        rel_tol: f64,
        mode: ScaleMode,
    ) -> Result<Self, MetricsError> {
        let per_keyframe = maps
            .iter()
            .map(|(id, est, gt)| percent_correct_depth(est, gt, rel_tol, mode).map(|s| (*id, s)))
            .collect::<Result<Vec<_>, _>>()?;
        let mean_percent = if per_keyframe.is_empty() {
            0.0
        } else {
            per_keyframe.iter().map(|(_, s)| s.percent).sum::<f64>() / per_keyframe.len() as f64
        };
        Ok(Self {
            rel_tol,
            mode,
            per_keyframe,
            mean_percent,
        })
    }

    /// Human-readable table.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "percent-correct-depth (rel_tol {}, scale {})\n",
            self.rel_tol,
            self.mode.name()
        );
        for (id, sc) in &self.per_keyframe {
            s.push_str(&format!(
                "keyframe {id}: {:.3}% of {} pixels (scale {:.6})\n",
                sc.percent, sc.pixels, sc.scale
            ));
        }
        s.push_str(&format!("mean: {:.3}%\n", self.mean_percent));
        s
    }

    pub fn to_key_values(&self) -> String {
        let mut s = format!(
            "rel_tol={}\nscale_mode={}\nmean_percent={}\n",
            self.rel_tol,
            self.mode.name(),
            self.mean_percent
        );
        for (id, sc) in &self.per_keyframe {
            s.push_str(&format!(
                "keyframe.{id}.percent={}\nkeyframe.{id}.pixels={}\nkeyframe.{id}.scale={}\n",
                sc.percent, sc.pixels, sc.scale
            ));
        }
        s
    }
}

/// Similarity `(s, R, t)` minimizing `Σ ‖dst − (s·R·src + t)‖²`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimilarityAlignment {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl SimilarityAlignment {
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p * self.scale + self.translation
    }
}

/// Relative size of the second singular value below which a point set is
/// treated as collinear.
pub const COLLINEAR_TOLERANCE: f64 = 1e-9;

/// Closed-form similarity alignment of two point sets.
pub fn umeyama(
    src: &[Vector3<f64>],
    dst: &[Vector3<f64>],
) -> Result<SimilarityAlignment, MetricsError> {
    if src.len() != dst.len() {
        return Err(MetricsError::DimensionMismatch(
            (src.len(), 1),
            (dst.len(), 1),
        ));
    }
    if src.len() < 3 {
        return Err(MetricsError::DegenerateTrajectory("fewer than 3 poses"));
    }
    let n = src.len() as f64;
    let mu_s = src.iter().sum::<Vector3<f64>>() / n;
    let mu_d = dst.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    let mut src_scatter = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let (cs, cd) = (s - mu_s, d - mu_d);
        cov += cd * cs.transpose();
        src_scatter += cs * cs.transpose();
        var_s += cs.norm_squared();
    }
    cov /= n;
    var_s /= n;
    let sv = src_scatter.symmetric_eigenvalues();
    let mut sv: Vec<f64> = sv.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if !(sv[0] > 0.0) || sv[1] <= COLLINEAR_TOLERANCE * sv[0] {
        return Err(MetricsError::DegenerateTrajectory("collinear positions"));
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut signs = Matrix3::identity();
    if u.determinant() * v_t.determinant() < 0.0 {
        signs[(2, 2)] = -1.0;
    }
    let rotation = u * signs * v_t;
    let trace: f64 = (0..3).map(|i| svd.singular_values[i] * signs[(i, i)]).sum();
    let scale = trace / var_s;
    let translation = mu_d - rotation * mu_s * scale;
    Ok(SimilarityAlignment {
        scale,
        rotation,
        translation,
    })
}

fn positions<T: Real>(traj: &[Sim3<T>]) -> Vec<Vector3<f64>> {
    traj.iter()
        .map(|p| {
            let t = p.translation();
            Vector3::new(t.x.to_f64(), t.y.to_f64(), t.z.to_f64())
        })
        .collect()
}

fn rmse(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
    (a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).norm_squared())
        .sum::<f64>()
        / a.len() as f64)
        .sqrt()
}

/// Absolute trajectory error (m) after similarity alignment of the camera
/// positions of `est` onto `gt`.
pub fn ate<T: Real>(est: &[Sim3<T>], gt: &[Sim3<T>]) -> Result<f64, MetricsError> {
    let (pe, pg) = (positions(est), positions(gt));
    let a = umeyama(&pe, &pg)?;
    let aligned: Vec<_> = pe.iter().map(|p| a.apply(p)).collect();
    Ok(rmse(&aligned, &pg))
}

/// RMSE of camera positions without any alignment.
pub fn unaligned_position_rmse<T: Real>(
    est: &[Sim3<T>],
    gt: &[Sim3<T>],
) -> Result<f64, MetricsError> {
    if est.len() != gt.len() {
        return Err(MetricsError::DimensionMismatch(
            (est.len(), 1),
            (gt.len(), 1),
        ));
    }
    if est.is_empty() {
        return Err(MetricsError::DegenerateTrajectory("empty trajectory"));
    }
    Ok(rmse(&positions(est), &positions(gt)))
}
