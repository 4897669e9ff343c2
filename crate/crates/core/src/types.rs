//! Domain types: pixel grids, camera intrinsics, keyframes and the fusion
//! configuration.
//!
//! Conventions fixed here and relied upon everywhere else:
//!
//! * inverse depth is in 1/m and an invalid pixel holds exactly `0`;
//! * variance is of inverse depth, in (1/m)², and is positive exactly where
//!   the companion inverse-depth map is valid;
//! * intensities are reals in `[0, 255]`;
//! * pose covariance is expressed in tangent coordinates ordered
//!   (translation ×3, rotation ×3, log-scale ×1).

use nalgebra::SymmetricEigen;

use crate::error::ConfigError;
use crate::geometry::{Matrix7, Sim3};
use crate::scalar::Real;

/// Integer pixel coordinate `(x, y)` = `(column, row)`.
pub type Pixel = (usize, usize);

/// Row-major 2-D grid of scalars.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

/// Per-pixel intensity in `[0, 255]`.
pub type GrayImage<T> = Grid<T>;
/// Per-pixel inverse depth (1/m); `0` marks an invalid pixel.
pub type InverseDepthMap<T> = Grid<T>;
/// Per-pixel inverse-depth variance ((1/m)²).
pub type VarianceMap<T> = Grid<T>;

impl<T: Copy> Grid<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    /// Wraps row-major data. Panics if the length does not match.
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Self {
        assert_eq!(
            data.len(),
            width * height,
            "grid data length does not match {width}x{height}"
        );
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        self.data[y * self.width + x] = value;
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, y: usize) -> &[T] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn same_dims<U>(&self, other: &Grid<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn map<U: Copy>(&self, mut f: impl FnMut(T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Iterates `(x, y, value)` in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .map(move |(i, &v)| (i % w, i / w, v))
    }
}

impl<T: Real> Grid<T> {
    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.get(x, y) > T::zero()
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|&&v| v > T::zero()).count()
    }

    /// Replaces NaN with the invalid sentinel `0`.
    pub fn normalize_invalid(&self) -> Self {
        self.map(|v| if v.is_nan_val() { T::zero() } else { v })
    }

    /// Zeroes every pixel where `mask` is not valid.
    pub fn masked_by(&self, mask: &Grid<T>) -> Self {
        assert!(self.same_dims(mask));
        Grid {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&mask.data)
                .map(|(&v, &m)| if m > T::zero() { v } else { T::zero() })
                .collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Grid<U> {
        self.map(|v| U::lit(v.to_f64()))
    }
}

/// Pinhole intrinsics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics<T> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: usize,
    pub height: usize,
}

impl<T: Real> Intrinsics<T> {
    pub fn new(
        fx: T,
        fy: T,
        cx: T,
        cy: T,
        width: usize,
        height: usize,
    ) -> Result<Self, ConfigError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let (w, h) = (T::from_count(self.width), T::from_count(self.height));
        let ok = self.fx > T::zero()
            && self.fy > T::zero()
            && self.cx > T::zero()
            && self.cx < w
            && self.cy > T::zero()
            && self.cy < h;
        if ok {
            Ok(())
        } else {
            Err(ConfigError::Invalid {
                key: "intrinsics".into(),
                reason: "need fx, fy > 0, 0 < cx < width, 0 < cy < height".into(),
            })
        }
    }

    pub fn cast<U: Real>(&self) -> Intrinsics<U> {
        Intrinsics {
            fx: U::lit(self.fx.to_f64()),
            fy: U::lit(self.fy.to_f64()),
            cx: U::lit(self.cx.to_f64()),
            cy: U::lit(self.cy.to_f64()),
            width: self.width,
            height: self.height,
        }
    }
}

/// A keyframe as delivered by the tracking front-end.
#[derive(Clone, Debug, PartialEq)]
pub struct Keyframe<T: Real> {
    pub id: u32,
    pub image: GrayImage<T>,
    pub semi_dense: InverseDepthMap<T>,
    pub semi_dense_var: VarianceMap<T>,
    /// Relative inverse depth, before scale/shift correction.
    pub cnn_depth: InverseDepthMap<T>,
    /// Camera-to-world similarity.
    pub pose: Sim3<T>,
    pub pose_cov: Matrix7<T>,
}

/// Tolerance used for the symmetry and PSD checks on `pose_cov`.
pub const COVARIANCE_TOLERANCE: f64 = 1e-9;

/// A broken keyframe invariant.
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    DimensionMismatch {
        map: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
    IntensityOutOfRange {
        x: usize,
        y: usize,
        value: f64,
    },
    InvalidDepth {
        map: &'static str,
        x: usize,
        y: usize,
        value: f64,
    },
    InvalidVariance {
        x: usize,
        y: usize,
        value: f64,
    },
    /// Depth valid and variance not positive, or the reverse.
    ValidityMismatch {
        x: usize,
        y: usize,
    },
    AsymmetricCovariance {
        row: usize,
        col: usize,
    },
    CovarianceNotPsd {
        min_eigenvalue: f64,
    },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::DimensionMismatch {
                map,
                expected,
                found,
            } => write!(
                f,
                "{map}: expected {}x{}, found {}x{}",
                expected.0, expected.1, found.0, found.1
            ),
            Violation::IntensityOutOfRange { x, y, value } => {
                write!(f, "image ({x}, {y}): intensity {value} outside [0, 255]")
            }
            Violation::InvalidDepth { map, x, y, value } => {
                write!(f, "{map} ({x}, {y}): invalid inverse depth {value}")
            }
            Violation::InvalidVariance { x, y, value } => {
                write!(f, "variance ({x}, {y}): invalid value {value}")
            }
            Violation::ValidityMismatch { x, y } => {
                write!(
                    f,
                    "({x}, {y}): variance valid set differs from depth valid set"
                )
            }
            Violation::AsymmetricCovariance { row, col } => {
                write!(f, "pose covariance not symmetric at ({row}, {col})")
            }
            Violation::CovarianceNotPsd { min_eigenvalue } => {
                write!(
                    f,
                    "pose covariance not PSD (min eigenvalue {min_eigenvalue})"
                )
            }
        }
    }
}

fn check_depth<T: Real>(map: &'static str, grid: &Grid<T>, out: &mut Vec<Violation>) {
    for (x, y, v) in grid.pixels() {
        if !v.is_finite_val() || v < T::zero() {
            out.push(Violation::InvalidDepth {
                map,
                x,
                y,
                value: v.to_f64(),
            });
        }
    }
}

/// Lists every broken invariant of `kf`. An empty list means the keyframe is
/// accepted by all downstream stages.
pub fn validate_keyframe<T: Real>(kf: &Keyframe<T>) -> Vec<Violation> {
    let mut out = Vec::new();
    let expected = kf.image.dims();
    let mut dims_ok = true;
    for (name, grid) in [
        ("semi_dense", &kf.semi_dense),
        ("semi_dense_var", &kf.semi_dense_var),
        ("cnn_depth", &kf.cnn_depth),
    ] {
        if grid.dims() != expected {
            dims_ok = false;
            out.push(Violation::DimensionMismatch {
                map: name,
                expected,
                found: grid.dims(),
            });
        }
    }

    let max_intensity = T::lit(255.0);
    for (x, y, v) in kf.image.pixels() {
        if !v.is_finite_val() || v < T::zero() || v > max_intensity {
            out.push(Violation::IntensityOutOfRange {
                x,
                y,
                value: v.to_f64(),
            });
        }
    }

    check_depth("semi_dense", &kf.semi_dense, &mut out);
    check_depth("cnn_depth", &kf.cnn_depth, &mut out);

    for (x, y, v) in kf.semi_dense_var.pixels() {
        if !v.is_finite_val() || v < T::zero() {
            out.push(Violation::InvalidVariance {
                x,
                y,
                value: v.to_f64(),
            });
        }
    }

    if dims_ok {
        for (x, y, d) in kf.semi_dense.pixels() {
            let var_valid = kf.semi_dense_var.get(x, y) > T::zero();
            if (d > T::zero()) != var_valid {
                out.push(Violation::ValidityMismatch { x, y });
            }
        }
    }

    let tol = T::lit(COVARIANCE_TOLERANCE);
    let cov = &kf.pose_cov;
    let mut symmetric = true;
    for r in 0..7 {
        for c in (r + 1)..7 {
            let (a, b) = (cov[(r, c)], cov[(c, r)]);
            if !a.is_finite_val() || !b.is_finite_val() || (a - b).abs() > tol {
                symmetric = false;
                out.push(Violation::AsymmetricCovariance { row: r, col: c });
            }
        }
    }
    if symmetric && cov.iter().all(|v| v.is_finite_val()) {
        let eig = SymmetricEigen::new(*cov);
        let min = eig
            .eigenvalues
            .iter()
            .copied()
            .fold(T::max_value().unwrap(), T::min);
        if min < -tol {
            out.push(Violation::CovarianceNotPsd {
                min_eigenvalue: min.to_f64(),
            });
        }
    }
    out
}

/// Every tunable of the fusion back-end. Defaults follow the published
/// parameter set; the refinement block has no published values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FusionConfig<T> {
    /// Photometric kernel width (intensity units).
    pub sigma_s: T,
    /// Spatial kernel width (pixels).
    pub sigma_d: T,
    /// Relative-depth consistency kernel width.
    pub sigma_c: T,
    /// Uncertainty kernel strength.
    pub sigma_u: T,
    /// Variance threshold after filtering ((1/m)²).
    pub gamma: T,
    /// Accepted for completeness; no filter stage consumes it.
    pub beta: T,
    pub window_radius: usize,
    /// Weight of the semi-dense consistency term.
    pub lambda: T,
    pub epsilon: T,
    pub alpha: T,
    pub iterations: usize,
    pub step_size: T,
    /// Two-view consistency threshold (1/m).
    pub tau_e: T,
    /// Floor applied to corrected and optimized inverse depth (1/m).
    pub min_inverse_depth: T,
    /// Floor applied to variances used as denominators ((1/m)²).
    pub min_variance: T,
    /// Huber threshold on photometric residuals (intensity units).
    pub huber_delta: T,
    pub refine_iterations: usize,
    /// Convergence threshold on the Gauss-Newton update norm.
    pub refine_tolerance: T,
    pub refine_min_residuals: usize,
}

impl<T: Real> Default for FusionConfig<T> {
    fn default() -> Self {
        Self {
            sigma_s: T::lit(76.5),
            sigma_d: T::lit(2.0),
            sigma_c: T::lit(0.3),
            sigma_u: T::lit(2.0),
            gamma: T::lit(0.0025),
            beta: T::lit(1.1),
            window_radius: 2,
            lambda: T::lit(0.003),
            epsilon: T::lit(0.001),
            alpha: T::lit(0.45),
            iterations: 30,
            step_size: T::lit(0.05),
            tau_e: T::lit(0.001),
            min_inverse_depth: T::lit(1e-4),
            min_variance: T::lit(1e-8),
            huber_delta: T::lit(5.0),
            refine_iterations: 20,
            refine_tolerance: T::lit(1e-7),
            refine_min_residuals: 200,
        }
    }
}

/// Names accepted by [`FusionConfig::set`], in echo order.
pub const CONFIG_KEYS: &[&str] = &[
    "sigma_s",
    "sigma_d",
    "sigma_c",
    "sigma_u",
    "gamma",
    "beta",
    "window_radius",
    "lambda",
    "epsilon",
    "alpha",
    "iterations",
    "step_size",
    "tau_e",
    "min_inverse_depth",
    "min_variance",
    "huber_delta",
    "refine_iterations",
    "refine_tolerance",
    "refine_min_residuals",
];

impl<T: Real> FusionConfig<T> {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let zero = T::zero();
        let checks: [(&str, bool, &str); 12] = [
            ("sigma_s", self.sigma_s > zero, "must be > 0"),
            ("sigma_d", self.sigma_d > zero, "must be > 0"),
            ("sigma_c", self.sigma_c > zero, "must be > 0"),
            ("sigma_u", self.sigma_u > zero, "must be > 0"),
            ("gamma", self.gamma > zero, "must be > 0"),
            ("lambda", self.lambda >= zero, "must be >= 0"),
            (
                "alpha",
                self.alpha > zero && self.alpha < T::one(),
                "must lie in (0, 1)",
            ),
            ("iterations", self.iterations >= 1, "must be >= 1"),
            ("tau_e", self.tau_e > zero, "must be > 0"),
            (
                "min_inverse_depth",
                self.min_inverse_depth > zero,
                "must be > 0",
            ),
            ("min_variance", self.min_variance > zero, "must be > 0"),
            ("huber_delta", self.huber_delta > zero, "must be > 0"),
        ];
        for (key, ok, reason) in checks {
            if !ok {
                return Err(ConfigError::Invalid {
                    key: key.into(),
                    reason: reason.into(),
                });
            }
        }
        if !(self.epsilon.is_finite_val() && self.step_size > zero) {
            return Err(ConfigError::Invalid {
                key: "step_size".into(),
                reason: "must be > 0".into(),
            });
        }
        Ok(())
    }

    /// Overrides one field by name from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = |reason: &str| ConfigError::Invalid {
            key: key.to_string(),
            reason: reason.to_string(),
        };
        let real = || -> Result<T, ConfigError> {
            value
                .trim()
                .parse::<f64>()
                .map(T::lit)
                .map_err(|_| bad("expected a real number"))
        };
        let count = || -> Result<usize, ConfigError> {
            value
                .trim()
                .parse::<usize>()
                .map_err(|_| bad("expected a non-negative integer"))
        };
        match key {
            "sigma_s" => self.sigma_s = real()?,
            "sigma_d" => self.sigma_d = real()?,
            "sigma_c" => self.sigma_c = real()?,
            "sigma_u" => self.sigma_u = real()?,
            "gamma" => self.gamma = real()?,
            "beta" => self.beta = real()?,
            "window_radius" => self.window_radius = count()?,
            "lambda" => self.lambda = real()?,
            "epsilon" => self.epsilon = real()?,
            "alpha" => self.alpha = real()?,
            "iterations" => self.iterations = count()?,
            "step_size" => self.step_size = real()?,
            "tau_e" => self.tau_e = real()?,
            "min_inverse_depth" => self.min_inverse_depth = real()?,
            "min_variance" => self.min_variance = real()?,
            "huber_delta" => self.huber_delta = real()?,
            "refine_iterations" => self.refine_iterations = count()?,
            "refine_tolerance" => self.refine_tolerance = real()?,
            "refine_min_residuals" => self.refine_min_residuals = count()?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Textual value of one field, formatted so that [`set`](Self::set)
    /// reproduces it exactly.
    pub fn get(&self, key: &str) -> Option<String> {
        let r = |v: T| format!("{}", v.to_f64());
        Some(match key {
            "sigma_s" => r(self.sigma_s),
            "sigma_d" => r(self.sigma_d),
            "sigma_c" => r(self.sigma_c),
            "sigma_u" => r(self.sigma_u),
            "gamma" => r(self.gamma),
            "beta" => r(self.beta),
            "window_radius" => self.window_radius.to_string(),
            "lambda" => r(self.lambda),
            "epsilon" => r(self.epsilon),
            "alpha" => r(self.alpha),
            "iterations" => self.iterations.to_string(),
            "step_size" => r(self.step_size),
            "tau_e" => r(self.tau_e),
            "min_inverse_depth" => r(self.min_inverse_depth),
            "min_variance" => r(self.min_variance),
            "huber_delta" => r(self.huber_delta),
            "refine_iterations" => self.refine_iterations.to_string(),
            "refine_tolerance" => r(self.refine_tolerance),
            "refine_min_residuals" => self.refine_min_residuals.to_string(),
            _ => return None,
        })
    }

    /// `key=value` lines for every field.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        for key in CONFIG_KEYS {
            s.push_str(key);
            s.push('=');
            s.push_str(&self.get(key).unwrap_or_default());
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn keyframe() -> Keyframe<f64> {
        let (w, h) = (6, 5);
        let semi = Grid::from_fn(w, h, |x, y| if (x + y) % 2 == 0 { 0.5 } else { 0.0 });
        let var = semi.map(|d| if d > 0.0 { 1e-4 } else { 0.0 });
        Keyframe {
            id: 3,
            image: Grid::from_fn(w, h, |x, y| (10 * x + y) as f64),
            semi_dense: semi,
            semi_dense_var: var,
            cnn_depth: Grid::filled(w, h, 0.4),
            pose: Sim3::identity(),
            pose_cov: Matrix7::identity() * 1e-6,
        }
    }

    #[test]
    fn well_formed_keyframe_has_no_violations() {
        assert!(validate_keyframe(&keyframe()).is_empty());
    }

    #[test]
    fn negative_depth_pixel_is_reported() {
        let mut kf = keyframe();
        kf.semi_dense.set(2, 4, -0.3);
        let v = validate_keyframe(&kf);
        assert!(v.contains(&Violation::InvalidDepth {
            map: "semi_dense",
            x: 2,
            y: 4,
            value: -0.3
        }));
        assert_eq!(
            v.iter()
                .filter(|v| matches!(v, Violation::InvalidDepth { .. }))
                .count(),
            1
        );
    }

    #[test]
    fn variance_valid_set_mismatch_is_reported() {
        let mut kf = keyframe();
        kf.semi_dense_var.set(1, 0, 1e-4);
        let v = validate_keyframe(&kf);
        assert_eq!(v, vec![Violation::ValidityMismatch { x: 1, y: 0 }]);
    }

    #[test]
    fn covariance_checks() {
        let mut kf = keyframe();
        kf.pose_cov[(0, 1)] = 1e-3;
        assert!(matches!(
            validate_keyframe(&kf)[..],
            [Violation::AsymmetricCovariance { row: 0, col: 1 }]
        ));
        let mut kf = keyframe();
        kf.pose_cov[(3, 3)] = -1.0;
        assert!(matches!(
            validate_keyframe(&kf)[..],
            [Violation::CovarianceNotPsd { .. }]
        ));
    }

    #[test]
    fn dimension_mismatch() {
        let mut kf = keyframe();
        kf.cnn_depth = Grid::filled(2, 2, 1.0);
        assert_eq!(
            validate_keyframe(&kf),
            vec![Violation::DimensionMismatch {
                map: "cnn_depth",
                expected: (6, 5),
                found: (2, 2)
            }]
        );
    }

    #[test]
    fn config_set_get_round_trip() {
        let mut cfg = FusionConfig::<f64>::default();
        cfg.validate().unwrap();
        cfg.set("lambda", "0.5").unwrap();
        cfg.set("iterations", "7").unwrap();
        assert_eq!(cfg.lambda, 0.5);
        assert_eq!(cfg.iterations, 7);
        let mut other = FusionConfig::<f64>::default();
        for line in cfg.to_key_values().lines() {
            let (k, v) = line.split_once('=').unwrap();
            other.set(k, v).unwrap();
        }
        assert_eq!(cfg, other);
        assert!(matches!(
            cfg.set("nope", "1"),
            Err(ConfigError::UnknownKey(_))
        ));
        cfg.set("alpha", "1.5").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn normalize_invalid_maps_nan_to_zero() {
        let g = Grid::from_vec(3, 1, vec![f64::NAN, 0.2, 0.0]);
        assert_eq!(g.normalize_invalid().as_slice(), &[0.0, 0.2, 0.0]);
    }
}
