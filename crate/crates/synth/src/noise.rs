//! Simulated front-end observations: semi-dense depth and relative-depth
//! predictions derived from ground truth.

use densefuse_core::{GrayImage, Grid, InverseDepthMap, VarianceMap};
use serde::{Deserialize, Serialize};

use crate::rng::{Purpose, Stream};
use crate::SynthError;

/// Smallest variance assigned to a semi-dense pixel, so that valid depth
/// always comes with a strictly positive variance.
pub const VARIANCE_FLOOR: f64 = 1e-12;
/// Lower clamp of the simulated relative prediction.
pub const MIN_RELATIVE_DEPTH: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    /// Central-difference gradient magnitude (intensity units per pixel)
    /// above which a pixel gets a semi-dense value.
    pub gradient_threshold: f64,
    /// Relative standard deviation of inlier inverse depth.
    pub inlier_sigma: f64,
    pub outlier_fraction: f64,
    /// Outliers are `gt · outlier_scale`.
    pub outlier_scale: f64,
    /// The prediction is `(gt·(1 + amp·f) − cnn_b) / cnn_a`.
    pub cnn_a: f64,
    pub cnn_b: f64,
    /// Gaussian blur (pixels) turning white noise into the field `f`.
    pub cnn_smooth_sigma: f64,
    pub cnn_lowfreq_amp: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            gradient_threshold: 6.0,
            inlier_sigma: 0.01,
            outlier_fraction: 0.1,
            outlier_scale: 5.0,
            cnn_a: 1.6,
            cnn_b: 0.3,
            cnn_smooth_sigma: 20.0,
            cnn_lowfreq_amp: 0.5,
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<(), SynthError> {
        let all = [
            self.gradient_threshold,
            self.inlier_sigma,
            self.outlier_fraction,
            self.outlier_scale,
            self.cnn_a,
            self.cnn_b,
            self.cnn_smooth_sigma,
            self.cnn_lowfreq_amp,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(SynthError::InvalidSpec(
                "noise model has a non-finite value".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return Err(SynthError::InvalidSpec(
                "outlier_fraction must be in [0, 1)".into(),
            ));
        }
        if self.cnn_a <= 0.0 || self.inlier_sigma < 0.0 || self.cnn_smooth_sigma < 0.0 {
            return Err(SynthError::InvalidSpec(
                "cnn_a must be positive; sigmas nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Central-difference gradient magnitude; zero on the border.
pub fn gradient_magnitude(img: &GrayImage<f64>) -> Grid<f64> {
    let (w, h) = img.dims();
    Grid::from_fn(w, h, |x, y| {
        if x == 0 || y == 0 || x + 1 >= w || y + 1 >= h {
            return 0.0;
        }
        let gx = 0.5 * (img.get(x + 1, y) - img.get(x - 1, y));
        let gy = 0.5 * (img.get(x, y + 1) - img.get(x, y - 1));
        gx.hypot(gy)
    })
}

/// Whether a semi-dense pixel was drawn as an outlier, with its value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Sample {
    Inlier(f64),
    Outlier(f64),
}

/// Draw for one pixel. Consumes, in order: one uniform (outlier decision),
/// then one Gaussian (two uniforms).
pub fn draw_semidense(stream: &mut Stream, pixel: usize, gt: f64, nm: &NoiseModel) -> Sample {
    let s = stream.at(pixel);
    let u = s.uniform();
    let g = s.gaussian();
    if u < nm.outlier_fraction {
        Sample::Outlier(gt * nm.outlier_scale)
    } else {
        Sample::Inlier(gt * (1.0 + nm.inlier_sigma * g))
    }
}

/// Semi-dense inverse depth and variance on high-gradient pixels of frame
/// `frame`.
pub fn simulate_semidense(
    img: &GrayImage<f64>,
    gt: &InverseDepthMap<f64>,
    nm: &NoiseModel,
    seed: u64,
    frame: u32,
) -> (InverseDepthMap<f64>, VarianceMap<f64>) {
    assert!(img.same_dims(gt), "image and depth dimensions differ");
    let grad = gradient_magnitude(img);
    let mut stream = Stream::new(seed, frame, Purpose::SemiDense);
    let (w, h) = gt.dims();
    let mut depth = Grid::filled(w, h, 0.0);
    let mut var = Grid::filled(w, h, 0.0);
    for (x, y, g) in gt.pixels() {
        if g <= 0.0 || grad.get(x, y) <= nm.gradient_threshold {
            continue;
        }
        let v = match draw_semidense(&mut stream, y * w + x, g, nm) {
            Sample::Inlier(v) | Sample::Outlier(v) => v,
        };
        if v > 0.0 && v.is_finite() {
            depth.set(x, y, v);
            // Outliers get the inlier variance on purpose.
            var.set(x, y, (nm.inlier_sigma * g).powi(2).max(VARIANCE_FLOOR));
        }
    }
    (depth, var)
}

/// Separable Gaussian blur with replicated borders and radius `⌈3σ⌉`.
pub fn gaussian_blur(g: &Grid<f64>, sigma: f64) -> Grid<f64> {
    if sigma <= 0.0 {
        return g.clone();
    }
    let r = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let (w, h) = g.dims();
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let pass = |src: &Grid<f64>, horizontal: bool| {
        Grid::from_fn(w, h, |x, y| {
            let mut acc = 0.0;
            for (j, kv) in kernel.iter().enumerate() {
                let o = j as isize - r;
                let v = if horizontal {
                    src.get(clamp(x as isize + o, w), y)
                } else {
                    src.get(x, clamp(y as isize + o, h))
                };
                acc += kv * v;
            }
            acc / norm
        })
    };
    pass(&pass(g, true), false)
}

/// Smooth multiplicative error field in `[−1, 1]` for frame `frame`.
pub fn lowfreq_field(w: usize, h: usize, nm: &NoiseModel, seed: u64, frame: u32) -> Grid<f64> {
    let mut stream = Stream::new(seed, frame, Purpose::RelativeDepth);
    let white = Grid::from_fn(w, h, |x, y| stream.at(y * w + x).gaussian());
    let blurred = gaussian_blur(&white, nm.cnn_smooth_sigma);
    let peak = blurred
        .as_slice()
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        blurred.map(|v| v / peak)
    } else {
        blurred
    }
}

/// Relative prediction whose exact scale/shift correction is
/// `(cnn_a, cnn_b)` up to the smooth multiplicative error.
pub fn simulate_relative_depth(
    gt: &InverseDepthMap<f64>,
    nm: &NoiseModel,
    seed: u64,
    frame: u32,
) -> InverseDepthMap<f64> {
    let field = if nm.cnn_lowfreq_amp == 0.0 {
        Grid::filled(gt.width(), gt.height(), 0.0)
    } else {
        lowfreq_field(gt.width(), gt.height(), nm, seed, frame)
    };
    Grid::from_fn(gt.width(), gt.height(), |x, y| {
        let g = gt.get(x, y);
        if g <= 0.0 {
            return 0.0;
        }
        let v = (g * (1.0 + nm.cnn_lowfreq_amp * field.get(x, y)) - nm.cnn_b) / nm.cnn_a;
        v.max(MIN_RELATIVE_DEPTH)
    })
}
