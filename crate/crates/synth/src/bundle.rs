//! The standard desk-scale scene and keyframe bundles built from renders.

use densefuse_core::{Grid, Intrinsics, InverseDepthMap, Keyframe, Matrix7, Sim3, Sim3Tangent};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::noise::{simulate_relative_depth, simulate_semidense, NoiseModel};
use crate::rng::{Purpose, Stream};
use crate::scene::{render, Placement, PoseTuple, SceneSpec, Surface, Texture};
use crate::SynthError;

pub const STANDARD_SEED: u64 = 42;
/// Diagonal of every synthetic keyframe's pose covariance.
pub const POSE_COVARIANCE: f64 = 1e-4;
/// Planes that are "unbounded" for the standard scene; finite so the spec
/// survives a JSON round trip.
const WALL_EXTENT: f64 = 1e3;

/// A scene together with the observation model, as read by `synth --spec`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub scene: SceneSpec,
    #[serde(default)]
    pub noise: NoiseModel,
}

/// Two planes and a box seen by 8 cameras moving sideways on a shallow
/// arc with a slight yaw: a noise-textured back wall, a textureless tilted panel and a
/// checkered box in front of both.
pub fn standard_scene() -> SceneSpec {
    let wall = Surface::Plane {
        placement: Placement::at([0.0, 0.0, 0.95]),
        half_extent: [WALL_EXTENT, WALL_EXTENT],
        texture: Texture::Noise {
            seed: 7,
            mean: 128.0,
            amplitude: 45.0,
            min_wavelength: 0.02,
            max_wavelength: 0.08,
            components: 12,
        },
    };
    let panel = Surface::Plane {
        placement: Placement::rotated([-0.2, 0.0, 0.75], [0.0, 1.0, 0.0], 10f64.to_radians()),
        half_extent: [0.12, 0.25],
        texture: Texture::Flat { value: 170.0 },
    };
    let cube = Surface::Box {
        placement: Placement::rotated([0.13, 0.04, 0.62], [0.0, 1.0, 0.0], 10f64.to_radians()),
        half_size: [0.08, 0.08, 0.08],
        texture: Texture::Checker {
            size: 0.04,
            low: 60.0,
            high: 200.0,
        },
    };
    let trajectory: Vec<PoseTuple> = (0..8)
        .map(|i| {
            let f = i as f64;
            let yaw = (0.5 * f).to_radians();
            let (s, c) = (0.5 * yaw).sin_cos();
            [
                -0.05 + 0.014 * f,
                0.002 * f,
                0.003 * f + 0.0005 * f * (7.0 - f),
                0.0,
                s,
                0.0,
                c,
            ]
        })
        .collect();
    SceneSpec {
        surfaces: vec![wall, panel, cube],
        trajectory,
        intrinsics: [250.0, 250.0, 159.5, 119.5],
        width: 320,
        height: 240,
        seed: STANDARD_SEED,
    }
}

pub fn standard_noise() -> NoiseModel {
    NoiseModel::default()
}

/// Keyframes with their ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticBundle {
    pub intrinsics: Intrinsics<f64>,
    pub keyframes: Vec<Keyframe<f64>>,
    pub gt_depth: Vec<InverseDepthMap<f64>>,
    pub gt_poses: Vec<Sim3<f64>>,
}

/// Renders the scene and simulates the front-end observations of every
/// view, with noise streams keyed by `spec.seed`. Keyframe ids are the
/// trajectory indices and the keyframe poses are the ground truth.
pub fn make_bundle(spec: &SceneSpec, nm: &NoiseModel) -> Result<SyntheticBundle, SynthError> {
    nm.validate()?;
    let views = render(spec)?;
    let intrinsics = spec.intrinsics()?;
    let mut keyframes = Vec::with_capacity(views.len());
    let mut gt_depth = Vec::with_capacity(views.len());
    let mut gt_poses = Vec::with_capacity(views.len());
    for (i, view) in views.into_iter().enumerate() {
        let frame = i as u32;
        let (semi_dense, semi_dense_var) =
            simulate_semidense(&view.image, &view.depth, nm, spec.seed, frame);
        let cnn_depth = simulate_relative_depth(&view.depth, nm, spec.seed, frame);
        keyframes.push(Keyframe {
            id: frame,
            image: view.image,
            semi_dense,
            semi_dense_var,
            cnn_depth,
            pose: view.pose,
            pose_cov: Matrix7::identity() * POSE_COVARIANCE,
        });
        gt_depth.push(view.depth);
        gt_poses.push(view.pose);
    }
    Ok(SyntheticBundle {
        intrinsics,
        keyframes,
        gt_depth,
        gt_poses,
    })
}

/// The standard synthetic bundle: standard scene, default noise, seed 42.
pub fn standard_bundle() -> SyntheticBundle {
    make_bundle(&standard_scene(), &standard_noise()).expect("standard scene is valid")
}

/// Right-multiplies every pose by `exp(ξ)` with `ξ ~ N(0, σ² I₇)`. Pose `i`
/// draws its seven Gaussians from the pose stream of frame `i`.
pub fn perturb_poses(poses: &[Sim3<f64>], sigma: f64, seed: u64) -> Vec<Sim3<f64>> {
    poses
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut s = Stream::new(seed, i as u32, Purpose::Pose);
            s.at(0);
            let xi = Sim3Tangent::from_fn(|_, _| sigma * s.gaussian());
            p.compose(&Sim3::exp(&xi))
        })
        .collect()
}

/// Pixels of the current view that are visible and unoccluded in the
/// previous view: the ground-truth point projects inside the previous frame
/// and the previous ground truth at the nearest pixel agrees with its
/// inverse depth within `rel_tol`.
pub fn covisible_mask(
    cur_gt: &InverseDepthMap<f64>,
    prev_gt: &InverseDepthMap<f64>,
    cur_to_prev: &Sim3<f64>,
    k: &Intrinsics<f64>,
    rel_tol: f64,
) -> Grid<bool> {
    let (w, h) = cur_gt.dims();
    Grid::from_fn(w, h, |x, y| {
        let d = cur_gt.get(x, y);
        if d <= 0.0 {
            return false;
        }
        let p = Vector3::new(
            (x as f64 - k.cx) / k.fx / d,
            (y as f64 - k.cy) / k.fy / d,
            1.0 / d,
        );
        let q = cur_to_prev.transform_point(&p);
        if q.z <= 0.0 {
            return false;
        }
        let (u, v) = (k.fx * q.x / q.z + k.cx, k.fy * q.y / q.z + k.cy);
        let (u, v) = (u.round(), v.round());
        if u < 0.0 || v < 0.0 || u >= w as f64 || v >= h as f64 {
            return false;
        }
        let g = prev_gt.get(u as usize, v as usize);
        g > 0.0 && ((g - 1.0 / q.z) * q.z).abs() <= rel_tol
    })
}
