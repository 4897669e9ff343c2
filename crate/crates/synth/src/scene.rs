//! Textured piecewise-planar scenes and their ray-cast rendering.

use densefuse_core::{GrayImage, Grid, Intrinsics, InverseDepthMap, Sim3};
use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::rng::{Purpose, Stream};
use crate::SynthError;

/// Surfaces must be at least this far in front of every camera (m).
pub const MIN_SURFACE_DISTANCE: f64 = 0.1;

/// Procedural intensity pattern over a surface's 2-D coordinates (m).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Texture {
    Flat {
        value: f64,
    },
    Checker {
        size: f64,
        low: f64,
        high: f64,
    },
    /// Sum of `components` cosines with random direction, phase and a
    /// wavelength drawn uniformly in `[min_wavelength, max_wavelength]`.
    Noise {
        seed: u64,
        mean: f64,
        amplitude: f64,
        min_wavelength: f64,
        max_wavelength: f64,
        components: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Wave {
    kx: f64,
    ky: f64,
    phase: f64,
}

/// A texture with its random parameters drawn.
#[derive(Clone, Debug, PartialEq)]
pub struct CompiledTexture {
    texture: Texture,
    waves: Vec<Wave>,
}

impl CompiledTexture {
    pub fn new(texture: &Texture) -> Self {
        let waves = match *texture {
            Texture::Noise {
                seed,
                min_wavelength,
                max_wavelength,
                components,
                ..
            } => {
                let mut s = Stream::new(seed, 0, Purpose::Texture);
                (0..components)
                    .map(|c| {
                        let s = s.at(c);
                        let lambda =
                            min_wavelength + (max_wavelength - min_wavelength) * s.uniform();
                        let dir = std::f64::consts::TAU * s.uniform();
                        let phase = std::f64::consts::TAU * s.uniform();
                        let k = std::f64::consts::TAU / lambda;
                        Wave {
                            kx: k * dir.cos(),
                            ky: k * dir.sin(),
                            phase,
                        }
                    })
                    .collect()
            }
            _ => Vec::new(),
        };
        Self {
            texture: texture.clone(),
            waves,
        }
    }

    /// Intensity in `[0, 255]` at surface coordinates `(s, t)`.
    pub fn sample(&self, s: f64, t: f64) -> f64 {
        let v = match self.texture {
            Texture::Flat { value } => value,
            Texture::Checker { size, low, high } => {
                if ((s / size).floor() + (t / size).floor()).rem_euclid(2.0) < 0.5 {
                    low
                } else {
                    high
                }
            }
            Texture::Noise {
                mean, amplitude, ..
            } => {
                let n = self.waves.len().max(1) as f64;
                let sum: f64 = self
                    .waves
                    .iter()
                    .map(|w| (w.kx * s + w.ky * t + w.phase).cos())
                    .sum();
                mean + amplitude * sum / n.sqrt()
            }
        };
        v.clamp(0.0, 255.0)
    }
}

/// Rigid placement: world point = `rotation · local + translation`.
/// Rotation is a unit quaternion `[x, y, z, w]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub translation: [f64; 3],
    pub rotation: [f64; 4],
}

impl Placement {
    pub fn at(translation: [f64; 3]) -> Self {
        Self {
            translation,
            rotation: [0.0, 0.0, 0.0, 1.0],
        }
    }

    /// Rotation by `angle` (rad) about a world axis.
    pub fn rotated(translation: [f64; 3], axis: [f64; 3], angle: f64) -> Self {
        let q = UnitQuaternion::from_axis_angle(
            &nalgebra::Unit::new_normalize(Vector3::from(axis)),
            angle,
        );
        let c = q.quaternion().coords;
        Self {
            translation,
            rotation: [c.x, c.y, c.z, c.w],
        }
    }

    fn quaternion(&self) -> UnitQuaternion<f64> {
        let [x, y, z, w] = self.rotation;
        UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Surface {
    /// The local plane `z = 0`, limited to `|x| ≤ half_extent[0]`,
    /// `|y| ≤ half_extent[1]` (use infinity for an unbounded plane).
    Plane {
        placement: Placement,
        half_extent: [f64; 2],
        texture: Texture,
    },
    /// Axis-aligned box in local coordinates, centred at the origin.
    Box {
        placement: Placement,
        half_size: [f64; 3],
        texture: Texture,
    },
}

/// Camera-to-world pose as a TUM tuple `[tx, ty, tz, qx, qy, qz, qw]`.
pub type PoseTuple = [f64; 7];

pub fn pose_from_tuple(t: &PoseTuple) -> Sim3<f64> {
    Sim3::new(
        UnitQuaternion::from_quaternion(Quaternion::new(t[6], t[3], t[4], t[5])),
        Vector3::new(t[0], t[1], t[2]),
        1.0,
    )
}

pub fn pose_to_tuple(p: &Sim3<f64>) -> PoseTuple {
    let t = p.translation();
    let q = p.rotation().quaternion().coords;
    [t.x, t.y, t.z, q.x, q.y, q.z, q.w]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub surfaces: Vec<Surface>,
    pub trajectory: Vec<PoseTuple>,
    pub intrinsics: [f64; 4],
    pub width: usize,
    pub height: usize,
    pub seed: u64,
}

impl SceneSpec {
    pub fn intrinsics(&self) -> Result<Intrinsics<f64>, SynthError> {
        let [fx, fy, cx, cy] = self.intrinsics;
        Intrinsics::new(fx, fy, cx, cy, self.width, self.height)
            .map_err(|e| SynthError::InvalidSpec(e.to_string()))
    }

    pub fn poses(&self) -> Vec<Sim3<f64>> {
        self.trajectory.iter().map(pose_from_tuple).collect()
    }

    /// The same scene with every length multiplied by `f`: renders the same
    /// images, with inverse depth divided by `f`.
    pub fn scaled(&self, f: f64) -> SceneSpec {
        let scale_texture = |t: &Texture| match *t {
            Texture::Checker { size, low, high } => Texture::Checker {
                size: size * f,
                low,
                high,
            },
            Texture::Noise {
                seed,
                mean,
                amplitude,
                min_wavelength,
                max_wavelength,
                components,
            } => Texture::Noise {
                seed,
                mean,
                amplitude,
                min_wavelength: min_wavelength * f,
                max_wavelength: max_wavelength * f,
                components,
            },
            ref flat => flat.clone(),
        };
        let scale_placement = |p: &Placement| Placement {
            translation: p.translation.map(|v| v * f),
            rotation: p.rotation,
        };
        let surfaces = self
            .surfaces
            .iter()
            .map(|s| match s {
                Surface::Plane {
                    placement,
                    half_extent,
                    texture,
                } => Surface::Plane {
                    placement: scale_placement(placement),
                    half_extent: half_extent.map(|v| v * f),
                    texture: scale_texture(texture),
                },
                Surface::Box {
                    placement,
                    half_size,
                    texture,
                } => Surface::Box {
                    placement: scale_placement(placement),
                    half_size: half_size.map(|v| v * f),
                    texture: scale_texture(texture),
                },
            })
            .collect();
        let trajectory = self
            .trajectory
            .iter()
            .map(|t| [t[0] * f, t[1] * f, t[2] * f, t[3], t[4], t[5], t[6]])
            .collect();
        SceneSpec {
            surfaces,
            trajectory,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.surfaces.is_empty() {
            return Err(SynthError::InvalidSpec("scene has no surface".into()));
        }
        if self.trajectory.len() < 2 {
            return Err(SynthError::InvalidSpec(
                "trajectory needs at least 2 poses".into(),
            ));
        }
        if self.trajectory.iter().flatten().any(|v| !v.is_finite()) {
            return Err(SynthError::InvalidSpec("non-finite pose".into()));
        }
        self.intrinsics().map(|_| ())
    }
}

/// A ray-surface hit: ray parameter and intensity.
type Hit = (f64, f64);

struct CompiledSurface {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
    shape: Shape,
    texture: CompiledTexture,
}

enum Shape {
    Plane([f64; 2]),
    Box([f64; 3]),
}

impl CompiledSurface {
    fn new(s: &Surface) -> Self {
        let (placement, shape, texture) = match s {
            Surface::Plane {
                placement,
                half_extent,
                texture,
            } => (placement, Shape::Plane(*half_extent), texture),
            Surface::Box {
                placement,
                half_size,
                texture,
            } => (placement, Shape::Box(*half_size), texture),
        };
        Self {
            rotation: placement.quaternion(),
            translation: Vector3::from(placement.translation),
            shape,
            texture: CompiledTexture::new(texture),
        }
    }

    /// Nearest hit with positive ray parameter.
    fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
        let inv = self.rotation.inverse();
        let o = inv * (origin - self.translation);
        let d = inv * dir;
        match self.shape {
            Shape::Plane([ex, ey]) => {
                if d.z == 0.0 {
                    return None;
                }
                let t = -o.z / d.z;
                let p = o + d * t;
                (t > 0.0 && p.x.abs() <= ex && p.y.abs() <= ey)
                    .then(|| (t, self.texture.sample(p.x, p.y)))
            }
            Shape::Box(h) => {
                // Slab intersection; remember which axis the entry face is on.
                let (mut t_near, mut t_far, mut axis) = (f64::NEG_INFINITY, f64::INFINITY, 0usize);
                for a in 0..3 {
                    if d[a] == 0.0 {
                        if o[a].abs() > h[a] {
                            return None;
                        }
                        continue;
                    }
                    let t1 = (-h[a] - o[a]) / d[a];
                    let t2 = (h[a] - o[a]) / d[a];
                    let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
                    if lo > t_near {
                        t_near = lo;
                        axis = a;
                    }
                    t_far = t_far.min(hi);
                }
                if t_near > t_far || t_near <= 0.0 {
                    return None;
                }
                let p = o + d * t_near;
                let (s, t) = match axis {
                    0 => (p.y, p.z),
                    1 => (p.x, p.z),
                    _ => (p.x, p.y),
                };
                Some((t_near, self.texture.sample(s, t)))
            }
        }
    }
}

/// One rendered camera.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedView {
    pub image: GrayImage<f64>,
    /// Exact inverse depth; `0` where the ray hits nothing.
    pub depth: InverseDepthMap<f64>,
    pub pose: Sim3<f64>,
}

/// Ray-casts every pose of the trajectory.
///
/// Rays are `R·(u', v', 1)` with normalized pixel coordinates, so the ray
/// parameter of a hit is its camera depth.
pub fn render(spec: &SceneSpec) -> Result<Vec<RenderedView>, SynthError> {
    spec.validate()?;
    let k = spec.intrinsics()?;
    let surfaces: Vec<CompiledSurface> = spec.surfaces.iter().map(CompiledSurface::new).collect();
    spec.poses()
        .iter()
        .enumerate()
        .map(|(frame, pose)| {
            let view = render_view(&surfaces, pose, &k);
            let valid = view.depth.valid_count();
            if valid == 0 {
                return Err(SynthError::EmptyView { frame });
            }
            if view
                .depth
                .as_slice()
                .iter()
                .any(|&d| d > 1.0 / MIN_SURFACE_DISTANCE)
            {
                return Err(SynthError::InvalidSpec(format!(
                    "a surface is closer than {MIN_SURFACE_DISTANCE} m to camera {frame}"
                )));
            }
            Ok(view)
        })
        .collect()
}

fn render_view(
    surfaces: &[CompiledSurface],
    pose: &Sim3<f64>,
    k: &Intrinsics<f64>,
) -> RenderedView {
    let r = pose.rotation_matrix() * pose.scale();
    let origin = *pose.translation();
    let mut image = Grid::filled(k.width, k.height, 0.0);
    let mut depth = Grid::filled(k.width, k.height, 0.0);
    for y in 0..k.height {
        for x in 0..k.width {
            let ray = Vector3::new((x as f64 - k.cx) / k.fx, (y as f64 - k.cy) / k.fy, 1.0);
            let dir = r * ray;
            let hit = surfaces
                .iter()
                .filter_map(|s| s.intersect(&origin, &dir))
                .fold(None, |best: Option<Hit>, h| match best {
                    Some(b) if b.0 <= h.0 => Some(b),
                    _ => Some(h),
                });
            if let Some((t, intensity)) = hit {
                depth.set(x, y, 1.0 / t);
                image.set(x, y, intensity);
            }
        }
    }
    RenderedView {
        image,
        depth,
        pose: *pose,
    }
}
