//! Sim(3) similarity transforms, pinhole projection and inverse-depth warping.
//!
//! A pose acts on points as `p ↦ s·R·p + t`. Tangent vectors are ordered
//! `[ρ (3), ω (3), σ (1)]`: translational part, rotation vector, log-scale.

use nalgebra::{Matrix3, Matrix4, SMatrix, SVector, Unit, UnitQuaternion, Vector3};

use crate::error::GeometryError;
use crate::scalar::Real;
use crate::types::{Intrinsics, InverseDepthMap};

pub type Vector7<T> = SVector<T, 7>;
pub type Matrix7<T> = SMatrix<T, 7, 7>;
/// Lie-algebra coordinates of a [`Sim3`].
pub type Sim3Tangent<T> = Vector7<T>;

/// Distance from π below which [`Sim3::log`] refuses to answer.
pub const ANGLE_CUT_MARGIN: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sim3<T: Real> {
    rotation: UnitQuaternion<T>,
    translation: Vector3<T>,
    scale: T,
}

pub fn skew<T: Real>(v: &Vector3<T>) -> Matrix3<T> {
    let z = T::zero();
    Matrix3::new(z, -v.z, v.y, v.z, z, -v.x, -v.y, v.x, z)
}

/// `W(ω, σ) = ∫₀¹ e^{σu} exp(u ω̂) du`, the matrix mapping `ρ` to the
/// translation of `exp([ρ, ω, σ])`.
fn sim3_w<T: Real>(omega: &Vector3<T>, sigma: T) -> Matrix3<T> {
    let one = T::one();
    let theta_sq = omega.norm_squared();
    let k = skew(omega);
    let k2 = k * k;

    let (a, b, c) = if theta_sq < T::EPS {
        // ∫u e^{σu}, ∫u²/2 e^{σu}
        let (i1, i2) = if sigma.abs() < one {
            let mut term = one;
            let mut i1 = T::zero();
            let mut i2 = T::zero();
            for n in 0..20usize {
                let nn = T::from_count(n);
                i1 += term / (nn + T::lit(2.0));
                i2 += term / (T::lit(2.0) * (nn + T::lit(3.0)));
                term = term * sigma / (nn + one);
            }
            (i1, i2)
        } else {
            let e = sigma.exp();
            let s2 = sigma * sigma;
            (
                (e * (sigma - one) + one) / s2,
                (e * (s2 - T::lit(2.0) * sigma + T::lit(2.0)) - T::lit(2.0))
                    / (T::lit(2.0) * s2 * sigma),
            )
        };
        (scale_integral(sigma), i1, i2)
    } else {
        let theta = theta_sq.sqrt();
        let e = sigma.exp();
        let (s, co) = theta.sin_cos();
        let denom = sigma * sigma + theta_sq;
        let ic = (e * (sigma * co + theta * s) - sigma) / denom;
        let is = (e * (sigma * s - theta * co) + theta) / denom;
        let a = scale_integral(sigma);
        (a, is / theta, (a - ic) / theta_sq)
    };
    Matrix3::identity() * a + k * b + k2 * c
}

/// `∫₀¹ e^{σu} du`.
fn scale_integral<T: Real>(sigma: T) -> T {
    if sigma.abs() < T::EPS {
        T::one() + sigma * T::lit(0.5)
    } else {
        sigma.exp_m1() / sigma
    }
}

impl<T: Real> Sim3<T> {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
            scale: T::one(),
        }
    }

    /// Builds a pose, renormalizing the rotation. Panics on non-positive scale.
    pub fn new(rotation: UnitQuaternion<T>, translation: Vector3<T>, scale: T) -> Self {
        assert!(scale > T::zero(), "Sim3 scale must be positive");
        Self {
            rotation: UnitQuaternion::new_normalize(rotation.into_inner()),
            translation,
            scale,
        }
    }

    /// Builds a pose from an already normalized rotation, keeping its bits
    /// unchanged (used when deserializing). Panics on non-positive scale.
    pub fn from_parts_unchecked(
        rotation: UnitQuaternion<T>,
        translation: Vector3<T>,
        scale: T,
    ) -> Self {
        assert!(scale > T::zero(), "Sim3 scale must be positive");
        Self {
            rotation,
            translation,
            scale,
        }
    }

    pub fn from_translation(t: Vector3<T>) -> Self {
        Self::new(UnitQuaternion::identity(), t, T::one())
    }

    pub fn rotation(&self) -> &UnitQuaternion<T> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<T> {
        &self.translation
    }

    pub fn scale(&self) -> T {
        self.scale
    }

    pub fn rotation_matrix(&self) -> Matrix3<T> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// `[[sR, t], [0, 1]]`.
    pub fn matrix(&self) -> Matrix4<T> {
        let mut m = Matrix4::identity();
        let sr = self.rotation_matrix() * self.scale;
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&sr);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn exp(xi: &Sim3Tangent<T>) -> Self {
        let rho = Vector3::new(xi[0], xi[1], xi[2]);
        let omega = Vector3::new(xi[3], xi[4], xi[5]);
        let sigma = xi[6];
        let w = sim3_w(&omega, sigma);
        Self {
            rotation: UnitQuaternion::from_scaled_axis(omega),
            translation: w * rho,
            scale: sigma.exp(),
        }
    }

    pub fn log(&self) -> Result<Sim3Tangent<T>, GeometryError> {
        let omega = self.rotation.scaled_axis();
        let theta = omega.norm();
        if (T::pi() - theta).abs() < T::lit(ANGLE_CUT_MARGIN) {
            return Err(GeometryError::AngleAtCut);
        }
        let sigma = self.scale.ln();
        let w = sim3_w(&omega, sigma);
        let rho = w
            .lu()
            .solve(&self.translation)
            .ok_or(GeometryError::AngleAtCut)?;
        Ok(Vector7::from_column_slice(&[
            rho.x, rho.y, rho.z, omega.x, omega.y, omega.z, sigma,
        ]))
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: UnitQuaternion::new_normalize((self.rotation * other.rotation).into_inner()),
            translation: self.rotation * other.translation * self.scale + self.translation,
            scale: self.scale * other.scale,
        }
    }

    pub fn inverse(&self) -> Self {
        let inv_rot = self.rotation.inverse();
        let inv_scale = T::one() / self.scale;
        Self {
            rotation: inv_rot,
            translation: -(inv_rot * self.translation) * inv_scale,
            scale: inv_scale,
        }
    }

    #[inline]
    pub fn transform_point(&self, p: &Vector3<T>) -> Vector3<T> {
        self.rotation * p * self.scale + self.translation
    }

    /// Relative pose mapping points of the camera posed at `from` into the
    /// camera posed at `to`, both camera-to-world.
    pub fn relative(from: &Self, to: &Self) -> Self {
        to.inverse().compose(from)
    }

    pub fn cast<U: Real>(&self) -> Sim3<U> {
        let q = self.rotation.quaternion();
        let c = |v: T| U::lit(v.to_f64());
        Sim3::new(
            UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
                c(q.w),
                c(q.i),
                c(q.j),
                c(q.k),
            )),
            Vector3::new(
                c(self.translation.x),
                c(self.translation.y),
                c(self.translation.z),
            ),
            c(self.scale),
        )
    }

    /// Rotation about a unit axis, for constructing test and scene poses.
    pub fn from_axis_angle(axis: &Vector3<T>, angle: T, translation: Vector3<T>) -> Self {
        Self::new(
            UnitQuaternion::from_axis_angle(&Unit::new_normalize(*axis), angle),
            translation,
            T::one(),
        )
    }
}

impl<T: Real> std::ops::Mul for Sim3<T> {
    type Output = Sim3<T>;

    fn mul(self, rhs: Self) -> Self {
        self.compose(&rhs)
    }
}

/// Camera point of pixel `px` at inverse depth `d` (`d > 0`).
#[inline]
pub fn backproject<T: Real>(px: (T, T), d: T, k: &Intrinsics<T>) -> Vector3<T> {
    let z = T::one() / d;
    Vector3::new((px.0 - k.cx) / k.fx * z, (px.1 - k.cy) / k.fy * z, z)
}

/// Sub-pixel location and inverse depth of a camera point.
#[inline]
pub fn project<T: Real>(p: &Vector3<T>, k: &Intrinsics<T>) -> Result<((T, T), T), GeometryError> {
    if p.z <= T::zero() {
        return Err(GeometryError::BehindCamera);
    }
    let inv_z = T::one() / p.z;
    Ok((
        (k.fx * p.x * inv_z + k.cx, k.fy * p.y * inv_z + k.cy),
        inv_z,
    ))
}

/// Nearest destination pixel of a sub-pixel location, if inside the frame.
#[inline]
pub fn round_to_pixel<T: Real>(uv: (T, T), width: usize, height: usize) -> Option<(usize, usize)> {
    let u = uv.0.round();
    let v = uv.1.round();
    if u < T::zero() || v < T::zero() {
        return None;
    }
    let (u, v) = (u.to_f64() as usize, v.to_f64() as usize);
    (u < width && v < height).then_some((u, v))
}

/// Forward-warps every valid pixel of `src` through `src_to_dst` into the
/// destination view. Each point lands on its nearest-integer pixel; the
/// nearer point (larger inverse depth) wins collisions and exact ties keep
/// the first source pixel in row-major order.
pub fn warp_depth_map<T: Real>(
    src: &InverseDepthMap<T>,
    src_to_dst: &Sim3<T>,
    k: &Intrinsics<T>,
) -> InverseDepthMap<T> {
    let (w, h) = src.dims();
    let mut out = InverseDepthMap::filled(w, h, T::zero());
    let sr = src_to_dst.rotation_matrix() * src_to_dst.scale();
    let t = src_to_dst.translation();
    for (x, y, d) in src.pixels() {
        if d <= T::zero() {
            continue;
        }
        // d·(S p) with p = K⁻¹ẋ / d, so the identity pose reproduces d exactly.
        let ray = Vector3::new(
            (T::from_count(x) - k.cx) / k.fx,
            (T::from_count(y) - k.cy) / k.fy,
            T::one(),
        );
        let q = sr * ray + t * d;
        if q.z <= T::zero() {
            continue;
        }
        let d_dst = d / q.z;
        let uv = (k.fx * q.x / q.z + k.cx, k.fy * q.y / q.z + k.cy);
        if let Some((u, v)) = round_to_pixel(uv, w, h) {
            if d_dst > out.get(u, v) {
                out.set(u, v, d_dst);
            }
        }
    }
    out
}
