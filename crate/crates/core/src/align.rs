//! Global scale/shift correction of a relative inverse-depth prediction.
//!
//! The prediction is the regressor and the semi-dense map the target:
//! `(a, b) = argmin Σ (a·cnn + b − semi)²` over pixels valid in both maps.

use crate::error::AlignError;
use crate::scalar::Real;
use crate::types::InverseDepthMap;

/// Threshold on the determinant of the 2×2 normal matrix.
pub const DEGENERATE_DETERMINANT: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineDepthCorrection<T> {
    /// Scale, unitless.
    pub a: T,
    /// Shift, 1/m.
    pub b: T,
}

impl<T: Real> AffineDepthCorrection<T> {
    pub fn identity() -> Self {
        Self {
            a: T::one(),
            b: T::zero(),
        }
    }

    #[inline]
    pub fn apply(&self, d: T) -> T {
        self.a * d + self.b
    }
}

/// Closed-form least-squares fit of the 2×2 normal equations.
pub fn solve_scale_shift<T: Real>(
    cnn: &InverseDepthMap<T>,
    semi: &InverseDepthMap<T>,
) -> Result<AffineDepthCorrection<T>, AlignError> {
    assert!(cnn.same_dims(semi), "maps must share dimensions");
    let zero = T::zero();
    let (mut n, mut sx, mut sxx, mut sy, mut sxy) = (zero, zero, zero, zero, zero);
    for (&x, &y) in cnn.as_slice().iter().zip(semi.as_slice()) {
        if x > zero && y > zero {
            n += T::one();
            sx += x;
            sxx += x * x;
            sy += y;
            sxy += x * y;
        }
    }
    // [sxx sx; sx n] [a; b] = [sxy; sy]
    let det = sxx * n - sx * sx;
    if !(det.abs() >= T::lit(DEGENERATE_DETERMINANT)) {
        return Err(AlignError::DegenerateRegression {
            determinant: det.to_f64(),
        });
    }
    let a = (n * sxy - sx * sy) / det;
    let b = (sxx * sy - sx * sxy) / det;
    if !(a > zero) {
        return Err(AlignError::NonPositiveScale { scale: a.to_f64() });
    }
    Ok(AffineDepthCorrection { a, b })
}

/// Maps every valid pixel through `a·d + b`, clamped below at `floor`.
pub fn apply_correction<T: Real>(
    cnn: &InverseDepthMap<T>,
    c: &AffineDepthCorrection<T>,
    floor: T,
) -> InverseDepthMap<T> {
    cnn.map(|d| {
        if d > T::zero() {
            c.apply(d).max(floor)
        } else {
            T::zero()
        }
    })
}
