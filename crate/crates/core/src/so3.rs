//! SO(3) primitives: projection onto the rotation group, exponential and
//! logarithm maps, angular distance and Haar sampling.
//!
//! Angles are radians internally; [`angular_distance`] reports degrees since
//! that is the unit every metric and CLI flag uses.

use std::fmt;
use std::ops::Mul;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Axis-angle vector: direction is the axis, norm is the angle in radians.
pub type TangentVector = Vector3<f64>;

/// Tolerance used when validating rotation matrices.
pub const ROTATION_TOL: f64 = 1e-9;

/// Below this largest singular value a matrix is treated as zero by [`project_so3`].
pub const DEGENERATE_SINGULAR_VALUE: f64 = 1e-12;

const SMALL_ANGLE: f64 = 1e-6;
// Switch to the symmetric-part axis extraction when within this of pi.
const NEAR_PI: f64 = 1e-2;

/// A 3x3 orthonormal matrix with determinant +1.
#[derive(Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Wraps `m` after checking orthonormality and determinant at [`ROTATION_TOL`].
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        Self::from_matrix_with_tol(m, ROTATION_TOL)
    }

    pub fn from_matrix_with_tol(m: Matrix3<f64>, tol: f64) -> Result<Self> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument(
                "rotation matrix has non-finite entries".into(),
            ));
        }
        let orth = (m.transpose() * m - Matrix3::identity()).norm();
        let det = m.determinant();
        if orth > tol || (det - 1.0).abs() > tol {
            return Err(Error::InvalidArgument(format!(
                "matrix is not a rotation (|R^T R - I| = {orth:.3e}, det = {det:.12})"
            )));
        }
        Ok(Rotation(m))
    }

    /// Wraps `m` without validation. The caller guarantees it is a rotation.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Rotation(m)
    }

    /// Rotation by `angle` radians about `axis` (need not be normalized).
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        exp_so3(&(axis.normalize() * angle))
    }

    #[inline]
    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    #[inline]
    pub fn into_inner(self) -> Matrix3<f64> {
        self.0
    }

    #[inline]
    pub fn transpose(&self) -> Self {
        Rotation(self.0.transpose())
    }

    /// Returns true if the matrix satisfies the rotation invariants at `tol`.
    pub fn is_valid(m: &Matrix3<f64>, tol: f64) -> bool {
        m.iter().all(|v| v.is_finite())
            && (m.transpose() * m - Matrix3::identity()).norm() <= tol
            && (m.determinant() - 1.0).abs() <= tol
    }
}

impl fmt::Debug for Rotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = &self.0;
        write!(
            f,
            "Rotation[[{:.6}, {:.6}, {:.6}], [{:.6}, {:.6}, {:.6}], [{:.6}, {:.6}, {:.6}]]",
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)]
        )
    }
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<&Rotation> for &Rotation {
    type Output = Rotation;
    fn mul(self, rhs: &Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

/// Skew-symmetric matrix `[v]x` such that `[v]x w = v x w`.
#[inline]
pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`hat`] applied to the skew part: `vee(A) = ((A - A^T) / 2)^vee`.
#[inline]
pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// Nearest rotation in Frobenius norm: `U diag(1, 1, det(U V^T)) V^T`.
///
/// A (numerically) zero matrix maps to the identity. This is what lets a
/// coordinate descent sweep start from an all-zeros stack.
pub fn project_so3(m: &Matrix3<f64>) -> Result<Rotation> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidArgument(
            "cannot project a non-finite matrix onto SO(3)".into(),
        ));
    }
    Ok(project_so3_finite(m))
}

/// [`project_so3`] for inputs already known to be finite.
pub(crate) fn project_so3_finite(m: &Matrix3<f64>) -> Rotation {
    let svd = m.svd(true, true);
    if svd.singular_values[0] < DEGENERATE_SINGULAR_VALUE {
        return Rotation::identity();
    }
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let mut uv = u * v_t;
    if uv.determinant() < 0.0 {
        // Flip the direction of the smallest singular value.
        let mut u = u;
        u.column_mut(2).neg_mut();
        uv = u * v_t;
    }
    Rotation(uv)
}

/// Rodrigues formula, with a Taylor expansion for tiny angles.
pub fn exp_so3(omega: &TangentVector) -> Rotation {
    let theta2 = omega.norm_squared();
    let theta = theta2.sqrt();
    let k = hat(omega);
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Rotation(Matrix3::identity() + k * a + k * k * b)
}

/// Rotation angle in radians, in `[0, pi]`.
///
/// Uses `atan2(|vee|, (tr - 1) / 2)`, which stays accurate near 0 and pi.
pub fn rotation_angle(r: &Rotation) -> f64 {
    let m = r.matrix();
    let cos = 0.5 * (m.trace() - 1.0);
    let sin = vee(m).norm();
    sin.atan2(cos)
}

/// Logarithm map with `|omega| <= pi`.
///
/// For angles within 1e-2 of pi the axis is read from the column of the
/// symmetric part with the largest diagonal; its sign is chosen so the axis
/// agrees with the skew part. At exactly pi the skew part vanishes and the
/// axis is returned with its largest-magnitude component positive.
pub fn log_so3(r: &Rotation) -> TangentVector {
    let m = r.matrix();
    let w = vee(m);
    let sin = w.norm();
    let cos = 0.5 * (m.trace() - 1.0);
    let theta = sin.atan2(cos);

    if theta < SMALL_ANGLE {
        // theta / sin(theta) ~ 1 + theta^2 / 6
        return w * (1.0 + theta * theta / 6.0);
    }
    if theta < std::f64::consts::PI - NEAR_PI {
        return w * (theta / sin);
    }

    // R + R^T = 2 cos I + 2 (1 - cos) n n^T
    let sym = (m + m.transpose()) * 0.5;
    let nnt = (sym - Matrix3::identity() * cos) / (1.0 - cos);
    let k = (0..3)
        .max_by(|&a, &b| nnt[(a, a)].total_cmp(&nnt[(b, b)]))
        .unwrap_or(0);
    let mut axis = nnt.column(k).into_owned() / nnt[(k, k)].max(0.0).sqrt();
    axis.normalize_mut();
    if axis.dot(&w) < 0.0 {
        axis.neg_mut();
    }
    axis * theta
}

/// Geodesic distance `|log(a^T b)|` in degrees, in `[0, 180]`.
pub fn angular_distance(a: &Rotation, b: &Rotation) -> f64 {
    let rel = Rotation(a.matrix().transpose() * b.matrix());
    rotation_angle(&rel).to_degrees()
}

/// Draws a rotation from the Haar measure on SO(3).
///
/// A normalized 4D standard Gaussian is uniform on the unit quaternion sphere,
/// which double covers SO(3) uniformly.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Rotation {
    loop {
        let q = Quaternion::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        if q.norm() > 1e-12 {
            let uq = UnitQuaternion::from_quaternion(q);
            return Rotation(uq.to_rotation_matrix().into_inner());
        }
    }
}

/// Uniformly distributed unit vector.
pub fn random_unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}
