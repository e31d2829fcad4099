//! Vector and matrix primitives on R^3 and SO(3).
//!
//! Attitudes are kept as full rotation matrices. [`Rotation`] is a checked
//! wrapper that can only be built from a matrix within [`SO3_TOLERANCE`] of
//! the group.

use std::ops::Mul;

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Bound on `‖RᵀR − I‖_F` and `|det R − 1|` for membership in SO(3).
pub const SO3_TOLERANCE: f64 = 1e-9;

/// Below this rotation angle `so3_exp` switches to its Taylor series.
const EXP_SERIES_THRESHOLD: f64 = 1e-6;

pub fn e3() -> Vec3 {
    Vec3::z()
}

/// Skew-symmetric matrix with `hat(v) * w == v.cross(&w)`.
pub fn hat(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// `‖RᵀR − I‖_F`.
pub fn orthogonality_error(m: &Mat3) -> f64 {
    (m.transpose() * m - Mat3::identity()).norm()
}

/// Rodrigues' formula for the exponential of `hat(w)`.
pub fn so3_exp(w: &Vec3) -> Rotation {
    let theta = w.norm();
    let w_hat = hat(w);
    let w_hat2 = w_hat * w_hat;
    let (a, b) = if theta < EXP_SERIES_THRESHOLD {
        let t2 = theta * theta;
        (1.0 - t2 / 6.0, 0.5 - t2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / (theta * theta))
    };
    Rotation(Mat3::identity() + w_hat * a + w_hat2 * b)
}

/// Projects `m` onto the nearest rotation in the Frobenius (polar) sense.
pub fn reorthonormalize(m: &Mat3) -> Result<Rotation> {
    if !m.iter().all(|x| x.is_finite()) {
        return Err(Error::NotRotation { reason: "non-finite entries".into(), matrix: *m });
    }
    let svd = m.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::NotRotation { reason: "singular value decomposition failed".into(), matrix: *m }),
    };
    let projected = u * v_t;
    let det = projected.determinant();
    if det <= 0.0 {
        return Err(Error::NotRotation {
            reason: format!("determinant {det:.6} after projection is not positive"),
            matrix: *m,
        });
    }
    Ok(Rotation(projected))
}

/// An element of SO(3), stored as the matrix whose columns are the body axes
/// expressed in the inertial frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[[f64; 3]; 3]", into = "[[f64; 3]; 3]")]
pub struct Rotation(Mat3);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Mat3::identity())
    }

    /// Checks `m` against the SO(3) membership tolerances.
    pub fn new(m: Mat3) -> Result<Self> {
        if !m.iter().all(|x| x.is_finite()) {
            return Err(Error::NotRotation { reason: "non-finite entries".into(), matrix: m });
        }
        let ortho = orthogonality_error(&m);
        if ortho > SO3_TOLERANCE {
            return Err(Error::NotRotation { reason: format!("‖RᵀR − I‖_F = {ortho:.3e}"), matrix: m });
        }
        let det = m.determinant();
        if (det - 1.0).abs() > SO3_TOLERANCE {
            return Err(Error::NotRotation { reason: format!("det = {det}"), matrix: m });
        }
        Ok(Rotation(m))
    }

    pub fn from_rows(rows: [[f64; 3]; 3]) -> Result<Self> {
        Self::new(mat_from_rows(rows))
    }

    /// Haar-uniform rotation from a uniformly random unit quaternion.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let q = nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]);
        let m = UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner();
        Rotation(m)
    }

    /// Rotation by `angle` about the unit vector `axis`.
    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        so3_exp(&(axis.normalize() * angle))
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Rotation(self.0.transpose())
    }

    /// Coordinates of inertial vector `r` in this body frame, `Rᵀ r`.
    pub fn to_body(&self, r: &Vec3) -> Vec3 {
        self.0.tr_mul(r)
    }

    /// Rotation angle in `[0, π]`.
    pub fn angle(&self) -> f64 {
        ((self.0.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }

    pub fn rows(&self) -> [[f64; 3]; 3] {
        std::array::from_fn(|r| std::array::from_fn(|c| self.0[(r, c)]))
    }
}

impl Mul<Vec3> for Rotation {
    type Output = Vec3;
    fn mul(self, rhs: Vec3) -> Vec3 {
        self.0 * rhs
    }
}

impl Mul<&Vec3> for &Rotation {
    type Output = Vec3;
    fn mul(self, rhs: &Vec3) -> Vec3 {
        self.0 * rhs
    }
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl TryFrom<[[f64; 3]; 3]> for Rotation {
    type Error = Error;
    fn try_from(rows: [[f64; 3]; 3]) -> Result<Self> {
        Self::from_rows(rows)
    }
}

impl From<Rotation> for [[f64; 3]; 3] {
    fn from(r: Rotation) -> Self {
        r.rows()
    }
}

pub fn mat_from_rows(rows: [[f64; 3]; 3]) -> Mat3 {
    Mat3::from_fn(|r, c| rows[r][c])
}

pub fn mat_rows(m: &Mat3) -> [[f64; 3]; 3] {
    std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)]))
}

pub fn random_unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    let [x, y, z]: [f64; 3] = UnitSphere.sample(rng);
    Vec3::new(x, y, z)
}
