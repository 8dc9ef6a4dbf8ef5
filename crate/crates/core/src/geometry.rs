//! Rigid-body poses in SE(2) and SE(3).
//!
//! Both dimensions share one representation: a 3×3 rotation matrix and a
//! 3-vector translation. Planar poses rotate about the z axis and keep a zero
//! z translation, so a 2D point is a [`Point`] whose z component is zero.
//! This keeps a single code path for every algorithm in the crate; the
//! dimension only decides which tangent and point coordinates are active.

use std::fmt;
use std::ops::Mul;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point or vector in the world or a sensor frame. Planar data uses z = 0.
pub type Point = Vector3<f64>;

/// Orthogonality residual above which a rotation is projected back onto SO(3).
const REORTHONORMALIZE_TOL: f64 = 1e-7;

/// Spatial dimension of a problem.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub enum Dim {
    Two,
    Three,
}

impl Dim {
    pub fn from_usize(d: usize) -> Result<Self> {
        match d {
            2 => Ok(Dim::Two),
            3 => Ok(Dim::Three),
            other => Err(Error::InvalidArgument(format!(
                "dimension must be 2 or 3, got {other}"
            ))),
        }
    }

    /// Ambient dimension d.
    pub fn d(self) -> usize {
        match self {
            Dim::Two => 2,
            Dim::Three => 3,
        }
    }

    /// Degrees of freedom of a pose: 3 in the plane, 6 in space.
    pub fn dof(self) -> usize {
        match self {
            Dim::Two => 3,
            Dim::Three => 6,
        }
    }

    /// Indices of the active coordinates inside the embedded 6-vector
    /// `[rotation (3); translation (3)]`.
    pub fn tangent_indices(self) -> &'static [usize] {
        match self {
            Dim::Two => &[2, 3, 4],
            Dim::Three => &[0, 1, 2, 3, 4, 5],
        }
    }

    /// Indices of the active coordinates of a [`Point`].
    pub fn point_indices(self) -> &'static [usize] {
        match self {
            Dim::Two => &[0, 1],
            Dim::Three => &[0, 1, 2],
        }
    }

    /// Number of rotational tangent coordinates.
    pub fn rot_dof(self) -> usize {
        match self {
            Dim::Two => 1,
            Dim::Three => 3,
        }
    }
}

impl TryFrom<usize> for Dim {
    type Error = Error;
    fn try_from(d: usize) -> Result<Self> {
        Dim::from_usize(d)
    }
}

impl From<Dim> for usize {
    fn from(d: Dim) -> usize {
        d.d()
    }
}

impl fmt::Display for Dim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}D", self.d())
    }
}

/// Builds a point from its active coordinates.
pub fn point_from_slice(dim: Dim, coords: &[f64]) -> Result<Point> {
    if coords.len() != dim.d() {
        return Err(Error::DimensionMismatch {
            expected: dim.d(),
            found: coords.len(),
        });
    }
    let mut p = Point::zeros();
    for (i, c) in coords.iter().enumerate() {
        p[i] = *c;
    }
    Ok(p)
}

/// Active coordinates of a point.
pub fn point_coords(dim: Dim, p: &Point) -> Vec<f64> {
    p.iter().take(dim.d()).copied().collect()
}

/// Local perturbation of a pose: a rotation vector and a translation offset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tangent {
    pub dim: Dim,
    pub rot: Vector3<f64>,
    pub trans: Vector3<f64>,
}

impl Tangent {
    pub fn zero(dim: Dim) -> Self {
        Tangent {
            dim,
            rot: Vector3::zeros(),
            trans: Vector3::zeros(),
        }
    }

    pub fn planar(theta: f64, tx: f64, ty: f64) -> Self {
        Tangent {
            dim: Dim::Two,
            rot: Vector3::new(0.0, 0.0, theta),
            trans: Vector3::new(tx, ty, 0.0),
        }
    }

    pub fn spatial(rot: Vector3<f64>, trans: Vector3<f64>) -> Self {
        Tangent {
            dim: Dim::Three,
            rot,
            trans,
        }
    }

    /// Reads `dim.dof()` values ordered rotation first, then translation.
    pub fn from_slice(dim: Dim, v: &[f64]) -> Result<Self> {
        if v.len() != dim.dof() {
            return Err(Error::DimensionMismatch {
                expected: dim.dof(),
                found: v.len(),
            });
        }
        Ok(match dim {
            Dim::Two => Tangent::planar(v[0], v[1], v[2]),
            Dim::Three => Tangent::spatial(
                Vector3::new(v[0], v[1], v[2]),
                Vector3::new(v[3], v[4], v[5]),
            ),
        })
    }

    /// Active coordinates, rotation first.
    pub fn to_vec(&self) -> Vec<f64> {
        let full = self.embedded();
        self.dim.tangent_indices().iter().map(|&i| full[i]).collect()
    }

    fn embedded(&self) -> [f64; 6] {
        [
            self.rot.x,
            self.rot.y,
            self.rot.z,
            self.trans.x,
            self.trans.y,
            self.trans.z,
        ]
    }

    pub fn norm(&self) -> f64 {
        (self.rot.norm_squared() + self.trans.norm_squared()).sqrt()
    }
}

/// Element of SE(d): `x ↦ R·x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    dim: Dim,
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Pose {
    pub fn identity(dim: Dim) -> Self {
        Pose {
            dim,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Planar pose with heading `theta` (radians) at `(x, y)`.
    pub fn planar(theta: f64, x: f64, y: f64) -> Self {
        Pose {
            dim: Dim::Two,
            rotation: rot_z(theta),
            translation: Vector3::new(x, y, 0.0),
        }
    }

    pub fn spatial(rotation: &UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Pose {
            dim: Dim::Three,
            rotation: *rotation.to_rotation_matrix().matrix(),
            translation,
        }
    }

    /// Spatial pose from a (not necessarily normalized) quaternion given in
    /// g2o order `(qx, qy, qz, qw)`.
    pub fn from_quaternion_xyzw(q: [f64; 4], translation: Vector3<f64>) -> Result<Self> {
        let quat = nalgebra::Quaternion::new(q[3], q[0], q[1], q[2]);
        let n = quat.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "quaternion {q:?} cannot be normalized"
            )));
        }
        Ok(Pose::spatial(&UnitQuaternion::from_quaternion(quat), translation))
    }

    /// Validating constructor from a rotation matrix.
    pub fn from_parts(dim: Dim, rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let ortho = (rotation * rotation.transpose() - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        if ortho > 1e-9 || (det - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "rotation is not in SO(3): orthogonality residual {ortho:e}, det {det}"
            )));
        }
        if dim == Dim::Two {
            let planar = rotation[(2, 2)] - 1.0;
            if planar.abs() > 1e-9 || translation.z != 0.0 {
                return Err(Error::InvalidArgument(
                    "planar pose must rotate about z and have zero z translation".into(),
                ));
            }
        }
        Ok(Pose {
            dim,
            rotation,
            translation,
        })
    }

    pub fn dim(&self) -> Dim {
        self.dim
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Heading angle of a planar pose, in (-π, π].
    pub fn heading(&self) -> f64 {
        self.rotation[(1, 0)].atan2(self.rotation[(0, 0)])
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rotation))
    }

    pub fn compose(&self, other: &Pose) -> Result<Pose> {
        self.check_dim(other.dim)?;
        Ok(self.compose_unchecked(other))
    }

    fn compose_unchecked(&self, other: &Pose) -> Pose {
        let mut out = Pose {
            dim: self.dim,
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        };
        out.reorthonormalize();
        out
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            dim: self.dim,
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `inverse(self) ∘ other`, the pose of `other` seen from `self`.
    pub fn between(&self, other: &Pose) -> Result<Pose> {
        self.check_dim(other.dim)?;
        Ok(self.inverse().compose_unchecked(other))
    }

    /// Maps a measurement from this pose's frame to the world frame: `R·z + t`.
    pub fn project_to_world(&self, z: &Point) -> Point {
        self.rotation * z + self.translation
    }

    /// Expected measurement of world point `y` from this pose: `Rᵀ·(y − t)`.
    pub fn predict_measurement(&self, y: &Point) -> Point {
        self.rotation.tr_mul(&(y - self.translation))
    }

    /// Right-multiplies the rotation by `exp(δ.rot)` and adds `δ.trans`.
    pub fn retract(&self, delta: &Tangent) -> Pose {
        let mut out = Pose {
            dim: self.dim,
            rotation: self.rotation * so3_exp(&delta.rot),
            translation: self.translation + delta.trans,
        };
        if self.dim == Dim::Two {
            // Keep planar poses exactly planar.
            out.translation.z = 0.0;
        }
        out.reorthonormalize();
        out
    }

    /// Inverse of [`Pose::retract`]: the tangent taking `self` to `other`.
    pub fn local(&self, other: &Pose) -> Tangent {
        let rot = so3_log(&self.rotation.tr_mul(&other.rotation));
        let trans = other.translation - self.translation;
        match self.dim {
            Dim::Two => Tangent::planar(rot.z, trans.x, trans.y),
            Dim::Three => Tangent::spatial(rot, trans),
        }
    }

    /// Largest absolute entry of `R·Rᵀ − I`.
    pub fn orthogonality_residual(&self) -> f64 {
        (self.rotation * self.rotation.transpose() - Matrix3::identity())
            .abs()
            .max()
    }

    fn reorthonormalize(&mut self) {
        if self.orthogonality_residual() <= REORTHONORMALIZE_TOL {
            return;
        }
        self.rotation = match self.dim {
            Dim::Two => rot_z(self.heading()),
            Dim::Three => polar_rotation(&self.rotation),
        };
    }

    fn check_dim(&self, other: Dim) -> Result<()> {
        if self.dim != other {
            return Err(Error::DimensionMismatch {
                expected: self.dim.d(),
                found: other.d(),
            });
        }
        Ok(())
    }

    /// Max-norm distance between two poses' matrices, for tolerance checks.
    pub fn max_abs_diff(&self, other: &Pose) -> f64 {
        let r = (self.rotation - other.rotation).abs().max();
        let t = (self.translation - other.translation).abs().max();
        r.max(t)
    }
}

impl Mul for &Pose {
    type Output = Pose;

    /// Composition. Panics on dimension mismatch; use [`Pose::compose`] for a
    /// checked version.
    fn mul(self, rhs: &Pose) -> Pose {
        assert_eq!(self.dim, rhs.dim, "composing poses of different dimension");
        self.compose_unchecked(rhs)
    }
}

impl fmt::Display for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = &self.translation;
        match self.dim {
            Dim::Two => write!(f, "SE2(θ={:.4}, t=[{:.4}, {:.4}])", self.heading(), t.x, t.y),
            Dim::Three => {
                let q = self.quaternion();
                write!(
                    f,
                    "SE3(q=[{:.4}, {:.4}, {:.4}, {:.4}], t=[{:.4}, {:.4}, {:.4}])",
                    q.i, q.j, q.k, q.w, t.x, t.y, t.z
                )
            }
        }
    }
}

pub(crate) fn rot_z(theta: f64) -> Matrix3<f64> {
    let (s, c) = theta.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn polar_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u2 = u;
        u2.column_mut(2).neg_mut();
        r = u2 * v_t;
    }
    r
}

/// Skew-symmetric matrix with `skew(a)·b = a × b`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues' formula.
pub fn so3_exp(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    if omega.x == 0.0 && omega.y == 0.0 {
        return rot_z(omega.z);
    }
    let k = skew(omega);
    let (a, b) = if theta2 < 1e-12 {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Matrix3::identity() + k * a + k * k * b
}

/// Rotation vector of a rotation matrix, angle in [0, π].
pub fn so3_log(r: &Matrix3<f64>) -> Vector3<f64> {
    if r[(2, 2)] == 1.0 && r[(0, 2)] == 0.0 && r[(1, 2)] == 0.0 {
        return Vector3::new(0.0, 0.0, r[(1, 0)].atan2(r[(0, 0)]));
    }
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*r));
    q.scaled_axis()
}

/// Inverse of the right Jacobian of SO(3).
pub fn so3_right_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let k = skew(phi);
    let c = if theta2 < 1e-10 {
        1.0 / 12.0 + theta2 / 720.0
    } else {
        let theta = theta2.sqrt();
        1.0 / theta2 - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())
    };
    Matrix3::identity() + k * 0.5 + k * k * c
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn random_pose3(rx: f64, ry: f64, rz: f64, tx: f64, ty: f64, tz: f64) -> Pose {
        Pose::spatial(
            &UnitQuaternion::from_scaled_axis(Vector3::new(rx, ry, rz)),
            Vector3::new(tx, ty, tz),
        )
    }

    #[test]
    fn compose_planar_by_hand() {
        let a = Pose::planar(FRAC_PI_2, 1.0, 0.0);
        let b = Pose::planar(0.0, 1.0, 0.0);
        let c = a.compose(&b).unwrap();
        assert!((c.heading() - FRAC_PI_2).abs() < 1e-12);
        assert!((c.translation() - Vector3::new(1.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn compose_rejects_mixed_dimensions() {
        let a = Pose::identity(Dim::Two);
        let b = Pose::identity(Dim::Three);
        assert!(matches!(a.compose(&b), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn inverse_planar_by_hand() {
        let p = Pose::planar(FRAC_PI_2, 1.0, 0.0).inverse();
        assert!((p.heading() + FRAC_PI_2).abs() < 1e-12);
        assert!((p.translation() - Vector3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
        let id = Pose::identity(Dim::Three).inverse();
        assert_eq!(id.max_abs_diff(&Pose::identity(Dim::Three)), 0.0);
    }

    #[test]
    fn projection_examples() {
        let id = Pose::identity(Dim::Two);
        let z = Vector3::new(3.0, 4.0, 0.0);
        assert_eq!(id.project_to_world(&z), z);
        assert_eq!(id.predict_measurement(&z), z);

        let t = Vector3::new(0.5, -2.0, 0.0);
        let p = Pose::planar(0.0, t.x, t.y);
        assert_eq!(p.project_to_world(&Point::zeros()), t);

        let p = Pose::planar(FRAC_PI_2, 1.0, 1.0);
        let w = p.project_to_world(&Vector3::new(1.0, 0.0, 0.0));
        assert!((w - Vector3::new(1.0, 2.0, 0.0)).norm() < 1e-12);
        let m = p.predict_measurement(&Vector3::new(1.0, 2.0, 0.0));
        assert!((m - Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn retract_examples() {
        let p = random_pose3(0.3, -0.2, 1.0, 1.0, 2.0, 3.0);
        assert!(p.retract(&Tangent::zero(Dim::Three)).max_abs_diff(&p) < 1e-15);
        let r = Pose::identity(Dim::Two).retract(&Tangent::planar(FRAC_PI_2, 0.0, 0.0));
        assert!(r.max_abs_diff(&Pose::planar(FRAC_PI_2, 0.0, 0.0)) < 1e-15);
    }

    #[test]
    fn so3_log_near_pi() {
        let omega = Vector3::new(0.0, 1.0, 1.0).normalize() * (std::f64::consts::PI - 1e-9);
        let back = so3_log(&so3_exp(&omega));
        assert!((back - omega).norm() < 1e-6);
    }

    #[test]
    fn long_chains_stay_orthonormal() {
        let step = random_pose3(0.01, 0.02, -0.03, 0.1, 0.0, 0.0);
        let mut p = Pose::identity(Dim::Three);
        for _ in 0..100_000 {
            p = &p * &step;
        }
        assert!(p.orthogonality_residual() <= REORTHONORMALIZE_TOL);
    }

    #[test]
    fn from_parts_validates() {
        let bad = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(Pose::from_parts(Dim::Three, bad, Vector3::zeros()).is_err());
        let flip = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert!(Pose::from_parts(Dim::Three, flip, Vector3::zeros()).is_err());
        assert!(Pose::from_parts(Dim::Two, rot_z(0.3), Vector3::new(1.0, 0.0, 0.5)).is_err());
    }

    prop_compose! {
        fn pose3()(r in prop::array::uniform3(-2.0f64..2.0), t in prop::array::uniform3(-10.0f64..10.0)) -> Pose {
            random_pose3(r[0], r[1], r[2], t[0], t[1], t[2])
        }
    }

    prop_compose! {
        fn pose2()(th in -3.1f64..3.1, x in -10.0f64..10.0, y in -10.0f64..10.0) -> Pose {
            Pose::planar(th, x, y)
        }
    }

    proptest! {
        #[test]
        fn rotation_is_orthonormal(p in pose3()) {
            prop_assert!(p.orthogonality_residual() < 1e-9);
            prop_assert!((p.rotation().determinant() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn compose_with_inverse_is_identity(p in pose3(), q in pose2()) {
            prop_assert!((&p * &p.inverse()).max_abs_diff(&Pose::identity(Dim::Three)) < 1e-9);
            prop_assert!((&q * &q.inverse()).max_abs_diff(&Pose::identity(Dim::Two)) < 1e-9);
            prop_assert!((&Pose::identity(Dim::Three) * &p).max_abs_diff(&p) < 1e-15);
            prop_assert!(p.inverse().inverse().max_abs_diff(&p) < 1e-12);
        }

        #[test]
        fn compose_is_associative(a in pose3(), b in pose3(), c in pose3()) {
            let left = &(&a * &b) * &c;
            let right = &a * &(&b * &c);
            prop_assert!(left.max_abs_diff(&right) < 1e-9);
        }

        #[test]
        fn projection_round_trip(p in pose3(), y in prop::array::uniform3(-20.0f64..20.0)) {
            let y = Vector3::from(y);
            prop_assert!((p.project_to_world(&p.predict_measurement(&y)) - y).norm() < 1e-9);
            prop_assert!((p.predict_measurement(&p.project_to_world(&y)) - y).norm() < 1e-9);
        }

        #[test]
        fn prediction_preserves_distances(p in pose3(),
                                          a in prop::array::uniform3(-20.0f64..20.0),
                                          b in prop::array::uniform3(-20.0f64..20.0)) {
            let (a, b) = (Vector3::from(a), Vector3::from(b));
            let d_world = (a - b).norm();
            let d_local = (p.predict_measurement(&a) - p.predict_measurement(&b)).norm();
            prop_assert!((d_world - d_local).abs() < 1e-9);
        }

        #[test]
        fn retract_local_round_trip(p in pose3(),
                                    w in prop::array::uniform3(-0.057f64..0.057),
                                    t in prop::array::uniform3(-0.057f64..0.057)) {
            // ‖δ‖ < 0.1
            let delta = Tangent::spatial(Vector3::from(w), Vector3::from(t));
            let back = p.local(&p.retract(&delta));
            prop_assert!((back.rot - delta.rot).norm() < 1e-8);
            prop_assert!((back.trans - delta.trans).norm() < 1e-8);
        }

        #[test]
        fn planar_retract_local_round_trip(p in pose2(), th in -1.0f64..1.0, x in -1.0f64..1.0, y in -1.0f64..1.0) {
            let delta = Tangent::planar(th, x, y);
            let back = p.local(&p.retract(&delta));
            prop_assert!((back.rot.z - th).abs() < 1e-12);
            prop_assert_eq!(back.dim, Dim::Two);
            prop_assert!((back.trans - delta.trans).norm() < 1e-12);
        }
    }
}
