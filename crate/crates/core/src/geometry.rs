//! Quaternion and SO(3) arithmetic, pose chaining and relative-pose canonicalization.
//!
//! Poses are world-to-camera: `x_cam = R * x_world + t`. Quaternions are stored
//! as `(w, x, y, z)`.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub type RotationMatrix = Matrix3<f64>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    /// Rotation of `angle` radians about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::IDENTITY;
        }
        let a = axis / n;
        let (s, c) = (0.5 * angle).sin_cos();
        Self::new(c, a.x * s, a.y * s, a.z * s)
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalize(&self) -> Result<Self> {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::DegenerateQuaternion);
        }
        Ok(Self::new(self.w / n, self.x / n, self.y / n, self.z / n))
    }

    /// Resolves the double cover by choosing the representative with `w >= 0`.
    pub fn canonicalize_sign(&self) -> Self {
        if self.w < 0.0 {
            -*self
        } else {
            *self
        }
    }

    pub fn conjugate(&self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    /// Rotation matrix of `q / |q|`.
    pub fn to_matrix(&self) -> Result<RotationMatrix> {
        let q = self.normalize()?;
        let (w, x, y, z) = (q.w, q.x, q.y, q.z);
        Ok(Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ))
    }

    /// Unit quaternion of a rotation matrix (Shepperd's method), sign-canonical.
    pub fn from_matrix(r: &RotationMatrix) -> Self {
        let trace = r[(0, 0)] + r[(1, 1)] + r[(2, 2)];
        let q = if trace > 0.0 {
            let s = (trace + 1.0).sqrt() * 2.0;
            Self::new(
                0.25 * s,
                (r[(2, 1)] - r[(1, 2)]) / s,
                (r[(0, 2)] - r[(2, 0)]) / s,
                (r[(1, 0)] - r[(0, 1)]) / s,
            )
        } else if r[(0, 0)] > r[(1, 1)] && r[(0, 0)] > r[(2, 2)] {
            let s = (1.0 + r[(0, 0)] - r[(1, 1)] - r[(2, 2)]).sqrt() * 2.0;
            Self::new(
                (r[(2, 1)] - r[(1, 2)]) / s,
                0.25 * s,
                (r[(0, 1)] + r[(1, 0)]) / s,
                (r[(0, 2)] + r[(2, 0)]) / s,
            )
        } else if r[(1, 1)] > r[(2, 2)] {
            let s = (1.0 + r[(1, 1)] - r[(0, 0)] - r[(2, 2)]).sqrt() * 2.0;
            Self::new(
                (r[(0, 2)] - r[(2, 0)]) / s,
                (r[(0, 1)] + r[(1, 0)]) / s,
                0.25 * s,
                (r[(1, 2)] + r[(2, 1)]) / s,
            )
        } else {
            let s = (1.0 + r[(2, 2)] - r[(0, 0)] - r[(1, 1)]).sqrt() * 2.0;
            Self::new(
                (r[(1, 0)] - r[(0, 1)]) / s,
                (r[(0, 2)] + r[(2, 0)]) / s,
                (r[(1, 2)] + r[(2, 1)]) / s,
                0.25 * s,
            )
        };
        let n = q.norm();
        Self::new(q.w / n, q.x / n, q.y / n, q.z / n).canonicalize_sign()
    }
}

impl std::ops::Neg for Quaternion {
    type Output = Quaternion;
    fn neg(self) -> Self {
        Self::new(-self.w, -self.x, -self.y, -self.z)
    }
}

/// Hamilton product; `(a * b).to_matrix() == a.to_matrix() * b.to_matrix()`.
impl std::ops::Mul for Quaternion {
    type Output = Quaternion;
    fn mul(self, b: Quaternion) -> Quaternion {
        let a = self;
        Quaternion::new(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
    }
}

/// Camera extrinsics, world-to-camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Quaternion,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Pose {
    pub const IDENTITY: Pose = Pose {
        rotation: Quaternion::IDENTITY,
        translation: Vector3::new(0.0, 0.0, 0.0),
    };

    pub fn new(rotation: Quaternion, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    /// Pose from a rotation matrix; the stored quaternion is sign-canonical.
    pub fn from_matrix(r: &RotationMatrix, translation: Vector3<f64>) -> Self {
        Self::new(Quaternion::from_matrix(r), translation)
    }

    /// Camera looking from `eye` towards `target`; camera +y points down in the image.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, world_up: Vector3<f64>) -> Self {
        let forward = (target - eye).normalize();
        let mut right = forward.cross(&world_up);
        if right.norm() < 1e-9 {
            right = forward.cross(&Vector3::new(1.0, 0.0, 0.0));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        // Rows are the camera axes expressed in world coordinates.
        let r = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let t = -(r * eye);
        Self::from_matrix(&r, t)
    }

    pub fn rotation_matrix(&self) -> RotationMatrix {
        self.rotation
            .to_matrix()
            .expect("pose rotation is a valid quaternion")
    }

    /// Camera center in world coordinates, `-R^T t`.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation_matrix().transpose() * self.translation)
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix() * p + self.translation
    }

    pub fn inverse(&self) -> Pose {
        let r_t = self.rotation_matrix().transpose();
        Pose::new(self.rotation.conjugate(), -(r_t * self.translation))
    }

    /// Same pose with a normalized, sign-canonical quaternion.
    pub fn normalized(&self) -> Result<Pose> {
        Ok(Pose::new(
            self.rotation.normalize()?.canonicalize_sign(),
            self.translation,
        ))
    }
}

/// Chains two rigid transforms: applies `inner` first, then `outer`.
pub fn compose(outer: &Pose, inner: &Pose) -> Pose {
    let r_o = outer.rotation_matrix();
    let q = (outer.rotation * inner.rotation)
        .normalize()
        .expect("product of unit quaternions")
        .canonicalize_sign();
    Pose::new(q, r_o * inner.translation + outer.translation)
}

/// Expresses every pose relative to the first one, so the first becomes `(I, 0)`.
pub fn canonicalize_to_first(poses: &[Pose]) -> Result<Vec<Pose>> {
    let first = poses
        .first()
        .ok_or(Error::EmptySequence("canonicalize_to_first"))?;
    let first_inv = first.inverse();
    let mut out: Vec<Pose> = poses.iter().map(|p| compose(p, &first_inv)).collect();
    out[0] = Pose::IDENTITY;
    Ok(out)
}

/// Geodesic angle between two rotations, in degrees, in `[0, 180]`.
///
/// Same value as `acos((tr(R_a R_b^T) - 1) / 2)`, evaluated with `atan2` so it
/// stays accurate near 0 and 180 degrees.
pub fn rotation_angle(r_a: &RotationMatrix, r_b: &RotationMatrix) -> f64 {
    let m = r_a * r_b.transpose();
    let cos = ((m.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let axis = Vector3::new(
        m[(2, 1)] - m[(1, 2)],
        m[(0, 2)] - m[(2, 0)],
        m[(1, 0)] - m[(0, 1)],
    );
    let sin = (0.5 * axis.norm()).min(1.0);
    sin.atan2(cos).to_degrees()
}

/// `||R_pred R_gt^T - I||_F`; zero iff the rotations agree.
pub fn rotation_residual(r_pred: &RotationMatrix, r_gt: &RotationMatrix) -> f64 {
    (r_pred * r_gt.transpose() - Matrix3::identity()).norm()
}

/// `||R_pred R_gt - I||_F`, the form without the transpose. Only zero for a
/// perfect prediction when `R_gt` is the identity.
pub fn rotation_residual_untransposed(r_pred: &RotationMatrix, r_gt: &RotationMatrix) -> f64 {
    (r_pred * r_gt - Matrix3::identity()).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn rot_z(deg: f64) -> RotationMatrix {
        Quaternion::from_axis_angle(Vector3::z(), deg.to_radians())
            .to_matrix()
            .unwrap()
    }

    fn quat_strategy() -> impl Strategy<Value = Quaternion> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
            .prop_filter("non-degenerate", |(w, x, y, z)| w * w + x * x + y * y + z * z > 1e-3)
            .prop_map(|(w, x, y, z)| Quaternion::new(w, x, y, z))
    }

    fn pose_strategy() -> impl Strategy<Value = Pose> {
        (quat_strategy(), -5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64).prop_map(|(q, x, y, z)| {
            Pose::new(q.normalize().unwrap(), Vector3::new(x, y, z))
        })
    }

    fn assert_pose_eq(a: &Pose, b: &Pose, eps: f64) {
        assert_relative_eq!(a.rotation_matrix(), b.rotation_matrix(), epsilon = eps);
        assert_relative_eq!(a.translation, b.translation, epsilon = eps);
    }

    #[test]
    fn identity_quaternion_gives_identity_matrix() {
        let r = Quaternion::IDENTITY.to_matrix().unwrap();
        assert_eq!(r, Matrix3::identity());
    }

    #[test]
    fn quarter_turn_about_z() {
        let r = Quaternion::new(FRAC_1_SQRT_2, 0.0, 0.0, FRAC_1_SQRT_2)
            .to_matrix()
            .unwrap();
        let expected = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert_relative_eq!(r, expected, epsilon = 1e-15);
    }

    #[test]
    fn zero_quaternion_is_rejected() {
        assert!(matches!(
            Quaternion::new(0.0, 0.0, 0.0, 0.0).to_matrix(),
            Err(Error::DegenerateQuaternion)
        ));
    }

    #[test]
    fn rotation_angle_basics() {
        let i = Matrix3::identity();
        assert_eq!(rotation_angle(&i, &i), 0.0);
        assert_relative_eq!(rotation_angle(&i, &rot_z(90.0)), 90.0, epsilon = 1e-12);
        assert_relative_eq!(rotation_angle(&i, &rot_z(180.0)), 180.0, epsilon = 1e-6);
    }

    #[test]
    fn z_rotations_add() {
        let a = Pose::new(Quaternion::from_axis_angle(Vector3::z(), 30f64.to_radians()), Vector3::zeros());
        let b = Pose::new(Quaternion::from_axis_angle(Vector3::z(), 60f64.to_radians()), Vector3::zeros());
        let c = compose(&a, &b);
        assert_relative_eq!(c.rotation_matrix(), rot_z(90.0), epsilon = 1e-12);
    }

    #[test]
    fn single_pose_canonicalizes_to_identity() {
        let p = Pose::new(Quaternion::new(0.3, 0.1, -0.5, 0.2).normalize().unwrap(), Vector3::new(1.0, 2.0, 3.0));
        let out = canonicalize_to_first(&[p]).unwrap();
        assert_eq!(out, vec![Pose::IDENTITY]);
        assert!(matches!(canonicalize_to_first(&[]), Err(Error::EmptySequence(_))));
    }

    #[test]
    fn untransposed_residual_is_nonzero_for_perfect_prediction() {
        let r = rot_z(40.0);
        assert!(rotation_residual(&r, &r) < 1e-12);
        assert!(rotation_residual_untransposed(&r, &r) > 0.1);
    }

    #[test]
    fn look_at_points_optical_axis_at_target() {
        let eye = Vector3::new(3.0, -1.0, 2.0);
        let p = Pose::look_at(eye, Vector3::zeros(), Vector3::z());
        assert_relative_eq!(p.center(), eye, epsilon = 1e-12);
        let c = p.transform_point(&Vector3::zeros());
        assert!(c.z > 0.0);
        assert!(c.x.abs() < 1e-12 && c.y.abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn matrix_is_orthonormal(q in quat_strategy()) {
            let r = q.to_matrix().unwrap();
            prop_assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-7);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-7);
        }

        #[test]
        fn double_cover(q in quat_strategy()) {
            let a = q.to_matrix().unwrap();
            let b = (-q).to_matrix().unwrap();
            prop_assert!((a - b).norm() < 1e-12);
        }

        #[test]
        fn matrix_round_trip(q in quat_strategy()) {
            let q = q.normalize().unwrap().canonicalize_sign();
            let back = Quaternion::from_matrix(&q.to_matrix().unwrap());
            prop_assert!((back.norm() - 1.0).abs() < 1e-9);
            prop_assert!(back.w >= 0.0);
            prop_assert!((back.to_matrix().unwrap() - q.to_matrix().unwrap()).norm() < 1e-9);
        }

        #[test]
        fn rotation_angle_is_a_metric(a in quat_strategy(), b in quat_strategy(), c in quat_strategy()) {
            let (ra, rb, rc) = (a.to_matrix().unwrap(), b.to_matrix().unwrap(), c.to_matrix().unwrap());
            let ab = rotation_angle(&ra, &rb);
            prop_assert!((ab - rotation_angle(&rb, &ra)).abs() < 1e-9);
            prop_assert!((0.0..=180.0).contains(&ab));
            prop_assert!(rotation_angle(&ra, &ra) < 1e-6);
            prop_assert!(ab <= rotation_angle(&ra, &rc) + rotation_angle(&rc, &rb) + 1e-6);
        }

        #[test]
        fn compose_with_identity_and_inverse(p in pose_strategy()) {
            assert_pose_eq(&compose(&p, &Pose::IDENTITY), &p, 1e-12);
            assert_pose_eq(&compose(&p, &p.inverse()), &Pose::IDENTITY, 1e-9);
            assert_pose_eq(&compose(&p.inverse(), &p), &Pose::IDENTITY, 1e-9);
        }

        #[test]
        fn canonicalization_ignores_global_transform(
            poses in prop::collection::vec(pose_strategy(), 1..8),
            g in pose_strategy(),
        ) {
            let base = canonicalize_to_first(&poses).unwrap();
            // Moving the world by G turns world-to-camera P into P * G^-1.
            let g_inv = g.inverse();
            let moved: Vec<Pose> = poses.iter().map(|p| compose(p, &g_inv)).collect();
            let out = canonicalize_to_first(&moved).unwrap();
            for (a, b) in base.iter().zip(&out) {
                assert_pose_eq(a, b, 1e-9);
            }
            let again = canonicalize_to_first(&base).unwrap();
            for (a, b) in base.iter().zip(&again) {
                assert_pose_eq(a, b, 1e-9);
            }
            prop_assert_eq!(out[0], Pose::IDENTITY);
        }
    }
}
