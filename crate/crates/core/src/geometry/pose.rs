use std::ops::Mul;

use nalgebra::{Isometry3, Point3, Quaternion, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::{FrameId, GeometryError};

/// Rigid 6-d.o.f pose. Translation is in millimetres.
///
/// Orientation is stored as a unit quaternion. Euler angles are an I/O
/// convention only: `[alpha, beta, theta]` in degrees with
/// `R = Rz(alpha) * Ry(beta) * Rx(theta)` (intrinsic Z-Y-X). The
/// decomposition is degenerate at `|beta| = 90 deg`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    iso: Isometry3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Pose::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            iso: Isometry3::identity(),
        }
    }

    pub fn new(translation: Vector3<f64>, rotation: UnitQuaternion<f64>) -> Self {
        Pose {
            iso: Isometry3::from_parts(Translation3::from(translation), normalized(rotation)),
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Pose::new(Vector3::new(x, y, z), UnitQuaternion::identity())
    }

    pub fn from_rotation(rotation: UnitQuaternion<f64>) -> Self {
        Pose::new(Vector3::zeros(), rotation)
    }

    /// Rotation of `angle_deg` about `axis` (need not be normalized).
    pub fn from_axis_angle_deg(axis: Vector3<f64>, angle_deg: f64) -> Self {
        let axis = nalgebra::Unit::new_normalize(axis);
        Pose::from_rotation(UnitQuaternion::from_axis_angle(&axis, angle_deg.to_radians()))
    }

    pub fn rot_x_deg(angle: f64) -> Self {
        Pose::from_axis_angle_deg(Vector3::x(), angle)
    }

    pub fn rot_y_deg(angle: f64) -> Self {
        Pose::from_axis_angle_deg(Vector3::y(), angle)
    }

    pub fn rot_z_deg(angle: f64) -> Self {
        Pose::from_axis_angle_deg(Vector3::z(), angle)
    }

    pub fn from_euler_deg(xyz: [f64; 3], euler_deg: [f64; 3]) -> Self {
        let [alpha, beta, theta] = euler_deg;
        let q = UnitQuaternion::from_euler_angles(
            theta.to_radians(),
            beta.to_radians(),
            alpha.to_radians(),
        );
        Pose::new(Vector3::from(xyz), q)
    }

    /// Pose from a translation and a rotation vector (axis * angle, radians).
    pub fn from_rotation_vector(translation: Vector3<f64>, rotvec: Vector3<f64>) -> Self {
        Pose::new(translation, UnitQuaternion::from_scaled_axis(rotvec))
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.iso.translation.vector
    }

    pub fn rotation(&self) -> UnitQuaternion<f64> {
        self.iso.rotation
    }

    pub fn rotation_vector(&self) -> Vector3<f64> {
        self.iso.rotation.scaled_axis()
    }

    /// `[alpha, beta, theta]` in degrees, Z-Y-X intrinsic.
    pub fn euler_deg(&self) -> [f64; 3] {
        let (roll, pitch, yaw) = self.iso.rotation.euler_angles();
        [yaw.to_degrees(), pitch.to_degrees(), roll.to_degrees()]
    }

    pub fn xyz(&self) -> [f64; 3] {
        let t = self.translation();
        [t.x, t.y, t.z]
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        let iso = self.iso * other.iso;
        Pose::new(iso.translation.vector, iso.rotation)
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.iso.inverse();
        Pose::new(inv.translation.vector, inv.rotation)
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.iso.transform_point(&Point3::from(*p)).coords
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.iso.rotation * v
    }

    /// Rotation angle of this pose, in degrees, in `[0, 180]`.
    pub fn angle_deg(&self) -> f64 {
        self.iso.rotation.angle().to_degrees()
    }

    /// Translation norm in millimetres.
    pub fn distance(&self) -> f64 {
        self.translation().norm()
    }

    /// Translation (mm) and rotation (deg) magnitudes of `self^-1 * other`.
    pub fn difference(&self, other: &Pose) -> (f64, f64) {
        let rel = self.inverse().compose(other);
        (rel.distance(), rel.angle_deg())
    }

    /// Interpolates translation linearly and rotation along the geodesic.
    pub fn interpolate(&self, other: &Pose, s: f64) -> Pose {
        let t = self.translation().lerp(&other.translation(), s);
        let q = self
            .rotation()
            .try_slerp(&other.rotation(), s, 1e-12)
            .unwrap_or_else(|| self.rotation());
        Pose::new(t, q)
    }

    /// Pose increment applied on the right, expressed as translation in the
    /// parent frame and a rotation vector in the body frame.
    pub fn apply_increment(&self, dt: &Vector3<f64>, drot: &Vector3<f64>) -> Pose {
        let q = self.rotation() * UnitQuaternion::from_scaled_axis(*drot);
        Pose::new(self.translation() + dt, q)
    }

    pub fn is_finite(&self) -> bool {
        self.translation().iter().all(|v| v.is_finite())
            && self.rotation().coords.iter().all(|v| v.is_finite())
    }

    /// Deviation of the stored quaternion from unit norm.
    pub fn norm_error(&self) -> f64 {
        (self.iso.rotation.quaternion().norm() - 1.0).abs()
    }
}

impl Mul for Pose {
    type Output = Pose;
    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

impl<'a> Mul<&'a Pose> for &'a Pose {
    type Output = Pose;
    fn mul(self, rhs: &'a Pose) -> Pose {
        self.compose(rhs)
    }
}

fn normalized(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    let mut raw: Quaternion<f64> = q.into_inner();
    // canonical sign keeps serialization stable
    if raw.w < 0.0 {
        raw = -raw;
    }
    UnitQuaternion::new_normalize(raw)
}

/// Whether a pose is a constant relation (`H`) or changes with motion (`x`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PoseKind {
    Constant,
    Varying { t: f64 },
}

/// A pose of `child` expressed in `parent`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FramedPose {
    pub parent: FrameId,
    pub child: FrameId,
    pub pose: Pose,
    pub kind: PoseKind,
}

impl FramedPose {
    pub fn constant(parent: FrameId, child: FrameId, pose: Pose) -> Self {
        FramedPose {
            parent,
            child,
            pose,
            kind: PoseKind::Constant,
        }
    }

    pub fn varying(parent: FrameId, child: FrameId, pose: Pose, t: f64) -> Self {
        FramedPose {
            parent,
            child,
            pose,
            kind: PoseKind::Varying { t },
        }
    }

    pub fn identity(parent: FrameId, child: FrameId) -> Self {
        FramedPose::constant(parent, child, Pose::identity())
    }

    pub fn timestamp(&self) -> Option<f64> {
        match self.kind {
            PoseKind::Constant => None,
            PoseKind::Varying { t } => Some(t),
        }
    }

    pub fn with_pose(&self, pose: Pose) -> Self {
        FramedPose { pose, ..*self }
    }

    /// Chains `self: p -> q` with `next: q -> r` into `p -> r`.
    pub fn compose(&self, next: &FramedPose) -> Result<FramedPose, GeometryError> {
        if self.child != next.parent {
            return Err(GeometryError::FrameMismatch {
                expected: self.child,
                found: next.parent,
            });
        }
        let kind = match (self.timestamp(), next.timestamp()) {
            (None, None) => PoseKind::Constant,
            (a, b) => PoseKind::Varying {
                t: a.unwrap_or(f64::NEG_INFINITY).max(b.unwrap_or(f64::NEG_INFINITY)),
            },
        };
        Ok(FramedPose {
            parent: self.parent,
            child: next.child,
            pose: self.pose.compose(&next.pose),
            kind,
        })
    }

    pub fn invert(&self) -> FramedPose {
        FramedPose {
            parent: self.child,
            child: self.parent,
            pose: self.pose.inverse(),
            kind: self.kind,
        }
    }

    /// `current^-1 * desired`: the motion that takes `current` onto
    /// `desired`, expressed in the current frame.
    pub fn error_to(&self, desired: &FramedPose) -> Result<FramedPose, GeometryError> {
        pose_error(self, desired)
    }
}

pub fn compose(a: &FramedPose, b: &FramedPose) -> Result<FramedPose, GeometryError> {
    a.compose(b)
}

pub fn invert(a: &FramedPose) -> FramedPose {
    a.invert()
}

/// Error between a current and a desired pose observed from the same frame.
pub fn pose_error(current: &FramedPose, desired: &FramedPose) -> Result<FramedPose, GeometryError> {
    if current.parent != desired.parent {
        return Err(GeometryError::FrameMismatch {
            expected: current.parent,
            found: desired.parent,
        });
    }
    current.invert().compose(desired)
}

/// Serialized form shared by every file format.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PoseRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    pub xyz: [f64; 3],
    pub euler_deg: [f64; 3],
    pub parent: FrameId,
    pub child: FrameId,
}

impl From<&FramedPose> for PoseRecord {
    fn from(fp: &FramedPose) -> Self {
        PoseRecord {
            t: fp.timestamp(),
            xyz: fp.pose.xyz(),
            euler_deg: fp.pose.euler_deg(),
            parent: fp.parent,
            child: fp.child,
        }
    }
}

impl From<&PoseRecord> for FramedPose {
    fn from(r: &PoseRecord) -> Self {
        let pose = Pose::from_euler_deg(r.xyz, r.euler_deg);
        match r.t {
            Some(t) => FramedPose::varying(r.parent, r.child, pose, t),
            None => FramedPose::constant(r.parent, r.child, pose),
        }
    }
}

impl Serialize for FramedPose {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        PoseRecord::from(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for FramedPose {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let r = PoseRecord::deserialize(deserializer)?;
        Ok(FramedPose::from(&r))
    }
}

#[derive(Serialize, Deserialize)]
struct BarePose {
    xyz: [f64; 3],
    euler_deg: [f64; 3],
}

impl Serialize for Pose {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        BarePose {
            xyz: self.xyz(),
            euler_deg: self.euler_deg(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let b = BarePose::deserialize(deserializer)?;
        Ok(Pose::from_euler_deg(b.xyz, b.euler_deg))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn c_to_m(p: Pose) -> FramedPose {
        FramedPose::constant(FrameId::CAMERA, FrameId::MANDREL, p)
    }

    #[test]
    fn identity_then_transform() {
        let t = Pose::from_euler_deg([1.0, 2.0, 3.0], [10.0, 20.0, 30.0]);
        let a = c_to_m(Pose::identity());
        let b = FramedPose::constant(FrameId::MANDREL, FrameId::slot(0), t);
        let ab = a.compose(&b).unwrap();
        assert_eq!(ab.parent, FrameId::CAMERA);
        assert_eq!(ab.child, FrameId::slot(0));
        let (dt, dr) = ab.pose.difference(&t);
        assert!(dt < 1e-12 && dr < 1e-9);
    }

    #[test]
    fn translations_commute() {
        let a = c_to_m(Pose::from_translation(1.0, 0.0, 0.0));
        let b = FramedPose::constant(
            FrameId::MANDREL,
            FrameId::slot(1),
            Pose::from_translation(0.0, 2.0, 0.0),
        );
        let t = a.compose(&b).unwrap().pose.translation();
        assert_abs_diff_eq!(t, Vector3::new(1.0, 2.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn mismatched_frames_rejected() {
        let a = c_to_m(Pose::identity());
        let b = FramedPose::identity(FrameId::NEEDLE, FrameId::slot(0));
        assert!(matches!(
            a.compose(&b),
            Err(GeometryError::FrameMismatch { .. })
        ));
        let d = FramedPose::identity(FrameId::MANDREL, FrameId::driver(0));
        assert!(pose_error(&a, &d).is_err());
    }

    #[test]
    fn invert_translation() {
        let a = c_to_m(Pose::from_translation(3.0, -1.0, 2.0)).invert();
        assert_eq!(a.parent, FrameId::MANDREL);
        assert_abs_diff_eq!(a.pose.translation(), Vector3::new(-3.0, 1.0, -2.0));
        let id = c_to_m(Pose::identity()).invert();
        assert_eq!(id.pose.distance(), 0.0);
        assert_eq!(id.pose.angle_deg(), 0.0);
    }

    #[test]
    fn timestamps_take_max_and_promote_kind() {
        let a = FramedPose::varying(FrameId::CAMERA, FrameId::MANDREL, Pose::identity(), 2.0);
        let b = FramedPose::varying(FrameId::MANDREL, FrameId::slot(0), Pose::identity(), 3.5);
        let h = FramedPose::identity(FrameId::slot(0), FrameId::NEEDLE);
        assert_eq!(a.compose(&b).unwrap().timestamp(), Some(3.5));
        let ab = a.compose(&b).unwrap();
        assert_eq!(ab.compose(&h).unwrap().timestamp(), Some(3.5));
        let hh = h.compose(&FramedPose::identity(FrameId::NEEDLE, FrameId::driver(0)));
        assert_eq!(hh.unwrap().kind, PoseKind::Constant);
    }

    #[test]
    fn pose_error_examples() {
        let cur = FramedPose::identity(FrameId::CAMERA, FrameId::driver(0));
        let des = FramedPose::constant(
            FrameId::CAMERA,
            FrameId::driver(0).desired(),
            Pose::from_translation(0.0, 0.0, 5.0),
        );
        let e = pose_error(&cur, &des).unwrap();
        assert_eq!(e.parent, FrameId::driver(0));
        assert_eq!(e.child, FrameId::driver(0).desired());
        assert_abs_diff_eq!(e.pose.translation(), Vector3::new(0.0, 0.0, 5.0), epsilon = 1e-15);
        let same = pose_error(&cur, &cur).unwrap();
        assert!(same.pose.distance() < 1e-15 && same.pose.angle_deg() < 1e-9);
    }

    #[test]
    fn euler_convention_is_zyx() {
        let p = Pose::from_euler_deg([0.0; 3], [30.0, 0.0, 0.0]);
        let x = p.transform_vector(&Vector3::x());
        assert_abs_diff_eq!(x, Vector3::new(30f64.to_radians().cos(), 30f64.to_radians().sin(), 0.0), epsilon = 1e-12);
        let q = Pose::rot_z_deg(20.0) * Pose::rot_y_deg(-35.0) * Pose::rot_x_deg(50.0);
        let e = q.euler_deg();
        assert_abs_diff_eq!(e[0], 20.0, epsilon = 1e-9);
        assert_abs_diff_eq!(e[1], -35.0, epsilon = 1e-9);
        assert_abs_diff_eq!(e[2], 50.0, epsilon = 1e-9);
    }

    #[test]
    fn serializes_to_schema() {
        let fp = FramedPose::varying(
            FrameId::CAMERA,
            FrameId::MANDREL,
            Pose::from_euler_deg([1.0, 2.0, 3.0], [4.0, 5.0, 6.0]),
            0.25,
        );
        let v = serde_json::to_value(fp).unwrap();
        assert_eq!(v["parent"], "c");
        assert_eq!(v["child"], "m");
        assert_eq!(v["t"], 0.25);
        let back: FramedPose = serde_json::from_value(v).unwrap();
        let (dt, dr) = back.pose.difference(&fp.pose);
        assert!(dt < 1e-12 && dr < 1e-9);
        let h = serde_json::to_value(FramedPose::identity(FrameId::MANDREL, FrameId::slot(2))).unwrap();
        assert!(h.get("t").is_none());
    }
}

