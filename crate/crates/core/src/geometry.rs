//! Pinhole camera and rigid-pose mathematics.
//!
//! Camera frame convention: +z forward, +x right, +y down. Depth of a point
//! is its camera-frame z coordinate. Pixel coordinates are real valued with
//! pixel `(i, j)` centered at `(i, j)`; rasterizers own the rounding.
//!
//! Robot body frame: +x forward, +y left, +z up.

use nalgebra::{Point3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Vec2 = Vector2<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidParameter("image size must be positive".into()));
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy) {
            return Err(Error::InvalidParameter(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    /// Camera-frame ray direction (z = 1) through the pixel position `(u, v)`.
    pub fn ray(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }
}

/// World-from-body rigid transform.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub translation: Vec3,
    pub rotation: UnitQuaternion<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(translation: Vec3, rotation: UnitQuaternion<f64>) -> Self {
        Self { translation, rotation }
    }

    pub fn identity() -> Self {
        Self { translation: Vec3::zeros(), rotation: UnitQuaternion::identity() }
    }

    /// Planar pose at `(x, y, z)` with heading `yaw` (radians, about +z).
    pub fn from_xyz_yaw(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        Self {
            translation: Vec3::new(x, y, z),
            rotation: UnitQuaternion::from_euler_angles(0.0, 0.0, yaw),
        }
    }

    /// Builds a pose from raw quaternion components, renormalizing them.
    pub fn from_components(t: [f64; 3], q: [f64; 4]) -> Result<Self> {
        let quat = nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]);
        let n = quat.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::InvalidParameter("degenerate quaternion".into()));
        }
        Ok(Self {
            translation: Vec3::new(t[0], t[1], t[2]),
            rotation: UnitQuaternion::from_quaternion(quat),
        })
    }

    /// `[w, x, y, z]` quaternion components.
    pub fn quaternion_wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn yaw(&self) -> f64 {
        self.rotation.euler_angles().2
    }

    pub fn inverse(&self) -> Self {
        let rinv = self.rotation.inverse();
        Self { translation: -(rinv * self.translation), rotation: rinv }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Self {
        Self {
            translation: self.transform(&other.translation),
            rotation: self.rotation * other.rotation,
        }
    }

    pub fn transform(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn inverse_transform(&self, p: &Vec3) -> Vec3 {
        self.rotation.inverse() * (p - self.translation)
    }

    /// Rotation angle between two orientations, in radians.
    pub fn angle_to(&self, other: &Pose) -> f64 {
        self.rotation.angle_to(&other.rotation)
    }
}

/// Camera mounting on the robot body: height above the body origin and
/// downward pitch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraMount {
    pub height: f64,
    pub pitch_down_deg: f64,
}

impl Default for CameraMount {
    fn default() -> Self {
        Self { height: 1.0, pitch_down_deg: 20.0 }
    }
}

impl CameraMount {
    /// Body-from-camera transform.
    pub fn body_from_camera(&self) -> Pose {
        // optical axes expressed in the body frame: x_c = -y_b, y_c = -z_b, z_c = x_b
        let optical = nalgebra::Rotation3::from_basis_unchecked(&[
            Vec3::new(0.0, -1.0, 0.0),
            Vec3::new(0.0, 0.0, -1.0),
            Vec3::new(1.0, 0.0, 0.0),
        ]);
        let pitch = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), self.pitch_down_deg.to_radians());
        Pose {
            translation: Vec3::new(0.0, 0.0, self.height),
            rotation: pitch * UnitQuaternion::from_rotation_matrix(&optical),
        }
    }

    /// World-from-camera pose for a robot at `body` (world-from-body).
    pub fn camera_pose(&self, body: &Pose) -> Pose {
        body.compose(&self.body_from_camera())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelDepth {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

/// Projects a camera-frame point to real-valued pixel coordinates.
pub fn project_point(p: &Vec3, k: &CameraIntrinsics) -> Result<Vec2> {
    if p.z <= 0.0 {
        return Err(Error::PointBehindCamera(p.z));
    }
    Ok(Vec2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy))
}

pub fn unproject_pixel(pd: &PixelDepth, k: &CameraIntrinsics) -> Result<Vec3> {
    if !(pd.depth > 0.0) {
        return Err(Error::NonPositiveDepth(pd.depth));
    }
    Ok(k.ray(pd.u, pd.v) * pd.depth)
}

pub fn transform_point(p: &Vec3, pose: &Pose) -> Vec3 {
    pose.transform(p)
}

pub fn to_point(v: &Vec3) -> Point3<f64> {
    Point3::from(*v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 320.0, 240.0, 640, 480).unwrap()
    }

    #[test]
    fn projection_examples() {
        let uv = project_point(&Vec3::new(0.0, 0.0, 1.0), &k()).unwrap();
        assert_eq!((uv.x, uv.y), (320.0, 240.0));
        let uv = project_point(&Vec3::new(1.0, 0.0, 1.0), &k()).unwrap();
        assert_eq!((uv.x, uv.y), (420.0, 240.0));
        assert!(matches!(
            project_point(&Vec3::new(0.0, 0.0, -1.0), &k()),
            Err(Error::PointBehindCamera(_))
        ));
    }

    #[test]
    fn unprojection_examples() {
        let p = unproject_pixel(&PixelDepth { u: 320.0, v: 240.0, depth: 2.0 }, &k()).unwrap();
        assert_eq!(p, Vec3::new(0.0, 0.0, 2.0));
        let p = unproject_pixel(&PixelDepth { u: 420.0, v: 240.0, depth: 1.0 }, &k()).unwrap();
        assert_eq!(p, Vec3::new(1.0, 0.0, 1.0));
        assert!(unproject_pixel(&PixelDepth { u: 320.0, v: 240.0, depth: 0.0 }, &k()).is_err());
    }

    #[test]
    fn transform_examples() {
        let p = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(transform_point(&p, &Pose::identity()), p);
        let t = Pose::from_xyz_yaw(1.0, 0.0, 0.0, 0.0);
        assert_eq!(transform_point(&Vec3::zeros(), &t), Vec3::new(1.0, 0.0, 0.0));
        let yaw = Pose::from_xyz_yaw(0.0, 0.0, 0.0, FRAC_PI_2);
        let q = transform_point(&Vec3::new(1.0, 0.0, 0.0), &yaw);
        assert!((q - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 4.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0, 4, 4).is_ok());
    }

    #[test]
    fn mount_looks_forward_and_down() {
        let mount = CameraMount { height: 1.0, pitch_down_deg: 0.0 };
        let cam = mount.camera_pose(&Pose::from_xyz_yaw(0.0, 0.0, 0.0, 0.0));
        // optical axis points along body +x
        let ahead = cam.transform(&Vec3::new(0.0, 0.0, 2.0));
        assert!((ahead - Vec3::new(2.0, 0.0, 1.0)).norm() < 1e-12);
        // image +y points down
        let below = cam.transform(&Vec3::new(0.0, 1.0, 0.0));
        assert!((below - Vec3::new(0.0, 0.0, 0.0)).norm() < 1e-12);

        let tilted = CameraMount { height: 1.0, pitch_down_deg: 45.0 };
        let cam = tilted.camera_pose(&Pose::identity());
        let hit = cam.transform(&Vec3::new(0.0, 0.0, 2f64.sqrt()));
        assert!((hit - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
    }

    fn arb_pose() -> impl Strategy<Value = Pose> {
        (
            -10.0..10.0f64,
            -10.0..10.0f64,
            -10.0..10.0f64,
            -3.1..3.1f64,
            -1.5..1.5f64,
            -3.1..3.1f64,
        )
            .prop_map(|(x, y, z, r, p, yw)| {
                Pose::new(Vec3::new(x, y, z), UnitQuaternion::from_euler_angles(r, p, yw))
            })
    }

    proptest! {
        #[test]
        fn project_unproject_round_trip(x in -5.0..5.0f64, y in -5.0..5.0f64, z in 0.05..50.0f64) {
            let p = Vec3::new(x, y, z);
            let uv = project_point(&p, &k()).unwrap();
            let back = unproject_pixel(&PixelDepth { u: uv.x, v: uv.y, depth: z }, &k()).unwrap();
            prop_assert!((back - p).norm() <= 1e-6 * p.norm().max(1.0));
        }

        #[test]
        fn projection_is_ray_invariant(x in -5.0..5.0f64, y in -5.0..5.0f64, z in 0.05..50.0f64, s in 0.01..100.0f64) {
            let a = project_point(&Vec3::new(x, y, z), &k()).unwrap();
            let b = project_point(&(Vec3::new(x, y, z) * s), &k()).unwrap();
            prop_assert!((a - b).norm() < 1e-9 * a.norm().max(1.0));
        }

        #[test]
        fn pose_inverse_restores_point(pose in arb_pose(), x in -10.0..10.0f64, y in -10.0..10.0f64, z in -10.0..10.0f64) {
            let p = Vec3::new(x, y, z);
            let back = transform_point(&transform_point(&p, &pose), &pose.inverse());
            prop_assert!((back - p).norm() < 1e-9);
            prop_assert!((pose.rotation.quaternion().norm() - 1.0).abs() < 1e-9);
        }
    }
}
