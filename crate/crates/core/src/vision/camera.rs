use nalgebra::{Matrix3x4, Vector2, Vector3, Vector4};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::{FrameId, FramedPose, Pose};

use super::VisionError;

/// Pinhole camera. Camera frame: x right, y down, z along the optical axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub fps: f64,
    /// Camera pose in the world frame (`w -> c`).
    pub pose: FramedPose,
}

/// Result of projecting a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    Visible(Vector2<f64>),
    Occluded,
}

impl Projection {
    pub fn visible(self) -> Option<Vector2<f64>> {
        match self {
            Projection::Visible(p) => Some(p),
            Projection::Occluded => None,
        }
    }
}

/// Focal length (px) of the default 640-pixel-wide camera.
pub const DEFAULT_FOCAL_PX: f64 = 4000.0;

impl Default for CameraModel {
    fn default() -> Self {
        CameraModel::new(640, 480, 20.0)
    }
}

impl CameraModel {
    /// Camera with the default optics scaled to the given resolution (the
    /// field of view is preserved).
    pub fn new(width: u32, height: u32, fps: f64) -> Self {
        let f = DEFAULT_FOCAL_PX * width as f64 / 640.0;
        CameraModel {
            fx: f,
            fy: f,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            fps,
            pose: FramedPose::identity(FrameId::WORLD, FrameId::CAMERA),
        }
    }

    pub fn validate(&self) -> Result<(), VisionError> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.width > 0
            && self.height > 0
            && self.fps > 0.0
            && (0.0..self.width as f64).contains(&self.cx)
            && (0.0..self.height as f64).contains(&self.cy);
        if ok {
            Ok(())
        } else {
            Err(VisionError::InvalidCamera(format!("{self:?}")))
        }
    }

    /// Seconds between frames.
    pub fn frame_period(&self) -> f64 {
        1.0 / self.fps
    }

    /// `K [I | 0]`.
    pub fn projection_matrix(&self) -> Matrix3x4<f64> {
        Matrix3x4::new(
            self.fx, 0.0, self.cx, 0.0, //
            0.0, self.fy, self.cy, 0.0, //
            0.0, 0.0, 1.0, 0.0,
        )
    }

    /// Pixel inside the image rectangle `[0, w) x [0, h)`.
    pub fn in_image(&self, px: &Vector2<f64>) -> bool {
        px.x >= 0.0 && px.y >= 0.0 && px.x < self.width as f64 && px.y < self.height as f64
    }

    /// Noise-free pinhole projection of a camera-frame point.
    pub fn project_exact(&self, p: &Vector3<f64>) -> Projection {
        if !(p.z > 0.0) {
            return Projection::Occluded;
        }
        let px = Vector2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy);
        if self.in_image(&px) {
            Projection::Visible(px)
        } else {
            Projection::Occluded
        }
    }

    /// Pinhole projection with isotropic Gaussian pixel noise of standard
    /// deviation `noise_px` (0 gives the exact projection).
    pub fn project<R: Rng + ?Sized>(
        &self,
        p: &Vector3<f64>,
        noise_px: f64,
        rng: &mut R,
    ) -> Projection {
        match self.project_exact(p) {
            Projection::Visible(px) if noise_px > 0.0 => {
                let n = Normal::new(0.0, noise_px).expect("finite sigma");
                let noisy = px + Vector2::new(n.sample(rng), n.sample(rng));
                if self.in_image(&noisy) {
                    Projection::Visible(noisy)
                } else {
                    Projection::Occluded
                }
            }
            other => other,
        }
    }

    /// Point at `depth` (camera z) along the ray through `px`.
    pub fn unproject(&self, px: &Vector2<f64>, depth: f64) -> Vector3<f64> {
        Vector3::new(
            (px.x - self.cx) / self.fx * depth,
            (px.y - self.cy) / self.fy * depth,
            depth,
        )
    }

    /// Normalized image coordinates `((u - cx)/fx, (v - cy)/fy)`.
    pub fn normalize(&self, px: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new((px.x - self.cx) / self.fx, (px.y - self.cy) / self.fy)
    }

    /// World-frame point expressed in the camera frame.
    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.pose.pose.inverse().transform_point(p)
    }

    /// Camera pose in the world, as a plain pose.
    pub fn world_pose(&self) -> Pose {
        self.pose.pose
    }
}

/// Homogeneous projection `P [p; 1]` without image bounds, for testing.
pub fn homogeneous_project(p: &Matrix3x4<f64>, x: &Vector3<f64>) -> Vector2<f64> {
    let h = p * Vector4::new(x.x, x.y, x.z, 1.0);
    Vector2::new(h.x / h.z, h.y / h.z)
}
