use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::RenderError;

fn default_near() -> f64 {
    0.01
}

/// Pinhole camera. Image x grows to the right and y grows downward.
///
/// Serializes to the sidecar record `{position, look_at, up, fov, width,
/// height}` (plus `near`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub position: [f64; 3],
    pub look_at: [f64; 3],
    pub up: [f64; 3],
    /// Vertical field of view in radians.
    #[serde(rename = "fov")]
    pub vertical_fov: f64,
    pub width: u32,
    pub height: u32,
    #[serde(default = "default_near")]
    pub near: f64,
}

/// World-to-camera rotation rows and intrinsics, derived from a valid camera.
#[derive(Debug, Clone, Copy)]
pub(crate) struct CameraFrame {
    pub origin: Vector3<f64>,
    pub right: Vector3<f64>,
    pub down: Vector3<f64>,
    pub forward: Vector3<f64>,
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
    pub near: f64,
}

impl CameraFrame {
    pub fn to_camera_space(&self, p: Vector3<f64>) -> Vector3<f64> {
        let d = p - self.origin;
        Vector3::new(self.right.dot(&d), self.down.dot(&d), self.forward.dot(&d))
    }
}

impl Camera {
    pub fn new(position: [f64; 3], look_at: [f64; 3], vertical_fov: f64, width: u32, height: u32) -> Self {
        Self { position, look_at, up: [0.0, 1.0, 0.0], vertical_fov, width, height, near: default_near() }
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        let bad = |reason: &str| Err(RenderError::InvalidCamera(reason.to_owned()));
        let finite = self
            .position
            .iter()
            .chain(&self.look_at)
            .chain(&self.up)
            .chain([&self.vertical_fov, &self.near])
            .all(|v| v.is_finite());
        if !finite {
            return bad("non-finite parameter");
        }
        if self.width == 0 || self.height == 0 {
            return bad("image size must be at least 1x1");
        }
        if !(self.vertical_fov > 0.0 && self.vertical_fov < std::f64::consts::PI) {
            return bad("vertical fov must lie in (0, pi)");
        }
        if self.near <= 0.0 {
            return bad("near plane must be positive");
        }
        let view = Vector3::from(self.look_at) - Vector3::from(self.position);
        let distance = view.norm();
        if distance <= self.near {
            return bad("look_at must lie beyond the near plane");
        }
        let up = Vector3::from(self.up);
        if up.norm() == 0.0 || view.cross(&up).norm() <= 1e-9 * distance * up.norm() {
            return bad("view direction is parallel to up");
        }
        Ok(())
    }

    pub(crate) fn frame(&self) -> Result<CameraFrame, RenderError> {
        self.validate()?;
        let origin = Vector3::from(self.position);
        let forward = (Vector3::from(self.look_at) - origin).normalize();
        let right = forward.cross(&Vector3::from(self.up)).normalize();
        let true_up = right.cross(&forward);
        let focal = 0.5 * self.height as f64 / (0.5 * self.vertical_fov).tan();
        Ok(CameraFrame {
            origin,
            right,
            down: -true_up,
            forward,
            focal,
            cx: 0.5 * self.width as f64,
            cy: 0.5 * self.height as f64,
            near: self.near,
        })
    }

    /// Pixel coordinates of a world point, or `None` when it is not in front
    /// of the near plane.
    pub fn project(&self, p: [f64; 3]) -> Option<[f64; 2]> {
        let frame = self.frame().ok()?;
        let c = frame.to_camera_space(Vector3::from(p));
        if c.z <= frame.near {
            return None;
        }
        Some([frame.focal * c.x / c.z + frame.cx, frame.focal * c.y / c.z + frame.cy])
    }
}
