use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::vec3::{self, Vec3};

/// Default camera-to-origin distance.
pub const DEFAULT_DISTANCE: f64 = 2.732;
/// Default half viewing angle in degrees.
pub const DEFAULT_VIEW_ANGLE: f64 = 30.0;
/// Elevation of every stored dataset view, degrees.
pub const DEFAULT_ELEVATION: f64 = 30.0;

/// Camera pose and intrinsics for one view. The camera always looks at the
/// origin with +y up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewSpec {
    /// Degrees, nominally in `[0, 360)`.
    pub azimuth: f64,
    /// Degrees above the horizontal plane.
    pub elevation: f64,
    pub distance: f64,
    /// Output images are `image_size x image_size`.
    pub image_size: usize,
    /// Half viewing angle in degrees: a point at camera depth `z` with
    /// lateral offset `z * tan(view_angle)` lands on the image border.
    pub view_angle: f64,
}

impl ViewSpec {
    pub fn new(azimuth: f64, elevation: f64, image_size: usize) -> Self {
        ViewSpec {
            azimuth,
            elevation,
            distance: DEFAULT_DISTANCE,
            image_size,
            view_angle: DEFAULT_VIEW_ANGLE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.distance > 0.0) {
            return Err(Error::Config(format!(
                "camera distance must be positive, got {}",
                self.distance
            )));
        }
        if self.image_size < 16 {
            return Err(Error::Config(format!(
                "image size must be at least 16, got {}",
                self.image_size
            )));
        }
        if !(self.view_angle > 0.0 && self.view_angle < 90.0) {
            return Err(Error::Config(format!(
                "view angle must be in (0, 90), got {}",
                self.view_angle
            )));
        }
        Ok(())
    }
}

/// World-to-camera transform derived from a [`ViewSpec`].
#[derive(Debug, Clone, Copy)]
pub(crate) struct Camera {
    pub eye: Vec3,
    /// Rows are the camera right, up and forward axes in world coordinates.
    pub axes: [Vec3; 3],
    pub tan_half: f64,
}

impl Camera {
    pub fn new(view: &ViewSpec) -> Self {
        let (az, el) = (view.azimuth.to_radians(), view.elevation.to_radians());
        let d = view.distance;
        let eye = [
            d * el.cos() * az.sin(),
            d * el.sin(),
            -d * el.cos() * az.cos(),
        ];
        let forward = vec3::normalize(vec3::scale(eye, -1.0));
        let mut right = vec3::cross(forward, [0.0, 1.0, 0.0]);
        if vec3::norm(right) < 1e-9 {
            right = [1.0, 0.0, 0.0];
        }
        let right = vec3::normalize(right);
        let up = vec3::cross(right, forward);
        Camera {
            eye,
            axes: [right, up, forward],
            tan_half: view.view_angle.to_radians().tan(),
        }
    }

    pub fn to_camera(&self, p: Vec3) -> Vec3 {
        let q = vec3::sub(p, self.eye);
        [
            vec3::dot(self.axes[0], q),
            vec3::dot(self.axes[1], q),
            vec3::dot(self.axes[2], q),
        ]
    }

    /// Gradient with respect to a world point, given the gradient with
    /// respect to its camera coordinates.
    pub fn grad_to_world(&self, g: Vec3) -> Vec3 {
        let mut out = vec3::scale(self.axes[0], g[0]);
        vec3::add_assign(&mut out, vec3::scale(self.axes[1], g[1]));
        vec3::add_assign(&mut out, vec3::scale(self.axes[2], g[2]));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_projects_to_center_at_camera_distance() {
        for az in [0.0, 37.0, 200.0] {
            let cam = Camera::new(&ViewSpec::new(az, 30.0, 64));
            let p = cam.to_camera([0.0; 3]);
            assert!(p[0].abs() < 1e-12 && p[1].abs() < 1e-12);
            assert!((p[2] - DEFAULT_DISTANCE).abs() < 1e-12);
        }
    }

    #[test]
    fn axes_are_orthonormal() {
        let cam = Camera::new(&ViewSpec::new(123.0, 30.0, 64));
        for i in 0..3 {
            for j in 0..3 {
                let d = vec3::dot(cam.axes[i], cam.axes[j]);
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((d - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn validation() {
        assert!(ViewSpec::new(0.0, 30.0, 64).validate().is_ok());
        assert!(ViewSpec::new(0.0, 30.0, 8).validate().is_err());
        let mut v = ViewSpec::new(0.0, 30.0, 64);
        v.distance = 0.0;
        assert!(v.validate().is_err());
    }
}
