//! Undistorted pinhole camera.

use serde::{Deserialize, Serialize};

use super::{normalize, UnitVec3, Vec2, Vec3};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Smallest forward component accepted for projection.
const MIN_FORWARD: f64 = 1e-6;

/// Pinhole intrinsics in pixels. No distortion model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    /// Ideal 800x800 scene camera with `fx = fy = 400`, giving a 90 x 90 degree
    /// field of view.
    pub const IDEAL: CameraIntrinsics = CameraIntrinsics {
        fx: 400.0,
        fy: 400.0,
        cx: 400.0,
        cy: 400.0,
        width: 800,
        height: 800,
    };

    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::Config(format!(
                "focal lengths must be positive, got fx={fx}, fy={fy}"
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::Config("sensor size must be non-zero".into()));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Pixel coordinates of direction `d`.
    pub fn project_point<T: Real>(&self, d: &UnitVec3<T>) -> Result<Vec2<T>> {
        let n = normalized_image_coords(d)?;
        Ok(Vec2::new(
            T::lit(self.fx) * n.x + T::lit(self.cx),
            T::lit(self.fy) * n.y + T::lit(self.cy),
        ))
    }

    /// Viewing direction through pixel `px`.
    pub fn unproject<T: Real>(&self, px: Vec2<T>) -> UnitVec3<T> {
        let x = (px.x - T::lit(self.cx)) / T::lit(self.fx);
        let y = (px.y - T::lit(self.cy)) / T::lit(self.fy);
        normalize(Vec3::new(x, y, T::one())).expect("ray with unit z is never degenerate")
    }

    /// Whether pixel `px` lies on the sensor.
    pub fn contains<T: Real>(&self, px: Vec2<T>) -> bool {
        let (x, y) = (px.x.as_f64(), px.y.as_f64());
        (0.0..=self.width as f64).contains(&x) && (0.0..=self.height as f64).contains(&y)
    }
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self::IDEAL
    }
}

/// Normalized image-plane coordinates `(x/z, y/z)` of a direction.
pub fn normalized_image_coords<T: Real>(d: &UnitVec3<T>) -> Result<Vec2<T>> {
    let v = d.as_vec();
    if !(v.z > T::lit(MIN_FORWARD)) {
        return Err(Error::BehindCamera { z: v.z.as_f64() });
    }
    Ok(Vec2::new(v.x / v.z, v.y / v.z))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ideal_camera_examples() {
        let cam = CameraIntrinsics::IDEAL;
        let p = cam.project_point(&UnitVec3::<f64>::unit_z()).unwrap();
        assert_eq!(p, Vec2::new(400.0, 400.0));

        let d = normalize(Vec3::new(1.0f64, 0.0, 1.0)).unwrap();
        let p = cam.project_point(&d).unwrap();
        assert!((p.x - 800.0).abs() < 1e-9);
        assert!((p.y - 400.0).abs() < 1e-12);

        let back = UnitVec3::from_xyz(0.0, 0.0, -1.0).unwrap();
        assert!(matches!(
            cam.project_point(&back),
            Err(Error::BehindCamera { .. })
        ));
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0, 10, 10).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0, 0, 10).is_err());
        assert!(CameraIntrinsics::new(500.0, 510.0, 320.0, 240.0, 640, 480).is_ok());
    }

    #[test]
    fn unproject_round_trip() {
        let cam = CameraIntrinsics::new(512.3, 498.7, 401.2, 389.9, 800, 800).unwrap();
        for &(u, v) in &[(0.0, 0.0), (800.0, 800.0), (123.4, 700.1), (401.2, 389.9)] {
            let px = Vec2::new(u, v);
            let d = cam.unproject(px);
            let back = cam.project_point(&d).unwrap();
            assert!((back - px).norm() < 1e-6);
            assert!(cam.contains(back));
        }
    }
}
