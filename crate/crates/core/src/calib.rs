//! Sensor calibration: LiDAR to rectified camera to image.

use nalgebra::{Matrix3, Matrix3x4, Matrix4, Point3, Vector3, Vector4};

use crate::error::{Error, Result};
use crate::geometry::Box3D;

/// KITTI-style calibration. `velo_to_cam` is the rigid LiDAR to reference
/// camera transform, `rect` the rectifying rotation and `p2` the projection
/// of the left color camera.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub p2: Matrix3x4<f64>,
    pub rect: Matrix3<f64>,
    pub velo_to_cam: Matrix3x4<f64>,
}

/// Box in the rectified camera frame as stored in label files: location is
/// the bottom-face center, `rotation_y` turns about the camera's downward
/// `y` axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraBox {
    pub h: f64,
    pub w: f64,
    pub l: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub rotation_y: f64,
}

impl Calibration {
    pub fn new(p2: Matrix3x4<f64>, rect: Matrix3<f64>, velo_to_cam: Matrix3x4<f64>) -> Result<Self> {
        let calib = Calibration { p2, rect, velo_to_cam };
        calib.validate()?;
        Ok(calib)
    }

    /// LiDAR `x` forward, `y` left, `z` up; camera `x` right, `y` down,
    /// `z` forward; sensors co-located; focal length and principal point of
    /// a typical 1242x375 KITTI image.
    pub fn synthetic() -> Self {
        #[rustfmt::skip]
        let velo_to_cam = Matrix3x4::new(
            0.0, -1.0, 0.0, 0.0,
            0.0, 0.0, -1.0, 0.0,
            1.0, 0.0, 0.0, 0.0,
        );
        #[rustfmt::skip]
        let p2 = Matrix3x4::new(
            721.5377, 0.0, 609.5593, 0.0,
            0.0, 721.5377, 172.854, 0.0,
            0.0, 0.0, 1.0, 0.0,
        );
        Calibration {
            p2,
            rect: Matrix3::identity(),
            velo_to_cam,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = self.p2.iter().chain(self.rect.iter()).chain(self.velo_to_cam.iter());
        if all.clone().any(|v| !v.is_finite()) {
            return Err(Error::Config("calibration contains non-finite values".into()));
        }
        let det_p = self.p2.fixed_view::<3, 3>(0, 0).determinant();
        if det_p.abs() < 1e-12 || self.p2[(0, 0)] == 0.0 || self.p2[(1, 1)] == 0.0 {
            return Err(Error::Config("projection matrix is not invertible".into()));
        }
        if self.rect.determinant().abs() < 1e-12 {
            return Err(Error::Config("rectification matrix is singular".into()));
        }
        if self.velo_to_cam.fixed_view::<3, 3>(0, 0).determinant().abs() < 1e-12 {
            return Err(Error::Config("LiDAR to camera rotation is singular".into()));
        }
        Ok(())
    }

    fn velo_to_rect_linear(&self) -> Matrix3<f64> {
        self.rect * self.velo_to_cam.fixed_view::<3, 3>(0, 0)
    }

    fn velo_to_rect_offset(&self) -> Vector3<f64> {
        self.rect * self.velo_to_cam.column(3)
    }

    /// Full LiDAR to image projection `P2 * R_rect * Tr_velo_to_cam`.
    pub fn projection(&self) -> Matrix3x4<f64> {
        let mut rect4 = Matrix4::identity();
        rect4.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rect);
        let mut tr4 = Matrix4::identity();
        tr4.fixed_view_mut::<3, 4>(0, 0).copy_from(&self.velo_to_cam);
        self.p2 * rect4 * tr4
    }

    pub fn velo_to_rect(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.velo_to_rect_linear() * p.coords + self.velo_to_rect_offset())
    }

    pub fn rect_to_velo(&self, p: &Point3<f64>) -> Point3<f64> {
        let inv = self
            .velo_to_rect_linear()
            .try_inverse()
            .expect("validated calibration is invertible");
        Point3::from(inv * (p.coords - self.velo_to_rect_offset()))
    }

    /// Pixel coordinates and rectified-camera depth of a LiDAR point.
    pub fn project_rect(&self, rect: &Point3<f64>) -> (f64, f64, f64) {
        let q = self.p2 * Vector4::new(rect.x, rect.y, rect.z, 1.0);
        (q.x / q.z, q.y / q.z, rect.z)
    }

    pub fn focal(&self) -> (f64, f64) {
        (self.p2[(0, 0)], self.p2[(1, 1)])
    }

    pub fn principal_point(&self) -> (f64, f64) {
        (self.p2[(0, 2)], self.p2[(1, 2)])
    }

    /// Converts a LiDAR-frame box (volumetric center) to the label-file
    /// camera convention (bottom-face center).
    pub fn box_to_camera(&self, b: &Box3D) -> CameraBox {
        let bottom = Point3::new(b.x(), b.y(), b.z() - 0.5 * b.h());
        let loc = self.velo_to_rect(&bottom);
        let heading = self.velo_to_rect_linear() * Vector3::new(b.theta().cos(), b.theta().sin(), 0.0);
        CameraBox {
            h: b.h(),
            w: b.w(),
            l: b.l(),
            x: loc.x,
            y: loc.y,
            z: loc.z,
            rotation_y: crate::geometry::normalize_angle((-heading.z).atan2(heading.x)),
        }
    }

    pub fn camera_to_box(&self, c: &CameraBox) -> Result<Box3D> {
        let bottom = self.rect_to_velo(&Point3::new(c.x, c.y, c.z));
        let inv = self
            .velo_to_rect_linear()
            .try_inverse()
            .expect("validated calibration is invertible");
        let heading = inv * Vector3::new(c.rotation_y.cos(), 0.0, -c.rotation_y.sin());
        Box3D::new(
            bottom.x,
            bottom.y,
            bottom.z + 0.5 * c.h,
            c.l,
            c.w,
            c.h,
            heading.y.atan2(heading.x),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn kitti_like() -> Calibration {
        // values in the style of KITTI tracking sequence 0000
        #[rustfmt::skip]
        let velo = Matrix3x4::new(
            7.533745e-03, -9.999714e-01, -6.166020e-04, -4.069766e-03,
            1.480249e-02, 7.280733e-04, -9.998902e-01, -7.631618e-02,
            9.998621e-01, 7.523790e-03, 1.480755e-02, -2.717806e-01,
        );
        #[rustfmt::skip]
        let rect = Matrix3::new(
            9.999239e-01, 9.837760e-03, -7.445048e-03,
            -9.869795e-03, 9.999421e-01, -4.278459e-03,
            7.402527e-03, 4.351614e-03, 9.999631e-01,
        );
        #[rustfmt::skip]
        let p2 = Matrix3x4::new(
            7.215377e+02, 0.0, 6.095593e+02, 4.485728e+01,
            0.0, 7.215377e+02, 1.728540e+02, 2.163791e-01,
            0.0, 0.0, 1.0, 2.745884e-03,
        );
        Calibration::new(p2, rect, velo).unwrap()
    }

    #[test]
    fn identity_extrinsics_give_bare_projection() {
        let p2 = Calibration::synthetic().p2;
        let c = Calibration::new(p2, Matrix3::identity(), Matrix3x4::identity()).unwrap();
        assert_eq!(c.projection(), p2);
    }

    #[test]
    fn singular_projection_rejected() {
        let mut c = Calibration::synthetic();
        c.p2 = Matrix3x4::zeros();
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn point_round_trip() {
        let c = kitti_like();
        let p = Point3::new(12.3, -4.5, 0.7);
        let back = c.rect_to_velo(&c.velo_to_rect(&p));
        assert_abs_diff_eq!((back - p).norm(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn synthetic_box_round_trip() {
        let c = Calibration::synthetic();
        let b = Box3D::new(15.0, 3.0, -0.98, 4.2, 1.8, 1.5, 0.4).unwrap();
        let cam = c.box_to_camera(&b);
        // heading along lidar +x faces camera +z, i.e. rotation_y = -pi/2 - theta
        assert_abs_diff_eq!(cam.rotation_y, -std::f64::consts::FRAC_PI_2 - 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(cam.y, 0.98 + 0.75, epsilon = 1e-12);
        let back = c.camera_to_box(&cam).unwrap();
        for (u, v) in [
            (back.x(), b.x()),
            (back.y(), b.y()),
            (back.z(), b.z()),
            (back.theta(), b.theta()),
        ] {
            assert_abs_diff_eq!(u, v, epsilon = 1e-9);
        }
    }
}
