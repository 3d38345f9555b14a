use nalgebra::{Matrix3, Vector3};

use super::skeleton::{LEFT_HIP, RIGHT_HIP};
use super::MotionSequence3D;
use crate::error::{invalid, Error, Result};

/// The twelve yaw bins, in degrees, in rig order.
pub const ORIENTATION_BINS: [i32; 12] = [
    -180, -150, -120, -90, -60, -30, 0, 30, 60, 90, 120, 150,
];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Default for Intrinsics {
    fn default() -> Self {
        Self {
            focal: 1000.0,
            cx: 512.0,
            cy: 512.0,
        }
    }
}

/// Pinhole camera. Camera axes are right, down and forward.
#[derive(Clone, Debug, PartialEq)]
pub struct VirtualCamera {
    pub index: usize,
    pub position: Vector3<f64>,
    pub yaw_deg: i32,
    pub intrinsics: Intrinsics,
    /// Rows are the camera axes expressed in world coordinates.
    world_to_camera: Matrix3<f64>,
}

impl VirtualCamera {
    pub fn look_at(
        index: usize,
        position: Vector3<f64>,
        target: Vector3<f64>,
        yaw_deg: i32,
        intrinsics: Intrinsics,
    ) -> Result<Self> {
        if !(intrinsics.focal > 0.0) {
            return Err(invalid(format!("focal length {} must be positive", intrinsics.focal)));
        }
        if yaw_deg % 30 != 0 || !(-180..=150).contains(&yaw_deg) {
            return Err(invalid(format!("camera yaw {yaw_deg} is not a bin")));
        }
        let forward = (target - position)
            .try_normalize(1e-12)
            .ok_or_else(|| invalid("camera position coincides with its target"))?;
        let right = forward
            .cross(&Vector3::z())
            .try_normalize(1e-12)
            .ok_or_else(|| invalid("camera looks straight along the vertical axis"))?;
        let down = forward.cross(&right);
        let world_to_camera = Matrix3::from_rows(&[
            right.transpose(),
            down.transpose(),
            forward.transpose(),
        ]);
        Ok(Self {
            index,
            position,
            yaw_deg,
            intrinsics,
            world_to_camera,
        })
    }

    pub fn to_camera(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.world_to_camera * (world - self.position)
    }

    /// Unit viewing direction in world coordinates.
    pub fn optical_axis(&self) -> Vector3<f64> {
        self.world_to_camera.row(2).transpose()
    }

    /// Pixel coordinates of a camera-frame point, `None` when `z <= 0`.
    pub fn project_camera_point(&self, p: &Vector3<f64>) -> Option<[f64; 2]> {
        if p.z <= 0.0 {
            return None;
        }
        let k = &self.intrinsics;
        Some([k.focal * p.x / p.z + k.cx, k.focal * p.y / p.z + k.cy])
    }

    pub fn project(&self, world: &Vector3<f64>) -> Option<[f64; 2]> {
        self.project_camera_point(&self.to_camera(world))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CameraRig {
    pub cameras: Vec<VirtualCamera>,
    pub radius: f64,
    pub height: f64,
    pub target: Vector3<f64>,
}

impl CameraRig {
    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }
}

/// Horizontal unit vector at the given azimuth.
fn azimuth_dir(deg: f64) -> Vector3<f64> {
    let (s, c) = deg.to_radians().sin_cos();
    Vector3::new(s, -c, 0.0)
}

/// Azimuth of the horizontal part of `v`, in `(-180, 180]`.
pub fn azimuth_deg(v: &Vector3<f64>) -> f64 {
    let a = v.x.atan2(-v.y).to_degrees();
    if a <= -180.0 {
        a + 360.0
    } else {
        a
    }
}

/// Twelve cameras on a horizontal circle around `target`, one per yaw bin.
///
/// The camera with yaw `psi` sits at azimuth `psi` from the target, at
/// world height `height`, and looks at the target.
pub fn build_camera_rig(
    radius: f64,
    height: f64,
    target: Vector3<f64>,
    intrinsics: Intrinsics,
) -> Result<CameraRig> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(invalid(format!("rig radius {radius} must be positive")));
    }
    if !height.is_finite() || !target.iter().all(|v| v.is_finite()) {
        return Err(invalid("rig height and target must be finite"));
    }
    let cameras = ORIENTATION_BINS
        .iter()
        .enumerate()
        .map(|(i, &yaw)| {
            let mut position = target + azimuth_dir(yaw as f64) * radius;
            position.z = height;
            VirtualCamera::look_at(i, position, target, yaw, intrinsics)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CameraRig {
        cameras,
        radius,
        height,
        target,
    })
}

/// Rig geometry without a target; see [`RigSpec::rig_for`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigSpec {
    pub radius: f64,
    /// World height of every camera.
    pub height: f64,
    pub intrinsics: Intrinsics,
}

impl Default for RigSpec {
    fn default() -> Self {
        Self {
            radius: 3.0,
            height: 1.5,
            intrinsics: Intrinsics::default(),
        }
    }
}

impl RigSpec {
    /// A rig around the first-frame mid-hip of `motion`.
    pub fn rig_for(&self, motion: &MotionSequence3D) -> Result<CameraRig> {
        let frame = motion
            .joints
            .first()
            .ok_or_else(|| invalid("motion has no frames"))?;
        let target = (Vector3::from(frame[LEFT_HIP]) + Vector3::from(frame[RIGHT_HIP])) * 0.5;
        build_camera_rig(self.radius, self.height, target, self.intrinsics)
    }
}

/// Azimuth of the body front in the first frame, in `(-180, 180]`.
///
/// The front is `up x (right_hip - left_hip)`; a camera at this azimuth has
/// its optical axis orthogonal to the hip vector and sees the body front.
pub fn reference_yaw(motion: &MotionSequence3D) -> Result<f64> {
    let frame = motion
        .joints
        .first()
        .ok_or_else(|| invalid("motion has no frames"))?;
    let l = Vector3::from(frame[LEFT_HIP]);
    let r = Vector3::from(frame[RIGHT_HIP]);
    if !(l.iter().chain(r.iter()).all(|v| v.is_finite())) {
        return Err(Error::DegeneratePose("non-finite hip joints".into()));
    }
    let hips = r - l;
    if hips.x.hypot(hips.y) < 1e-9 {
        return Err(Error::DegeneratePose(
            "hip joints coincide in the horizontal plane".into(),
        ));
    }
    let front = Vector3::z().cross(&hips);
    Ok(azimuth_deg(&front))
}

/// Nearest multiple of 30 in `[-180, 150]` with wraparound. Exact ties go to
/// the smaller bin value.
pub fn assign_orientation_bin(yaw_deg: f64) -> Result<i32> {
    if !yaw_deg.is_finite() {
        return Err(invalid(format!("yaw {yaw_deg} is not finite")));
    }
    let mut x = yaw_deg.rem_euclid(360.0);
    if x >= 180.0 {
        x -= 360.0;
    }
    let lo = (x / 30.0).floor() * 30.0;
    let hi = lo + 30.0;
    let wrap = |v: f64| -> i32 {
        let v = v as i32;
        if v >= 180 {
            v - 360
        } else {
            v
        }
    };
    let (d_lo, d_hi) = (x - lo, hi - x);
    Ok(if d_lo < d_hi {
        wrap(lo)
    } else if d_hi < d_lo {
        wrap(hi)
    } else {
        wrap(lo).min(wrap(hi))
    })
}

/// `body_bin - camera_yaw`, wrapped back onto the bin grid.
pub fn relative_bin(body_bin: i32, camera_yaw: i32) -> i32 {
    let d = (body_bin - camera_yaw).rem_euclid(360);
    if d >= 180 {
        d - 360
    } else {
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rig() -> CameraRig {
        build_camera_rig(3.0, 1.5, Vector3::new(0.0, 0.0, 0.95), Intrinsics::default()).unwrap()
    }

    #[test]
    fn rig_covers_every_bin() {
        let rig = rig();
        assert_eq!(rig.len(), 12);
        let yaws: Vec<i32> = rig.cameras.iter().map(|c| c.yaw_deg).collect();
        assert_eq!(yaws, ORIENTATION_BINS.to_vec());
        for cam in &rig.cameras {
            let horizontal = (cam.position - rig.target).xy().norm();
            assert!((horizontal - 3.0).abs() < 1e-12);
            assert_eq!(cam.position.z, 1.5);
        }
    }

    #[test]
    fn optical_axis_passes_through_target() {
        let rig = rig();
        let cam = &rig.cameras[6];
        assert_eq!(cam.yaw_deg, 0);
        let to_target = rig.target - cam.position;
        let along = to_target.dot(&cam.optical_axis());
        let residual = (to_target - cam.optical_axis() * along).norm();
        assert!(residual < 1e-9, "residual {residual}");
        let center = cam.project(&rig.target).unwrap();
        assert!((center[0] - 512.0).abs() < 1e-9 && (center[1] - 512.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_geometry() {
        let t = Vector3::zeros();
        assert!(build_camera_rig(0.0, 1.0, t, Intrinsics::default()).is_err());
        assert!(build_camera_rig(-1.0, 1.0, t, Intrinsics::default()).is_err());
        let k = Intrinsics {
            focal: 0.0,
            ..Intrinsics::default()
        };
        assert!(build_camera_rig(3.0, 1.0, t, k).is_err());
    }

    #[test]
    fn binning_examples() {
        assert_eq!(assign_orientation_bin(14.0).unwrap(), 0);
        assert_eq!(assign_orientation_bin(-180.0).unwrap(), -180);
        assert_eq!(assign_orientation_bin(172.0).unwrap(), -180);
        assert_eq!(assign_orientation_bin(180.0).unwrap(), -180);
        assert_eq!(assign_orientation_bin(15.0).unwrap(), 0);
        assert_eq!(assign_orientation_bin(-15.0).unwrap(), -30);
        assert_eq!(assign_orientation_bin(165.0).unwrap(), -180);
        assert_eq!(assign_orientation_bin(-165.0).unwrap(), -180);
        assert_eq!(assign_orientation_bin(395.0).unwrap(), 30);
        assert!(assign_orientation_bin(f64::NAN).is_err());
    }

    #[test]
    fn relative_bins_are_distinct() {
        for &body in &ORIENTATION_BINS {
            let mut got: Vec<i32> = ORIENTATION_BINS.iter().map(|&c| relative_bin(body, c)).collect();
            got.sort();
            assert_eq!(got, ORIENTATION_BINS.to_vec());
        }
    }

    #[test]
    fn camera_pixel_scale_is_linear_in_focal() {
        let p = Vector3::new(0.3, -0.2, 2.0);
        let k1 = Intrinsics::default();
        let k2 = Intrinsics {
            focal: 2000.0,
            ..k1
        };
        let c1 = VirtualCamera::look_at(0, Vector3::new(0.0, -3.0, 1.0), Vector3::new(0.0, 0.0, 1.0), 0, k1).unwrap();
        let c2 = VirtualCamera { intrinsics: k2, ..c1.clone() };
        let a = c1.project_camera_point(&p).unwrap();
        let b = c2.project_camera_point(&p).unwrap();
        assert!(((b[0] - 512.0) - 2.0 * (a[0] - 512.0)).abs() < 1e-9);
        assert!(((b[1] - 512.0) - 2.0 * (a[1] - 512.0)).abs() < 1e-9);
        let on_axis = c1.project_camera_point(&Vector3::new(0.0, 0.0, 4.0)).unwrap();
        assert_eq!(on_axis, [512.0, 512.0]);
    }
}
