//! Virtual camera rig, projection with self-occlusion, orientation bins and
//! 2D preprocessing.
//!
//! World frame: `z` is up, positions are in meters. A body whose
//! left-to-right hip vector points along `-x` faces `-y`, which is azimuth 0.
//! Azimuth grows counter-clockwise seen from above, so `+x` is azimuth 90.

mod camera;
pub mod io;
mod occlusion;
mod preprocess;
mod projection;
pub mod skeleton;

pub use camera::{
    assign_orientation_bin, azimuth_deg, build_camera_rig, reference_yaw, relative_bin,
    CameraRig, Intrinsics, RigSpec, VirtualCamera, ORIENTATION_BINS,
};
pub use occlusion::{occlusion_test, Occlusion, TorsoPlane, MIN_TORSO_AREA};
pub use preprocess::{corrupt_2d, sample_indices, uniform_sample_frames, NoiseParams};
pub use projection::{project_motion, render_all_views, render_dataset, ProjectionStats, RenderedViews};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use skeleton::NUM_JOINTS;

pub type Frame3 = [[f64; 3]; NUM_JOINTS];
pub type Frame2 = [[f64; 2]; NUM_JOINTS];

/// A 3D joint trajectory in COCO-17 order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionSequence3D {
    pub label: String,
    pub fps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
    pub joints: Vec<Frame3>,
}

impl MotionSequence3D {
    pub fn frames(&self) -> usize {
        self.joints.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.joints.len() < 2 {
            return Err(invalid(format!(
                "motion `{}` has {} frames, need at least 2",
                self.label,
                self.joints.len()
            )));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(invalid(format!("motion `{}` has fps {}", self.label, self.fps)));
        }
        let finite = self
            .joints
            .iter()
            .flat_map(|f| f.iter().flatten())
            .all(|v| v.is_finite());
        if !finite {
            return Err(invalid(format!("motion `{}` has non-finite joints", self.label)));
        }
        Ok(())
    }

    /// Rotates every joint by `deg` about the vertical axis through the origin.
    pub fn rotated_about_vertical(&self, deg: f64) -> Self {
        let (s, c) = deg.to_radians().sin_cos();
        let joints = self
            .joints
            .iter()
            .map(|f| f.map(|[x, y, z]| [c * x - s * y, s * x + c * y, z]))
            .collect();
        Self {
            joints,
            ..self.clone()
        }
    }
}

/// One virtual-camera rendering of a motion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectedView {
    pub label: String,
    /// Index of the source motion within its dataset, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequence: Option<usize>,
    pub view_index: usize,
    pub theta_deg: i32,
    pub joints2d: Vec<Frame2>,
    pub visibility: Vec<[u8; NUM_JOINTS]>,
}

impl ProjectedView {
    pub fn frames(&self) -> usize {
        self.joints2d.len()
    }

    pub fn is_visible(&self, frame: usize, joint: usize) -> bool {
        self.visibility[frame][joint] != 0
    }

    pub fn visible_count(&self) -> usize {
        self.visibility
            .iter()
            .flat_map(|f| f.iter())
            .filter(|&&v| v != 0)
            .count()
    }

    pub fn validate(&self) -> Result<()> {
        if self.joints2d.is_empty() || self.joints2d.len() != self.visibility.len() {
            return Err(invalid(format!(
                "view of `{}`: {} frames of joints, {} of visibility",
                self.label,
                self.joints2d.len(),
                self.visibility.len()
            )));
        }
        if !ORIENTATION_BINS.contains(&self.theta_deg) {
            return Err(invalid(format!("theta {} is not a bin", self.theta_deg)));
        }
        for (f, (pts, vis)) in self.joints2d.iter().zip(&self.visibility).enumerate() {
            for j in 0..NUM_JOINTS {
                if vis[j] > 1 {
                    return Err(invalid(format!("visibility {} at frame {f}", vis[j])));
                }
                if vis[j] == 1 && !(pts[j][0].is_finite() && pts[j][1].is_finite()) {
                    return Err(invalid(format!("non-finite visible joint at frame {f}")));
                }
            }
        }
        Ok(())
    }
}
