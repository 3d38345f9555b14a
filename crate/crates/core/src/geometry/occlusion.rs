use nalgebra::Vector3;

use super::skeleton::{LEFT_HIP, LEFT_SHOULDER, RIGHT_HIP, RIGHT_SHOULDER};
use super::Frame3;
use crate::error::{invalid, Result};

/// Torso quads with less area than this (m^2) are not used as occluders.
pub const MIN_TORSO_AREA: f64 = 1e-8;

/// Shoulder-left, shoulder-right, hip-right, hip-left.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TorsoPlane {
    pub quad: [Vector3<f64>; 4],
}

impl TorsoPlane {
    pub fn new(quad: [Vector3<f64>; 4]) -> Self {
        Self { quad }
    }

    pub fn from_frame(frame: &Frame3) -> Self {
        let p = |j: usize| Vector3::from(frame[j]);
        Self::new([
            p(LEFT_SHOULDER),
            p(RIGHT_SHOULDER),
            p(RIGHT_HIP),
            p(LEFT_HIP),
        ])
    }

    /// The quad split along the 0-2 diagonal.
    pub fn triangles(&self) -> [[Vector3<f64>; 3]; 2] {
        let q = &self.quad;
        [[q[0], q[1], q[2]], [q[0], q[2], q[3]]]
    }

    pub fn area(&self) -> f64 {
        self.triangles()
            .iter()
            .map(|[a, b, c]| 0.5 * (b - a).cross(&(c - a)).norm())
            .sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Occlusion {
    Visible,
    Occluded,
    /// The torso quad is too small to occlude anything; treated as visible.
    DegenerateTorso,
}

impl Occlusion {
    pub fn is_visible(self) -> bool {
        !matches!(self, Occlusion::Occluded)
    }
}

/// Whether the open segment camera -> joint crosses the torso quad.
pub fn occlusion_test(
    camera_pos: &Vector3<f64>,
    joint_pos: &Vector3<f64>,
    torso: &TorsoPlane,
) -> Result<Occlusion> {
    if camera_pos == joint_pos {
        return Err(invalid("camera and joint coincide"));
    }
    if torso.area() < MIN_TORSO_AREA {
        return Ok(Occlusion::DegenerateTorso);
    }
    let dir = joint_pos - camera_pos;
    let hit = torso
        .triangles()
        .iter()
        .any(|tri| segment_hits_triangle(camera_pos, &dir, tri));
    Ok(if hit {
        Occlusion::Occluded
    } else {
        Occlusion::Visible
    })
}

/// Moller-Trumbore restricted to `0 < t < 1` along `origin + t * dir`.
fn segment_hits_triangle(origin: &Vector3<f64>, dir: &Vector3<f64>, tri: &[Vector3<f64>; 3]) -> bool {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-15 {
        return false;
    }
    let inv = 1.0 / det;
    let s = origin - tri[0];
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return false;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return false;
    }
    let t = e2.dot(&q) * inv;
    t > 0.0 && t < 1.0
}
