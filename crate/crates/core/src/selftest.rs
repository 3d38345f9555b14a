//! Built-in checks run by the `selftest` command: the occlusion test against
//! a sampled ray march, and finite-difference checks of the training loss.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoding::encode_degrees;
use crate::error::Result;
use crate::geometry::{occlusion_test, ProjectedView, TorsoPlane, ORIENTATION_BINS};
use crate::model::{ModelConfig, OrientationAwareModel};
use crate::numerics::{grad_check, GradCheckReport};
use crate::training::{batch_loss, BatchItem, BatchPlan, Negative};

/// Samples along the camera-joint segment in [`ray_march_occluded`].
pub const MARCH_SAMPLES: usize = 256;

/// Scenes closer than this to a triangle edge or a segment end are excluded.
pub const BOUNDARY_BAND: f64 = 1e-6;

fn crossing(
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    tri: &[Vector3<f64>; 3],
) -> Option<(f64, Vector3<f64>, Vector3<f64>)> {
    let n = (tri[1] - tri[0]).cross(&(tri[2] - tri[0]));
    if n.norm() == 0.0 {
        return None;
    }
    let n = n.normalize();
    let dist = |p: &Vector3<f64>| (p - tri[0]).dot(&n);
    let pts: Vec<Vector3<f64>> = (0..MARCH_SAMPLES)
        .map(|k| a + (b - a) * (k as f64 / (MARCH_SAMPLES - 1) as f64))
        .collect();
    for k in 1..pts.len() {
        let (d0, d1) = (dist(&pts[k - 1]), dist(&pts[k]));
        if (d0 > 0.0 && d1 < 0.0) || (d0 < 0.0 && d1 > 0.0) {
            let s = d0 / (d0 - d1);
            let t = ((k - 1) as f64 + s) / (MARCH_SAMPLES - 1) as f64;
            return Some((t, pts[k - 1] + (pts[k] - pts[k - 1]) * s, n));
        }
    }
    None
}

/// Barycentric membership after dropping the dominant normal axis.
fn inside_triangle(p: &Vector3<f64>, tri: &[Vector3<f64>; 3], n: &Vector3<f64>) -> bool {
    let drop = n.iamax();
    let keep: Vec<usize> = (0..3).filter(|&i| i != drop).collect();
    let q = |v: &Vector3<f64>| (v[keep[0]], v[keep[1]]);
    let (px, py) = q(p);
    let [(ax, ay), (bx, by), (cx, cy)] = [q(&tri[0]), q(&tri[1]), q(&tri[2])];
    let det = (by - cy) * (ax - cx) + (cx - bx) * (ay - cy);
    let l1 = ((by - cy) * (px - cx) + (cx - bx) * (py - cy)) / det;
    let l2 = ((cy - ay) * (px - cx) + (ax - cx) * (py - cy)) / det;
    l1 >= 0.0 && l2 >= 0.0 && l1 + l2 <= 1.0
}

/// Brute-force occlusion: march the segment in [`MARCH_SAMPLES`] steps,
/// locate the plane crossing of each torso triangle and test membership.
pub fn ray_march_occluded(camera: &Vector3<f64>, joint: &Vector3<f64>, torso: &TorsoPlane) -> bool {
    torso.triangles().iter().any(|tri| {
        crossing(camera, joint, tri).is_some_and(|(_, p, n)| inside_triangle(&p, tri, &n))
    })
}

fn point_segment_distance(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// Smallest distance from a plane crossing to a triangle edge or to a
/// segment end; infinite when no triangle plane is crossed.
pub fn boundary_distance(camera: &Vector3<f64>, joint: &Vector3<f64>, torso: &TorsoPlane) -> f64 {
    let len = (joint - camera).norm();
    torso
        .triangles()
        .iter()
        .filter_map(|tri| {
            let (t, p, _) = crossing(camera, joint, tri)?;
            let edges = (0..3)
                .map(|i| point_segment_distance(&p, &tri[i], &tri[(i + 1) % 3]))
                .fold(f64::INFINITY, f64::min);
            Some(edges.min(t * len).min((1.0 - t) * len))
        })
        .fold(f64::INFINITY, f64::min)
}

fn unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    let v: Vector3<f64> = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
    v / v.norm().max(1e-3)
}

/// A random slightly bent quad, a camera 2-5 m away and a joint. Half of
/// the joints lie just beyond the quad as seen from the camera.
pub fn random_scene<R: Rng + ?Sized>(rng: &mut R) -> (Vector3<f64>, Vector3<f64>, TorsoPlane) {
    let (u, w0) = (unit_vector(rng), unit_vector(rng));
    let w = (w0 - u * u.dot(&w0)).normalize();
    let cam_dir = unit_vector(rng);
    let bend = unit_vector(rng);
    let half_w = rng.random_range(0.1..0.3);
    let half_h = rng.random_range(0.15..0.4);
    let corner = |a: f64, b: f64, rng: &mut R| u * a + w * b + bend * rng.random_range(-0.03..0.03);
    let quad = [
        corner(half_w, half_h, rng),
        corner(-half_w, half_h, rng),
        corner(-half_w, -half_h, rng),
        corner(half_w, -half_h, rng),
    ];
    let camera = cam_dir * rng.random_range(2.0..5.0);
    let joint = if rng.random::<bool>() {
        // beyond a point near the quad, seen from the camera
        let q = u * rng.random_range(-1.3..1.3) * half_w + w * rng.random_range(-1.3..1.3) * half_h;
        camera + (q - camera) * rng.random_range(1.02..1.5)
    } else {
        Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        )
    };
    (camera, joint, TorsoPlane::new(quad))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OracleReport {
    pub scenes: usize,
    pub excluded: usize,
    pub occluded: usize,
    pub disagreements: usize,
}

/// Compares [`occlusion_test`] with [`ray_march_occluded`] on seeded scenes.
pub fn occlusion_agreement(scenes: usize, seed: u64) -> Result<OracleReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = OracleReport {
        scenes,
        ..Default::default()
    };
    for _ in 0..scenes {
        let (camera, joint, torso) = random_scene(&mut rng);
        if boundary_distance(&camera, &joint, &torso) < BOUNDARY_BAND {
            report.excluded += 1;
            continue;
        }
        let fast = !occlusion_test(&camera, &joint, &torso)?.is_visible();
        let slow = ray_march_occluded(&camera, &joint, &torso);
        report.occluded += slow as usize;
        report.disagreements += (fast != slow) as usize;
    }
    Ok(report)
}

/// Small dimensions for finite-difference checks.
pub fn check_config(num_classes: usize) -> ModelConfig {
    ModelConfig {
        levels: 6,
        branch_dim: 6,
        heads: 2,
        encoder_dim: 5,
        joint_dim: 4,
        text_dim: 6,
        gcn_channels: 3,
        temporal_kernel: 2,
        temporal_stride: 2,
        temporal_channels: 3,
        segments: 3,
        classifier_hidden: 5,
        orientation_hidden: 4,
        num_classes,
    }
}

/// A view with random pixel coordinates and about 20% invisible joints.
pub fn random_view<R: Rng + ?Sized>(rng: &mut R, frames: usize, theta: i32) -> ProjectedView {
    let joints2d = (0..frames)
        .map(|_| std::array::from_fn(|_| [rng.random_range(400.0..600.0), rng.random_range(300.0..700.0)]))
        .collect();
    let visibility = (0..frames)
        .map(|_| std::array::from_fn(|_| u8::from(rng.random::<f64>() >= 0.2)))
        .collect();
    ProjectedView {
        label: "x".into(),
        sequence: None,
        view_index: 0,
        theta_deg: theta,
        joints2d,
        visibility,
    }
}

/// A seeded three-anchor batch over three classes: one in-batch negative
/// and one extra negative.
pub fn random_plan<R: Rng + ?Sized>(model: &OrientationAwareModel, rng: &mut R) -> Result<BatchPlan> {
    let cfg = model.config().clone();
    let item = |class: usize, rng: &mut R| -> Result<BatchItem> {
        let theta = ORIENTATION_BINS[rng.random_range(0..ORIENTATION_BINS.len())];
        let view = random_view(rng, 9, theta);
        Ok(BatchItem {
            input: model.prepare(&view)?,
            gamma: encode_degrees(theta as f64, cfg.levels)?,
            class,
        })
    };
    let anchors = vec![item(0, rng)?, item(1, rng)?, item(0, rng)?];
    let extra = item(2, rng)?;
    let text = |rng: &mut R| -> Vec<f64> {
        let v: Vec<f64> = (0..cfg.text_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect()
    };
    let texts = vec![text(rng), text(rng), text(rng)];
    Ok(BatchPlan {
        anchors,
        negatives: vec![Negative::Anchor(1), Negative::Extra(extra), Negative::Anchor(1)],
        texts,
    })
}

/// Finite-difference check of the full batch objective at one `lambda`.
pub fn loss_gradient_check(lambda: f64, seed: u64, samples: usize) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = OrientationAwareModel::new(check_config(3))?;
    let mut store = model.init_params(&mut rng);
    let plan = random_plan(&model, &mut rng)?;
    // a margin above every reachable distance keeps the negative hinge active
    let mu = 1.0;
    grad_check(
        |tape, s| Ok(batch_loss(&model, tape, s, &plan, lambda, mu)?.total),
        &mut store,
        1e-6,
        samples,
        &mut rng,
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelfTestReport {
    pub occlusion: OracleReport,
    pub gradients: Vec<(f64, GradCheckReport)>,
}

impl SelfTestReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.occlusion.disagreements == 0
            && self
                .gradients
                .iter()
                .all(|(_, r)| r.checked > 0 && r.max_relative_error < tolerance)
    }
}

pub fn run(seed: u64, scenes: usize, samples: usize) -> Result<SelfTestReport> {
    let occlusion = occlusion_agreement(scenes, seed)?;
    let gradients = [0.0, 0.5, 1.0]
        .iter()
        .map(|&l| Ok((l, loss_gradient_check(l, seed, samples)?)))
        .collect::<Result<_>>()?;
    Ok(SelfTestReport { occlusion, gradients })
}
