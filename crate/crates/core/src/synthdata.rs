//! Procedural labeled 3D motions on a COCO-17 rest skeleton.
//!
//! Bodies are built facing `-y` with `z` up and the left side at `+x`, then
//! scaled and turned to the requested yaw about the vertical axis.

use std::f64::consts::TAU;
use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::geometry::skeleton::*;
use crate::geometry::{io, Frame3, MotionSequence3D};

type V3 = Vector3<f64>;

const UPPER_ARM: f64 = 0.28;
const FOREARM: f64 = 0.26;
const THIGH: f64 = 0.43;
const SHIN: f64 = 0.44;

/// Elevation of the upper arm while waving, from hanging straight down.
const WAVE_UPPER_ARM_DEG: f64 = 100.0;

pub const GENERATORS: [&str; 6] = ["wave", "raise_arm", "squat", "jumping_jack", "point", "march"];

#[derive(Clone, Debug, PartialEq)]
pub struct ActionSpec {
    pub name: String,
    /// One of [`GENERATORS`].
    pub generator: String,
    /// Radians for angular generators, meters of hip drop for `squat`.
    pub amplitude: (f64, f64),
    /// Hz
    pub frequency: (f64, f64),
    /// Seconds
    pub duration: (f64, f64),
    pub fps: f64,
}

impl ActionSpec {
    /// Default ranges for a generator, named after it.
    pub fn standard(generator: &str) -> Result<Self> {
        let (amplitude, frequency) = match generator {
            "wave" => ((0.35, 0.70), (1.5, 2.5)),
            "raise_arm" => ((2.40, 2.85), (0.4, 0.7)),
            "squat" => ((0.25, 0.40), (0.4, 0.7)),
            "jumping_jack" => ((2.30, 2.80), (0.8, 1.2)),
            "point" => ((1.35, 1.65), (0.3, 0.5)),
            "march" => ((0.90, 1.30), (0.8, 1.2)),
            other => return Err(invalid(format!("unknown generator `{other}`"))),
        };
        Ok(Self {
            name: generator.to_string(),
            generator: generator.to_string(),
            amplitude,
            frequency,
            duration: (3.0, 5.0),
            fps: 30.0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !GENERATORS.contains(&self.generator.as_str()) {
            return Err(invalid(format!("unknown generator `{}`", self.generator)));
        }
        if self.name.is_empty() {
            return Err(invalid("action name must not be empty"));
        }
        for (what, (lo, hi)) in [
            ("amplitude", self.amplitude),
            ("frequency", self.frequency),
            ("duration", self.duration),
        ] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(invalid(format!("{what} range ({lo}, {hi}) is empty or not positive")));
            }
        }
        if !(self.fps >= 10.0 && self.fps.is_finite()) {
            return Err(invalid(format!("fps {} below 10", self.fps)));
        }
        Ok(())
    }
}

/// The six generators with their default ranges.
pub fn standard_specs() -> Vec<ActionSpec> {
    GENERATORS
        .iter()
        .map(|g| ActionSpec::standard(g).expect("known generator"))
        .collect()
}

fn rest_pose() -> [V3; NUM_JOINTS] {
    let mut p = [V3::zeros(); NUM_JOINTS];
    p[NOSE] = V3::new(0.0, -0.08, 1.62);
    p[LEFT_EYE] = V3::new(0.03, -0.06, 1.66);
    p[RIGHT_EYE] = V3::new(-0.03, -0.06, 1.66);
    p[LEFT_EAR] = V3::new(0.07, 0.0, 1.63);
    p[RIGHT_EAR] = V3::new(-0.07, 0.0, 1.63);
    p[LEFT_SHOULDER] = V3::new(0.18, 0.0, 1.42);
    p[RIGHT_SHOULDER] = V3::new(-0.18, 0.0, 1.42);
    p[LEFT_HIP] = V3::new(0.10, 0.0, 0.95);
    p[RIGHT_HIP] = V3::new(-0.10, 0.0, 0.95);
    set_arm(&mut p, Side::Left, down(), down());
    set_arm(&mut p, Side::Right, down(), down());
    set_leg(&mut p, Side::Left, down(), down());
    set_leg(&mut p, Side::Right, down(), down());
    p
}

fn down() -> V3 {
    V3::new(0.0, 0.0, -1.0)
}
fn up() -> V3 {
    V3::new(0.0, 0.0, 1.0)
}
fn forward() -> V3 {
    V3::new(0.0, -1.0, 0.0)
}
fn outward(side: Side) -> V3 {
    match side {
        Side::Left => V3::new(1.0, 0.0, 0.0),
        Side::Right => V3::new(-1.0, 0.0, 0.0),
    }
}

/// Rotates the unit vector `from` toward the orthogonal unit vector `to`.
fn swing(from: V3, to: V3, angle: f64) -> V3 {
    let (s, c) = angle.sin_cos();
    from * c + to * s
}

#[derive(Clone, Copy)]
enum Side {
    Left,
    Right,
}

fn set_arm(p: &mut [V3; NUM_JOINTS], side: Side, upper: V3, fore: V3) {
    let (s, e, w) = match side {
        Side::Left => (LEFT_SHOULDER, LEFT_ELBOW, LEFT_WRIST),
        Side::Right => (RIGHT_SHOULDER, RIGHT_ELBOW, RIGHT_WRIST),
    };
    p[e] = p[s] + upper * UPPER_ARM;
    p[w] = p[e] + fore * FOREARM;
}

fn set_leg(p: &mut [V3; NUM_JOINTS], side: Side, thigh: V3, shin: V3) {
    let (h, k, a) = match side {
        Side::Left => (LEFT_HIP, LEFT_KNEE, LEFT_ANKLE),
        Side::Right => (RIGHT_HIP, RIGHT_KNEE, RIGHT_ANKLE),
    };
    p[k] = p[h] + thigh * THIGH;
    p[a] = p[k] + shin * SHIN;
}

/// Places the knee between a hip and a fixed ankle, bending forward.
fn solve_knee(p: &mut [V3; NUM_JOINTS], side: Side, ankle: V3) {
    let (h, k, a) = match side {
        Side::Left => (LEFT_HIP, LEFT_KNEE, LEFT_ANKLE),
        Side::Right => (RIGHT_HIP, RIGHT_KNEE, RIGHT_ANKLE),
    };
    let hip = p[h];
    let d = (ankle - hip).norm().min(THIGH + SHIN);
    let u = (ankle - hip).normalize();
    let v = (forward() - u * forward().dot(&u)).normalize();
    let along = (THIGH * THIGH - SHIN * SHIN + d * d) / (2.0 * d);
    let across = (THIGH * THIGH - along * along).max(0.0).sqrt();
    p[k] = hip + u * along + v * across;
    p[a] = ankle;
}

/// Joints that move with the pelvis.
const UPPER_BODY: [usize; 13] = [
    NOSE,
    LEFT_EYE,
    RIGHT_EYE,
    LEFT_EAR,
    RIGHT_EAR,
    LEFT_SHOULDER,
    RIGHT_SHOULDER,
    LEFT_ELBOW,
    RIGHT_ELBOW,
    LEFT_WRIST,
    RIGHT_WRIST,
    LEFT_HIP,
    RIGHT_HIP,
];

/// Raised-cosine cycle in `[0, 1]`, zero at phase 0.
fn cycle(phase: f64) -> f64 {
    0.5 * (1.0 - phase.cos())
}

fn pose(generator: &str, amplitude: f64, phase: f64) -> [V3; NUM_JOINTS] {
    let mut p = rest_pose();
    match generator {
        "wave" => {
            let upper = swing(down(), outward(Side::Right), WAVE_UPPER_ARM_DEG.to_radians());
            let fore = swing(up(), outward(Side::Right), amplitude * phase.sin());
            set_arm(&mut p, Side::Right, upper, fore);
        }
        "raise_arm" => {
            let arm = swing(down(), forward(), amplitude * cycle(phase));
            set_arm(&mut p, Side::Right, arm, arm);
        }
        "point" => {
            let target = (forward() + outward(Side::Right) * 0.35).normalize();
            let reach = (1.6 * cycle(phase)).min(1.0);
            let arm = swing(down(), target, amplitude * reach);
            set_arm(&mut p, Side::Right, arm, arm);
        }
        "squat" => {
            let drop = amplitude * cycle(phase);
            let ankles = [p[LEFT_ANKLE], p[RIGHT_ANKLE]];
            for j in UPPER_BODY {
                p[j].z -= drop;
            }
            solve_knee(&mut p, Side::Left, ankles[0]);
            solve_knee(&mut p, Side::Right, ankles[1]);
        }
        "jumping_jack" => {
            let c = cycle(phase);
            for side in [Side::Left, Side::Right] {
                let arm = swing(down(), outward(side), amplitude * c);
                set_arm(&mut p, side, arm, arm);
                let leg = swing(down(), outward(side), 0.15 * amplitude * c);
                set_leg(&mut p, side, leg, leg);
            }
            let hop = 0.04 * cycle(2.0 * phase);
            p.iter_mut().for_each(|j| j.z += hop);
        }
        "march" => {
            let s = phase.sin();
            set_leg(&mut p, Side::Left, swing(down(), forward(), amplitude * s.max(0.0)), down());
            set_leg(&mut p, Side::Right, swing(down(), forward(), amplitude * (-s).max(0.0)), down());
            let left = swing(down(), forward(), -0.35 * s);
            let right = swing(down(), forward(), 0.35 * s);
            set_arm(&mut p, Side::Left, left, left);
            set_arm(&mut p, Side::Right, right, right);
        }
        _ => unreachable!("validated generator"),
    }
    p
}

/// One motion with sampled amplitude, frequency, duration, phase and body
/// scale, turned to face azimuth `yaw_deg`.
pub fn gen_action<R: Rng + ?Sized>(spec: &ActionSpec, yaw_deg: f64, rng: &mut R) -> Result<MotionSequence3D> {
    spec.validate()?;
    if !yaw_deg.is_finite() {
        return Err(invalid("yaw must be finite"));
    }
    let draw = |rng: &mut R, (lo, hi): (f64, f64)| lo + (hi - lo) * rng.random::<f64>();
    let amplitude = draw(rng, spec.amplitude);
    let frequency = draw(rng, spec.frequency);
    let duration = draw(rng, spec.duration);
    let phase0 = rng.random::<f64>() * TAU;
    let scale = draw(rng, (0.92, 1.08));
    let frames = ((duration * spec.fps).round() as usize).max(2);
    let joints: Vec<Frame3> = (0..frames)
        .map(|i| {
            let phase = TAU * frequency * i as f64 / spec.fps + phase0;
            pose(&spec.generator, amplitude, phase).map(|v| {
                let v = v * scale;
                [v.x, v.y, v.z]
            })
        })
        .collect();
    let motion = MotionSequence3D {
        label: spec.name.clone(),
        fps: spec.fps,
        subject: None,
        joints,
    };
    Ok(motion.rotated_about_vertical(yaw_deg))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum YawDistribution {
    Fixed(f64),
    /// Degrees, `[lo, hi)`.
    Uniform { lo: f64, hi: f64 },
}

impl Default for YawDistribution {
    fn default() -> Self {
        YawDistribution::Uniform { lo: -180.0, hi: 180.0 }
    }
}

impl YawDistribution {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            YawDistribution::Fixed(v) => v,
            YawDistribution::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset {
    pub motions: Vec<MotionSequence3D>,
    pub classes: Vec<String>,
    pub counts: Vec<usize>,
    pub seed: u64,
}

impl SyntheticDataset {
    pub fn write(&self, path: &Path) -> Result<()> {
        io::write_motions(path, &self.motions)
    }
}

/// `per_class` motions per spec. Motion `k` draws from stream `k` of the
/// root seed, so every motion is reproducible on its own.
pub fn gen_dataset(
    specs: &[ActionSpec],
    per_class: usize,
    yaw: YawDistribution,
    root_seed: u64,
) -> Result<SyntheticDataset> {
    if per_class == 0 {
        return Err(invalid("per_class must be at least 1"));
    }
    if specs.is_empty() {
        return Err(invalid("at least one action spec is required"));
    }
    let mut classes: Vec<String> = Vec::new();
    for s in specs {
        s.validate()?;
        if classes.contains(&s.name) {
            return Err(invalid(format!("action `{}` listed twice", s.name)));
        }
        classes.push(s.name.clone());
    }
    let mut motions = Vec::with_capacity(specs.len() * per_class);
    for (c, spec) in specs.iter().enumerate() {
        for i in 0..per_class {
            let mut rng = ChaCha8Rng::seed_from_u64(root_seed);
            rng.set_stream((c * per_class + i) as u64);
            let y = yaw.sample(&mut rng);
            motions.push(gen_action(spec, y, &mut rng)?);
        }
    }
    Ok(SyntheticDataset {
        motions,
        counts: vec![per_class; specs.len()],
        classes,
        seed: root_seed,
    })
}

/// Yaw-invariant trajectory statistics in torso lengths: per joint, mean and
/// spread of the height and of the horizontal distance from the mid-hip.
pub fn trajectory_features(m: &MotionSequence3D) -> Vec<f64> {
    let n = m.frames() as f64;
    let f0 = &m.joints[0];
    let mid = |a: usize, b: usize| V3::from(f0[a]).lerp(&V3::from(f0[b]), 0.5);
    let torso = (mid(LEFT_SHOULDER, RIGHT_SHOULDER) - mid(LEFT_HIP, RIGHT_HIP)).norm();
    let unit = if torso > 1e-9 { 1.0 / torso } else { 1.0 };
    let mut out = Vec::with_capacity(4 * NUM_JOINTS);
    for j in 0..NUM_JOINTS {
        let mut stats = [(0.0, 0.0); 2];
        for f in &m.joints {
            let cx = 0.5 * (f[LEFT_HIP][0] + f[RIGHT_HIP][0]);
            let cy = 0.5 * (f[LEFT_HIP][1] + f[RIGHT_HIP][1]);
            let vals = [f[j][2] * unit, (f[j][0] - cx).hypot(f[j][1] - cy) * unit];
            for (s, v) in stats.iter_mut().zip(vals) {
                s.0 += v;
                s.1 += v * v;
            }
        }
        for (sum, sq) in stats {
            let mean = sum / n;
            out.push(mean);
            out.push((sq / n - mean * mean).max(0.0).sqrt());
        }
    }
    out
}

/// Nearest-centroid accuracy on [`trajectory_features`], with centroids from
/// even-indexed motions of each class and scoring on the odd-indexed ones.
pub fn separability_check(data: &SyntheticDataset) -> f64 {
    let feats: Vec<Vec<f64>> = data.motions.iter().map(trajectory_features).collect();
    let labels: Vec<usize> = data
        .motions
        .iter()
        .map(|m| data.classes.iter().position(|c| *c == m.label).expect("known label"))
        .collect();
    let dim = feats[0].len();
    let mut scale = vec![0.0; dim];
    let mean: Vec<f64> = (0..dim)
        .map(|d| feats.iter().map(|f| f[d]).sum::<f64>() / feats.len() as f64)
        .collect();
    for d in 0..dim {
        let var = feats.iter().map(|f| (f[d] - mean[d]).powi(2)).sum::<f64>() / feats.len() as f64;
        scale[d] = if var > 1e-18 { 1.0 / var.sqrt() } else { 0.0 };
    }
    let k = data.classes.len();
    let mut centroids = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    let mut seen = vec![0usize; k];
    let mut test = Vec::new();
    for (i, f) in feats.iter().enumerate() {
        let c = labels[i];
        if seen[c] % 2 == 0 {
            for d in 0..dim {
                centroids[c][d] += f[d] * scale[d];
            }
            counts[c] += 1;
        } else {
            test.push(i);
        }
        seen[c] += 1;
    }
    for (c, n) in centroids.iter_mut().zip(&counts) {
        c.iter_mut().for_each(|v| *v /= (*n).max(1) as f64);
    }
    let correct = test
        .iter()
        .filter(|&&i| {
            let dist = |c: &Vec<f64>| -> f64 {
                (0..dim).map(|d| (feats[i][d] * scale[d] - c[d]).powi(2)).sum()
            };
            let best = (0..k)
                .min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b])))
                .expect("at least one class");
            best == labels[i]
        })
        .count();
    correct as f64 / test.len().max(1) as f64
}

/// Angle between `v` and the vertical, signed by the `x` component.
#[cfg(test)]
fn signed_from_vertical(v: V3) -> f64 {
    v.x.atan2(v.z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::reference_yaw;

    #[test]
    fn rest_pose_is_upright_and_faces_front() {
        let p = rest_pose();
        assert!((p[LEFT_ANKLE].z - 0.08).abs() < 1e-12);
        let m = MotionSequence3D {
            label: "r".into(),
            fps: 30.0,
            subject: None,
            joints: vec![p.map(|v| [v.x, v.y, v.z]); 2],
        };
        assert!(reference_yaw(&m).unwrap().abs() < 1e-12);
    }

    #[test]
    fn wave_peak_matches_amplitude() {
        let mut spec = ActionSpec::standard("wave").unwrap();
        spec.amplitude = (0.5, 0.5);
        spec.frequency = (1.0, 1.0);
        spec.duration = (1.0, 1.0);
        spec.fps = 400.0;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = gen_action(&spec, 0.0, &mut rng).unwrap();
        let peak = m
            .joints
            .iter()
            .map(|f| {
                let fore = V3::from(f[RIGHT_WRIST]) - V3::from(f[RIGHT_ELBOW]);
                signed_from_vertical(fore).abs()
            })
            .fold(0.0, f64::max);
        assert!((peak - 0.5).abs() <= 0.005, "peak {peak}");
    }

    #[test]
    fn same_seed_same_motion() {
        for spec in standard_specs() {
            let a = gen_action(&spec, 33.0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
            let b = gen_action(&spec, 33.0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn yaw_is_a_rotation() {
        for spec in standard_specs() {
            let a = gen_action(&spec, 0.0, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
            let b = gen_action(&spec, 90.0, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
            let r = a.rotated_about_vertical(90.0);
            let worst = r
                .joints
                .iter()
                .zip(&b.joints)
                .flat_map(|(x, y)| x.iter().zip(y.iter()))
                .map(|(p, q)| (V3::from(*p) - V3::from(*q)).norm())
                .fold(0.0, f64::max);
            assert!(worst < 1e-9, "{}: {worst}", spec.name);
            assert!((reference_yaw(&b).unwrap() - 90.0).abs() < 1e-9);
        }
    }

    #[test]
    fn unknown_generator_and_bad_counts() {
        let mut spec = ActionSpec::standard("wave").unwrap();
        spec.generator = "moonwalk".into();
        assert!(gen_action(&spec, 0.0, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
        assert!(ActionSpec::standard("moonwalk").is_err());
        assert!(gen_dataset(&standard_specs(), 0, YawDistribution::default(), 1).is_err());
    }

    #[test]
    fn dataset_counts_and_bytes() {
        let a = gen_dataset(&standard_specs(), 5, YawDistribution::default(), 11).unwrap();
        assert_eq!(a.motions.len(), 30);
        assert_eq!(a.classes.len(), 6);
        for c in &a.classes {
            assert_eq!(a.motions.iter().filter(|m| &m.label == c).count(), 5);
        }
        let dir = tempfile::tempdir().unwrap();
        let (p, q) = (dir.path().join("a"), dir.path().join("b"));
        a.write(&p).unwrap();
        gen_dataset(&standard_specs(), 5, YawDistribution::default(), 11)
            .unwrap()
            .write(&q)
            .unwrap();
        assert_eq!(std::fs::read(p).unwrap(), std::fs::read(q).unwrap());
    }

    #[test]
    fn generators_are_separable() {
        let data = gen_dataset(&standard_specs(), 50, YawDistribution::default(), 2024).unwrap();
        let acc = separability_check(&data);
        assert!(acc >= 0.95, "nearest-centroid accuracy {acc}");
    }

    #[test]
    fn squat_keeps_feet_planted() {
        let spec = ActionSpec::standard("squat").unwrap();
        let m = gen_action(&spec, 0.0, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let z0 = m.joints[0][LEFT_ANKLE][2];
        assert!(m.joints.iter().all(|f| (f[LEFT_ANKLE][2] - z0).abs() < 1e-12));
        let lowest = m.joints.iter().map(|f| f[LEFT_HIP][2]).fold(f64::INFINITY, f64::min);
        assert!(lowest < m.joints.iter().map(|f| f[LEFT_HIP][2]).fold(0.0, f64::max) - 0.1);
    }
}
