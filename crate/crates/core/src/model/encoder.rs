use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::skeleton::{LEFT_HIP, LEFT_SHOULDER, NUM_JOINTS, RIGHT_HIP, RIGHT_SHOULDER};
use crate::geometry::ProjectedView;
use crate::numerics::Tensor;

/// Per-joint input channels: centred `x`, `y`, their frame differences and
/// the visibility flag.
pub const INPUT_CHANNELS: usize = 5;

/// Frame differences are small next to positions; this brings them to a
/// comparable range.
const VELOCITY_GAIN: f64 = 10.0;

/// A view turned into normalized per-joint features.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderInput {
    pub frames: usize,
    /// `[(frames * 17), INPUT_CHANNELS]`, rows ordered `(frame, joint)`.
    pub features: Tensor,
    /// 1 for visible joints, 0 otherwise; one entry per feature row.
    pub joint_mask: Arc<Vec<f64>>,
    pub theta_deg: i32,
}

impl EncoderInput {
    pub fn frame_has_visible(&self, frame: usize) -> bool {
        self.joint_mask[frame * NUM_JOINTS..(frame + 1) * NUM_JOINTS]
            .iter()
            .any(|&w| w > 0.0)
    }
}

fn mid(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [(a[0] + b[0]) * 0.5, (a[1] + b[1]) * 0.5]
}

/// Centre and scale for the whole sequence: mean mid-hip and mean torso length
/// over the frames where those joints are visible, with coarser fallbacks.
fn normalization(view: &ProjectedView) -> Result<([f64; 2], f64)> {
    let mut hip_sum = [0.0; 2];
    let mut hip_n = 0usize;
    let mut torso_sum = 0.0;
    let mut torso_n = 0usize;
    let mut all_sum = [0.0; 2];
    let mut all_n = 0usize;
    for (f, pts) in view.joints2d.iter().enumerate() {
        let vis = |j: usize| view.visibility[f][j] != 0;
        for j in 0..NUM_JOINTS {
            if vis(j) {
                all_sum[0] += pts[j][0];
                all_sum[1] += pts[j][1];
                all_n += 1;
            }
        }
        if vis(LEFT_HIP) && vis(RIGHT_HIP) {
            let h = mid(pts[LEFT_HIP], pts[RIGHT_HIP]);
            hip_sum[0] += h[0];
            hip_sum[1] += h[1];
            hip_n += 1;
            if vis(LEFT_SHOULDER) && vis(RIGHT_SHOULDER) {
                let s = mid(pts[LEFT_SHOULDER], pts[RIGHT_SHOULDER]);
                torso_sum += (s[0] - h[0]).hypot(s[1] - h[1]);
                torso_n += 1;
            }
        }
    }
    if all_n == 0 {
        return Err(Error::DegenerateInput("every joint is invisible".into()));
    }
    let center = if hip_n > 0 {
        [hip_sum[0] / hip_n as f64, hip_sum[1] / hip_n as f64]
    } else {
        [all_sum[0] / all_n as f64, all_sum[1] / all_n as f64]
    };
    let mut scale = if torso_n > 0 { torso_sum / torso_n as f64 } else { 0.0 };
    if !(scale > 1e-9) {
        let mut ss = 0.0;
        for (f, pts) in view.joints2d.iter().enumerate() {
            for j in 0..NUM_JOINTS {
                if view.visibility[f][j] != 0 {
                    ss += (pts[j][0] - center[0]).powi(2) + (pts[j][1] - center[1]).powi(2);
                }
            }
        }
        scale = (ss / all_n as f64).sqrt();
    }
    if !(scale > 1e-9) {
        scale = 1.0;
    }
    Ok((center, scale))
}

/// Centres on the mean mid-hip, scales by torso length and zero-fills
/// invisible joints. Sequences shorter than `min_frames` repeat their last
/// frame.
pub fn prepare_input(view: &ProjectedView, min_frames: usize) -> Result<EncoderInput> {
    if view.frames() == 0 {
        return Err(Error::InvalidArgument("view has no frames".into()));
    }
    if view.visibility.len() != view.frames() {
        return Err(Error::InvalidArgument("visibility length differs from frames".into()));
    }
    let (center, scale) = normalization(view)?;
    let frames = view.frames().max(min_frames);
    let mut data = vec![0.0; frames * NUM_JOINTS * INPUT_CHANNELS];
    let mut mask = vec![0.0; frames * NUM_JOINTS];
    let pos = |f: usize, j: usize| -> [f64; 2] {
        let p = view.joints2d[f][j];
        [(p[0] - center[0]) / scale, (p[1] - center[1]) / scale]
    };
    for f in 0..frames {
        let src = f.min(view.frames() - 1);
        for j in 0..NUM_JOINTS {
            if view.visibility[src][j] == 0 {
                continue;
            }
            let row = (f * NUM_JOINTS + j) * INPUT_CHANNELS;
            let p = pos(src, j);
            data[row] = p[0];
            data[row + 1] = p[1];
            // padded frames repeat the last one and so have zero velocity
            if f == src && src > 0 && view.visibility[src - 1][j] != 0 {
                let q = pos(src - 1, j);
                data[row + 2] = (p[0] - q[0]) * VELOCITY_GAIN;
                data[row + 3] = (p[1] - q[1]) * VELOCITY_GAIN;
            }
            data[row + 4] = 1.0;
            mask[f * NUM_JOINTS + j] = 1.0;
        }
    }
    Ok(EncoderInput {
        frames,
        features: Tensor::matrix(frames * NUM_JOINTS, INPUT_CHANNELS, data)?,
        joint_mask: Arc::new(mask),
        theta_deg: view.theta_deg,
    })
}

/// Window count of a strided temporal convolution.
pub fn window_count(frames: usize, kernel: usize, stride: usize) -> usize {
    (frames - kernel) / stride + 1
}

/// Splits `windows` into `segments` contiguous, non-empty ranges. When there
/// are fewer windows than segments some windows are shared.
pub fn segment_ranges(windows: usize, segments: usize) -> Vec<(usize, usize)> {
    (0..segments)
        .map(|s| {
            let lo = (s * windows / segments).min(windows - 1);
            let hi = ((s + 1) * windows / segments).max(lo + 1);
            (lo, hi)
        })
        .collect()
}

/// 1 for segments whose frames contain at least one visible joint.
pub fn segment_mask(
    input: &EncoderInput,
    ranges: &[(usize, usize)],
    kernel: usize,
    stride: usize,
) -> Vec<f64> {
    ranges
        .iter()
        .map(|&(lo, hi)| {
            let first = lo * stride;
            let last = (hi - 1) * stride + kernel;
            let any = (first..last.min(input.frames)).any(|f| input.frame_has_visible(f));
            if any {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}
