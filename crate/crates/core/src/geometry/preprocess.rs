use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::skeleton::NUM_JOINTS;
use super::{MotionSequence3D, ProjectedView};
use crate::error::{invalid, Result};

/// Gaussian/uniform mixture for 2D keypoint corruption.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseParams {
    /// Probability that a visible joint is replaced by a uniform outlier.
    pub p_outlier: f64,
    /// Standard deviation of the inlier noise, in pixels.
    pub sigma: f64,
    /// Outliers are drawn from the joint bounding box grown by this fraction
    /// of its size on every side.
    pub bbox_margin: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            p_outlier: 0.05,
            sigma: 2.0,
            bbox_margin: 0.1,
        }
    }
}

impl NoiseParams {
    pub const NONE: NoiseParams = NoiseParams {
        p_outlier: 0.0,
        sigma: 0.0,
        bbox_margin: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_outlier) {
            return Err(invalid(format!("p_outlier {} outside [0, 1]", self.p_outlier)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(invalid(format!("sigma {} must be >= 0", self.sigma)));
        }
        if !(self.bbox_margin >= 0.0 && self.bbox_margin.is_finite()) {
            return Err(invalid(format!("bbox_margin {} must be >= 0", self.bbox_margin)));
        }
        Ok(())
    }
}

/// One index per equal-width segment of `[0, frames)`, drawn uniformly inside it.
pub fn sample_indices<R: Rng + ?Sized>(frames: usize, n: usize, rng: &mut R) -> Result<Vec<usize>> {
    if frames == 0 {
        return Err(invalid("cannot sample frames from an empty motion"));
    }
    if n == 0 {
        return Err(invalid("sample count must be at least 1"));
    }
    let width = frames as f64 / n as f64;
    Ok((0..n)
        .map(|k| {
            let lo = k as f64 * width;
            let x = lo + rng.random::<f64>() * width;
            // rounding can push x onto the next segment's start
            let hi_index = (((k + 1) as f64 * width).ceil() as usize).saturating_sub(1);
            (x.floor() as usize).min(hi_index).min(frames - 1).max(lo.floor() as usize)
        })
        .collect())
}

/// Random uniform temporal sampling to exactly `n` frames.
pub fn uniform_sample_frames<R: Rng + ?Sized>(
    motion: &MotionSequence3D,
    n: usize,
    rng: &mut R,
) -> Result<MotionSequence3D> {
    let idx = sample_indices(motion.frames(), n, rng)?;
    Ok(MotionSequence3D {
        label: motion.label.clone(),
        fps: motion.fps * n as f64 / motion.frames() as f64,
        subject: motion.subject.clone(),
        joints: idx.iter().map(|&i| motion.joints[i]).collect(),
    })
}

/// Corrupts visible 2D joints with Gaussian noise or, with probability
/// `p_outlier`, a uniform draw over the grown bounding box.
pub fn corrupt_2d<R: Rng + ?Sized>(
    view: &ProjectedView,
    params: &NoiseParams,
    rng: &mut R,
) -> Result<ProjectedView> {
    params.validate()?;
    let mut out = view.clone();
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for (pts, vis) in view.joints2d.iter().zip(&view.visibility) {
        for j in 0..NUM_JOINTS {
            if vis[j] != 0 {
                for a in 0..2 {
                    lo[a] = lo[a].min(pts[j][a]);
                    hi[a] = hi[a].max(pts[j][a]);
                }
            }
        }
    }
    if lo[0] > hi[0] {
        return Ok(out);
    }
    for a in 0..2 {
        let grow = (hi[a] - lo[a]) * params.bbox_margin;
        lo[a] -= grow;
        hi[a] += grow;
    }
    let normal = Normal::new(0.0, params.sigma).map_err(|e| invalid(e.to_string()))?;
    for (pts, vis) in out.joints2d.iter_mut().zip(&view.visibility) {
        for j in 0..NUM_JOINTS {
            if vis[j] == 0 {
                continue;
            }
            if params.p_outlier > 0.0 && rng.random::<f64>() < params.p_outlier {
                for a in 0..2 {
                    pts[j][a] = lo[a] + rng.random::<f64>() * (hi[a] - lo[a]);
                }
            } else if params.sigma > 0.0 {
                for a in 0..2 {
                    pts[j][a] += normal.sample(rng);
                }
            }
        }
    }
    Ok(out)
}
