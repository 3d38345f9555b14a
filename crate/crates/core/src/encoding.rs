//! Multi-frequency sinusoidal encoding of body orientation.

use std::f64::consts::PI;

use crate::error::{invalid, Result};

/// Default number of frequency levels.
pub const DEFAULT_LEVELS: usize = 192;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrientationAngle {
    /// Radians in `(-pi, pi]`.
    pub theta: f64,
    /// `theta / pi`, in `(-1, 1]`.
    pub theta_hat: f64,
    /// `(sin theta, cos theta)`
    pub continuous: (f64, f64),
}

impl OrientationAngle {
    /// Builds an angle directly from a normalized value, without wrapping.
    pub fn from_normalized(theta_hat: f64) -> Self {
        let theta = theta_hat * PI;
        Self {
            theta,
            theta_hat,
            continuous: (theta.sin(), theta.cos()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OrientationEncoding {
    /// `[sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^(L-1) pi x), cos(2^(L-1) pi x)]`
    pub gamma: Vec<f64>,
    pub levels: usize,
}

/// Wraps to `(-180, 180]` degrees and converts to radians.
pub fn normalize_orientation(theta_deg: f64) -> Result<OrientationAngle> {
    if !theta_deg.is_finite() {
        return Err(invalid(format!("orientation {theta_deg} is not finite")));
    }
    let mut d = theta_deg.rem_euclid(360.0);
    if d > 180.0 {
        d -= 360.0;
    }
    let theta = d.to_radians();
    Ok(OrientationAngle {
        theta,
        theta_hat: d / 180.0,
        continuous: (theta.sin(), theta.cos()),
    })
}

/// Sinusoidal encoding of the normalized angle at `levels` octaves.
pub fn positional_encode(angle: &OrientationAngle, levels: usize) -> Result<OrientationEncoding> {
    if levels == 0 {
        return Err(invalid("positional encoding needs at least one level"));
    }
    let x = angle.theta_hat;
    let mut gamma = Vec::with_capacity(2 * levels);
    let mut scale = 1.0f64;
    for _ in 0..levels {
        // 2^k * x is exact, so reducing in half-turns keeps the phase exact
        // even where 2^k * pi * x would have lost every bit of x.
        let half_turns = (scale * x).rem_euclid(2.0);
        let (s, c) = (half_turns * PI).sin_cos();
        gamma.push(s);
        gamma.push(c);
        scale *= 2.0;
    }
    Ok(OrientationEncoding { gamma, levels })
}

pub fn encode_degrees(theta_deg: f64, levels: usize) -> Result<OrientationEncoding> {
    positional_encode(&normalize_orientation(theta_deg)?, levels)
}
