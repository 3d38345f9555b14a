//! Dense tensors, reverse-mode differentiation, Adam and gradient checking.
//!
//! Training runs in `f64` so gradients can be verified against central
//! differences; checkpoints store `f32` payloads.

mod checkpoint;
mod gradcheck;
mod optim;
mod store;
mod tape;
mod tensor;

pub use checkpoint::{read_checkpoint, write_checkpoint, MAGIC};
pub use gradcheck::{grad_check, relative_error, GradCheckReport, KINK_WINDOW, REL_FLOOR, RESOLUTION};
pub use optim::{adam_step, AdamConfig, OptimizerState};
pub use store::{ParamId, ParamStore};
pub use tape::{BlockOperator, Tape, Var, MIN_NORM};
pub use tensor::Tensor;

use rand::Rng;
use rand_distr::{Distribution, Uniform};

/// Uniform Glorot initialization for a `[fan_in, fan_out]` weight.
pub fn glorot<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(rng, &[fan_in, fan_out], limit)
}

/// Values drawn from `U(-limit, limit)`.
pub fn uniform<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], limit: f64) -> Tensor {
    let n = shape.iter().product();
    let data = if limit > 0.0 {
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
        (0..n).map(|_| dist.sample(rng)).collect()
    } else {
        vec![0.0; n]
    };
    Tensor::new(shape.to_vec(), data).expect("consistent shape")
}
