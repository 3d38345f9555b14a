use super::{ParamStore, Tensor};
use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Zero-based epoch index from which the decayed rate applies.
    pub decay_epoch: usize,
    pub decay_factor: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            decay_epoch: 30,
            decay_factor: 0.1,
        }
    }
}

/// Moment accumulators and schedule for bias-corrected Adam.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    config: AdamConfig,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: u64,
    epoch: usize,
    lr: f64,
}

impl OptimizerState {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Result<Self> {
        if !(config.lr > 0.0) || !(0.0..1.0).contains(&config.beta1) || !(0.0..1.0).contains(&config.beta2)
        {
            return Err(invalid("adam: lr must be positive and betas in [0, 1)"));
        }
        let zeros: Vec<Tensor> = store
            .ids()
            .map(|id| Tensor::zeros(store.value(id).shape()))
            .collect();
        Ok(Self {
            config,
            first: zeros.clone(),
            second: zeros,
            step: 0,
            epoch: 0,
            lr: config.lr,
        })
    }

    /// Moves the schedule to `epoch` (zero-based) and applies the step decay.
    pub fn set_epoch(&mut self, epoch: usize) {
        self.epoch = epoch;
        self.lr = if epoch >= self.config.decay_epoch {
            self.config.lr * self.config.decay_factor
        } else {
            self.config.lr
        };
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }
}

/// One bias-corrected Adam update using the gradients held by `store`.
pub fn adam_step(store: &mut ParamStore, state: &mut OptimizerState) -> Result<()> {
    if store.is_empty() || !store.grads_ready() {
        return Err(Error::InvalidState(
            "adam step without gradients; run backward first".into(),
        ));
    }
    if state.first.len() != store.len() {
        return Err(Error::InvalidState(
            "optimizer state does not match the parameter store".into(),
        ));
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let bias1 = 1.0 - c.beta1.powi(t);
    let bias2 = 1.0 - c.beta2.powi(t);
    let lr = state.lr;
    let (values, grads) = store.values_and_grads_mut();
    for (((value, grad), m), v) in values
        .iter_mut()
        .zip(grads)
        .zip(state.first.iter_mut())
        .zip(state.second.iter_mut())
    {
        for (((p, g), m), v) in value
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *m = c.beta1 * *m + (1.0 - c.beta1) * g;
            *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *p -= lr * m_hat / (v_hat.sqrt() + c.epsilon);
        }
    }
    store.set_grads_ready(false);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(value: f64, grad: f64) -> ParamStore {
        let mut store = ParamStore::new();
        let id = store.insert("w", Tensor::scalar(value)).unwrap();
        store.grads_mut()[id.index()].data_mut()[0] = grad;
        store.set_grads_ready(true);
        store
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut store = one_param(1.0, 1.0);
        let mut state = OptimizerState::new(&store, AdamConfig::default()).unwrap();
        adam_step(&mut store, &mut state).unwrap();
        let moved = 1.0 - store.get("w").unwrap().data()[0];
        assert!((moved - 1e-3).abs() < 1e-8, "moved {moved}");
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut store = one_param(0.25, 0.0);
        let mut state = OptimizerState::new(&store, AdamConfig::default()).unwrap();
        adam_step(&mut store, &mut state).unwrap();
        assert_eq!(store.get("w").unwrap().data()[0], 0.25);
    }

    #[test]
    fn decay_shrinks_the_step_tenfold() {
        let step_at = |epoch: usize| {
            let mut store = one_param(0.0, 1.0);
            let mut state = OptimizerState::new(&store, AdamConfig::default()).unwrap();
            state.set_epoch(epoch);
            adam_step(&mut store, &mut state).unwrap();
            -store.get("w").unwrap().data()[0]
        };
        let before = step_at(29);
        let after = step_at(30);
        assert!((after / before - 0.1).abs() < 1e-6, "{before} -> {after}");
    }

    #[test]
    fn step_without_gradients_is_rejected() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::scalar(1.0)).unwrap();
        let mut state = OptimizerState::new(&store, AdamConfig::default()).unwrap();
        assert!(matches!(
            adam_step(&mut store, &mut state),
            Err(Error::InvalidState(_))
        ));
        let mut empty = ParamStore::new();
        let mut state = OptimizerState::new(&empty, AdamConfig::default()).unwrap();
        assert!(adam_step(&mut empty, &mut state).is_err());
    }
}
