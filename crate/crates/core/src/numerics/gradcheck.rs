use rand::Rng;

use super::{ParamStore, Tape, Var};
use crate::error::{invalid, Error, Result};

/// Parameters closer than this to an activation kink are not sampled.
pub const KINK_WINDOW: f64 = 1e-4;

/// Floor of the relative-error denominator.
pub const REL_FLOOR: f64 = 1e-8;

/// A sample is judged only when the rounding error of its difference
/// quotient is below this fraction of the gradient magnitude.
pub const RESOLUTION: f64 = 1e-5;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
    pub skipped_near_kink: usize,
    /// Samples whose gradient is too small for the difference quotient to
    /// resolve at [`RESOLUTION`].
    pub skipped_unresolved: usize,
}

/// `|a - b| / max(|a|, |b|, 1e-8)`
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Compares reverse-mode gradients against central differences.
///
/// `loss_fn` rebuilds the forward pass on a fresh tape from the current store
/// values. Sampled scalars whose `±KINK_WINDOW` perturbation changes the
/// branch of any relu/clamp are skipped and counted.
pub fn grad_check<F, R>(
    mut loss_fn: F,
    store: &mut ParamStore,
    eps: f64,
    samples: usize,
    rng: &mut R,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
    R: Rng + ?Sized,
{
    if !(eps > 0.0) {
        return Err(invalid("grad_check: eps must be positive"));
    }
    let total = store.num_scalars();
    if total == 0 {
        return Err(invalid("grad_check: no parameters"));
    }

    let mut tape = Tape::new();
    let loss = loss_fn(&mut tape, store)?;
    let base = tape.scalar(loss);
    let signature = tape.activation_signature();
    tape.backward(loss, store)?;
    let analytic: Vec<f64> = store
        .ids()
        .flat_map(|id| store.grad(id).data().to_vec())
        .collect();

    let again = evaluate(&mut loss_fn, store)?.0;
    if again.to_bits() != base.to_bits() {
        return Err(Error::NonDeterministic {
            first: base,
            second: again,
        });
    }

    let mut report = GradCheckReport::default();
    let max_attempts = samples.saturating_mul(20).max(samples);
    let mut attempts = 0;
    while report.checked < samples && attempts < max_attempts {
        attempts += 1;
        let flat = rng.random_range(0..total);
        let (id, offset) = store.locate(flat).expect("index within range");
        let original = store.value(id).data()[offset];

        let mut probe = |store: &mut ParamStore, delta: f64| -> Result<(f64, u64)> {
            store.value_mut(id).data_mut()[offset] = original + delta;
            let out = evaluate(&mut loss_fn, store);
            store.value_mut(id).data_mut()[offset] = original;
            out
        };

        let (_, sig_hi) = probe(store, KINK_WINDOW)?;
        let (_, sig_lo) = probe(store, -KINK_WINDOW)?;
        if sig_hi != signature || sig_lo != signature {
            report.skipped_near_kink += 1;
            continue;
        }
        let (plus, _) = probe(store, eps)?;
        let (minus, _) = probe(store, -eps)?;
        let numeric = (plus - minus) / (2.0 * eps);
        // one rounding of each loss value, carried through the quotient
        let noise = f64::EPSILON * (plus.abs() + minus.abs()) / (2.0 * eps);
        let diff = (analytic[flat] - numeric).abs();
        let magnitude = analytic[flat].abs().max(numeric.abs());
        if diff > 0.0 && diff <= 4.0 * noise && magnitude * RESOLUTION < noise {
            report.skipped_unresolved += 1;
            continue;
        }
        let err = relative_error(analytic[flat], numeric);
        report.max_relative_error = report.max_relative_error.max(err);
        report.checked += 1;
    }
    Ok(report)
}

fn evaluate<F>(loss_fn: &mut F, store: &ParamStore) -> Result<(f64, u64)>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = loss_fn(&mut tape, store)?;
    Ok((tape.scalar(loss), tape.activation_signature()))
}
