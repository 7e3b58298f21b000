//! Central finite-difference gradient checking.

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::tape::{Tape, Var};

pub const STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter holding the worst entry, with the entry's flat index.
    pub worst: Option<(String, usize)>,
    /// Analytic and numeric gradient at the worst entry.
    pub worst_values: (f64, f64),
    pub entries: usize,
}

/// Gradients smaller than this are compared absolutely: round-off in a
/// central difference with `STEP = 1e-5` is around `1e-11`.
pub const FLOOR: f64 = 1e-6;

/// `|a - n| / max(FLOOR, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(FLOOR)
}

fn evaluate<F>(store: &ParamStore, seed: u64, f: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &mut Rng) -> Result<Var>,
{
    let mut tape = Tape::with_params(store);
    let mut rng = Rng::new(seed);
    let loss = f(&mut tape, &mut rng)?;
    if tape.value(loss).len() != 1 {
        return Err(Error::contract("gradient check needs a scalar loss"));
    }
    Ok(tape.item(loss))
}

/// Compares the tape gradient of `f` against central differences for every
/// entry of every parameter in `store`. `f` receives a fresh [`Rng`] seeded
/// with `seed` on each evaluation.
pub fn grad_check<F>(store: &ParamStore, seed: u64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &mut Rng) -> Result<Var>,
{
    let first = evaluate(store, seed, &f)?;
    let second = evaluate(store, seed, &f)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::contract(format!(
            "function is not deterministic: {first} then {second}"
        )));
    }
    let analytic = {
        let mut tape = Tape::with_params(store);
        let mut rng = Rng::new(seed);
        let loss = f(&mut tape, &mut rng)?;
        tape.backward(loss)?.param_grads(store)
    };
    let mut probe = store.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        worst_values: (0.0, 0.0),
        entries: 0,
    };
    for id in store.ids() {
        for i in 0..store.get(id).numel() {
            let orig = store.get(id).data()[i];
            probe.get_mut(id).data_mut()[i] = orig + STEP;
            let plus = evaluate(&probe, seed, &f)?;
            probe.get_mut(id).data_mut()[i] = orig - STEP;
            let minus = evaluate(&probe, seed, &f)?;
            probe.get_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * STEP);
            let a = analytic.get(id).data()[i];
            let err = relative_error(a, numeric);
            report.entries += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((store.name(id).to_string(), i));
                report.worst_values = (a, numeric);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn linear_map_is_exact() {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(1);
        let w = store.add_uniform("w", &[3, 4], 4, &mut rng).unwrap();
        let x = Tensor::new(vec![4, 1], vec![0.5, -1.0, 2.0, 0.25]).unwrap();
        let report = grad_check(&store, 0, |t, _| {
            let wv = t.param(w);
            let xv = t.constant(x.clone())?;
            let y = t.matmul(wv, xv)?;
            t.sum_all(y)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-10, "{report:?}");
        assert_eq!(report.entries, 12);
    }

    #[test]
    fn nondeterminism_is_a_contract_error() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::vector(vec![1.0])).unwrap();
        let counter = std::cell::Cell::new(0.0);
        let err = grad_check(&store, 0, |t, _| {
            counter.set(counter.get() + 1.0);
            let c = t.constant(Tensor::vector(vec![counter.get()]))?;
            let wv = t.param(w);
            let y = t.mul(wv, c)?;
            t.sum_all(y)
        })
        .unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }
}
