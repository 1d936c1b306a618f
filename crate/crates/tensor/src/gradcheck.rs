//! Central-difference verification of tape gradients.

use crate::error::{Result, TensorError};
use crate::params::ParamStore;
use crate::real::Real;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// max over coordinates of |analytic − numeric| / max(1, |analytic|)
    pub max_rel_err: f64,
    /// `(tensor, coordinate)` where the max was attained; parameters come
    /// after explicit inputs.
    pub worst: (usize, usize),
    pub coordinates: usize,
    pub passed: bool,
}

/// Checks the gradient of a scalar program with respect to `inputs`.
pub fn grad_check<T, F>(f: F, inputs: &[Tensor<T>], eps: f64, tol: f64) -> Result<GradCheckReport>
where
    T: Real,
    F: Fn(&mut Tape<'_, T>, &[Var]) -> Result<Var>,
{
    grad_check_with_params(&ParamStore::new(), f, inputs, eps, tol)
}

/// Like [`grad_check`] but also differentiates every tensor in `store`
/// that `f` reads through [`Tape::param`].
pub fn grad_check_with_params<T, F>(
    store: &ParamStore<T>,
    f: F,
    inputs: &[Tensor<T>],
    eps: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    T: Real,
    F: Fn(&mut Tape<'_, T>, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(crate::error::contract(
            "grad_check",
            format!("eps {eps} must be positive"),
        ));
    }
    let eval = |store: &ParamStore<T>, inputs: &[Tensor<T>]| -> Result<f64> {
        let mut tape = Tape::with_params(store);
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        if tape.value(out).len() != 1 {
            return Err(TensorError::NonScalarLoss(tape.shape(out).to_vec()));
        }
        Ok(tape.data(out)[0].to_f64_lossy())
    };

    let mut tape = Tape::with_params(store);
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let mut analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| {
            tape.grad(v)
                .map(|g| g.iter().map(|x| x.to_f64_lossy()).collect())
                .unwrap_or_else(|| vec![0.0; tape.value(v).len()])
        })
        .collect();
    let mut pgrads = store.zero_grads();
    tape.accumulate_param_grads(&mut pgrads);
    analytic.extend(
        pgrads
            .into_iter()
            .map(|g| g.into_iter().map(|x| x.to_f64_lossy()).collect::<Vec<_>>()),
    );
    drop(tape);

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: (0, 0),
        coordinates: 0,
        passed: true,
    };
    let record = |slot: usize, idx: usize, numeric: f64, report: &mut GradCheckReport| {
        let a = analytic[slot][idx];
        let err = (a - numeric).abs() / a.abs().max(1.0);
        report.coordinates += 1;
        if err > report.max_rel_err || err.is_nan() {
            report.max_rel_err = err;
            report.worst = (slot, idx);
        }
    };

    let mut work = inputs.to_vec();
    for slot in 0..inputs.len() {
        for idx in 0..inputs[slot].len() {
            let orig = work[slot].data()[idx];
            work[slot].data_mut()[idx] = orig + T::of(eps);
            let plus = eval(store, &work)?;
            work[slot].data_mut()[idx] = orig - T::of(eps);
            let minus = eval(store, &work)?;
            work[slot].data_mut()[idx] = orig;
            record(slot, idx, (plus - minus) / (2.0 * eps), &mut report);
        }
    }
    let mut perturbed = store.clone();
    for pid in store.ids() {
        let slot = inputs.len() + pid.index();
        for idx in 0..store.get(pid).len() {
            let orig = store.get(pid).data()[idx];
            perturbed.get_mut(pid).data_mut()[idx] = orig + T::of(eps);
            let plus = eval(&perturbed, inputs)?;
            perturbed.get_mut(pid).data_mut()[idx] = orig - T::of(eps);
            let minus = eval(&perturbed, inputs)?;
            perturbed.get_mut(pid).data_mut()[idx] = orig;
            record(slot, idx, (plus - minus) / (2.0 * eps), &mut report);
        }
    }
    report.passed = report.max_rel_err <= tol;
    Ok(report)
}
