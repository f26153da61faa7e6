//! Central finite-difference gradient checking in double precision.
//!
//! Only forward evaluations feed the numerical estimate, so the check is
//! independent of every backward rule it validates.

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{AutodiffError, Result};
use crate::params::{GradBuffer, ParamId, ParamStore};
use crate::tape::{Tape, Var};

pub const DEFAULT_STEP: f64 = 1e-6;

/// Norm-wise relative error `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).powi(2))
        .sum::<f64>()
        .sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / na.max(nn).max(1e-6)
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Worst relative error over checked tensors.
    pub max_rel_error: f64,
    /// Name of the tensor where it occurred.
    pub worst: String,
    pub tensors_checked: usize,
    pub coords_checked: usize,
}

/// Checks the gradient of a scalar function of raw input arrays.
pub fn check_inputs<F>(inputs: &[(Vec<usize>, Vec<f64>)], f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[(Vec<usize>, Vec<f64>)]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars = vals
            .iter()
            .map(|(s, d)| tape.leaf(s, d.clone()))
            .collect::<Result<Vec<_>>>()?;
        let out = f(&mut tape, &vars)?;
        Ok(tape.scalar(out))
    };

    let mut tape = Tape::new();
    let vars = inputs
        .iter()
        .map(|(s, d)| tape.leaf(s, d.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        tensors_checked: 0,
        coords_checked: 0,
    };
    let mut work = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let analytic = tape.grad_or_zeros(*v);
        let mut numeric = vec![0.0; analytic.len()];
        for i in 0..analytic.len() {
            let orig = work[k].1[i];
            work[k].1[i] = orig + DEFAULT_STEP;
            let plus = eval(&work)?;
            work[k].1[i] = orig - DEFAULT_STEP;
            let minus = eval(&work)?;
            work[k].1[i] = orig;
            numeric[i] = (plus - minus) / (2.0 * DEFAULT_STEP);
        }
        let err = relative_error(&analytic, &numeric);
        report.tensors_checked += 1;
        report.coords_checked += analytic.len();
        if err > report.max_rel_error || report.worst.is_empty() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = format!("input {k}");
        }
    }
    Ok(report)
}

/// Checks gradients of `loss` with respect to every parameter in `store`.
/// With `max_coords = Some(k)` at most `k` randomly chosen coordinates per
/// tensor are perturbed.
pub fn check_params<F, R>(
    store: &mut ParamStore<f64>,
    loss: F,
    max_coords: Option<usize>,
    rng: &mut R,
) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore<f64>, &mut Tape<f64>) -> Result<Var>,
    R: Rng,
{
    let mut tape = Tape::new();
    let out = loss(store, &mut tape)?;
    if !tape.scalar(out).is_finite() {
        return Err(AutodiffError::NonFinite("loss".into()));
    }
    tape.backward(out)?;
    let mut analytic = GradBuffer::zeros_like(store);
    tape.harvest(&mut analytic);
    drop(tape);

    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut t = Tape::new();
        let o = loss(s, &mut t)?;
        Ok(t.scalar(o))
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        tensors_checked: 0,
        coords_checked: 0,
    };
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let n = store.get(id).numel();
        let coords: Vec<usize> = match max_coords {
            Some(k) if k < n => {
                let mut c = sample(rng, n, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        let mut a = Vec::with_capacity(coords.len());
        let mut num = Vec::with_capacity(coords.len());
        for &i in &coords {
            let orig = store.get(id).data[i];
            store.get_mut(id).data[i] = orig + DEFAULT_STEP;
            let plus = eval(store)?;
            store.get_mut(id).data[i] = orig - DEFAULT_STEP;
            let minus = eval(store)?;
            store.get_mut(id).data[i] = orig;
            a.push(analytic.grads[id.0][i]);
            num.push((plus - minus) / (2.0 * DEFAULT_STEP));
        }
        let err = relative_error(&a, &num);
        report.tensors_checked += 1;
        report.coords_checked += coords.len();
        if err >= report.max_rel_error {
            report.max_rel_error = err;
            report.worst = store.get(id).name.clone();
        }
    }
    Ok(report)
}
