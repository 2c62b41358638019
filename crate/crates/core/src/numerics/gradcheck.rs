//! Central finite-difference gradient checks.
//!
//! The check perturbs parameter values directly and re-runs the forward
//! closure, so it never touches the backward rules it is verifying.

use std::sync::Arc;

use super::{NumericsError, ParamId, ParamSet, Real, Tape, Var};

/// Denominator floor used by [`check_params`].
pub const SCALE_FLOOR: Real = 1e-4;

/// Relative error `|a - n| / max(|a| + |n|, 1e-8)`.
pub fn relative_error(analytic: Real, numeric: Real) -> Real {
    let denom = (analytic.abs() + numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

#[derive(Clone, Debug)]
pub struct CheckReport {
    pub checked: usize,
    pub max_rel_error: Real,
    pub worst: Option<(String, usize, Real, Real)>,
}

/// Compares backward-pass parameter gradients against central differences
/// for the given `(param, flat index)` coordinates.
pub fn check_params<F>(
    params: &ParamSet,
    coords: &[(ParamId, usize)],
    step: Real,
    mut loss: F,
) -> Result<CheckReport, NumericsError>
where
    F: FnMut(&mut Tape) -> Result<Var, NumericsError>,
{
    let shared = Arc::new(params.clone());
    let mut tape = Tape::with_params(shared);
    let out = loss(&mut tape)?;
    let grads = tape.backward(out)?;

    let mut report = CheckReport { checked: 0, max_rel_error: 0.0, worst: None };
    for &(id, idx) in coords {
        let analytic = grads.param(id).map_or(0.0, |g| g.data()[idx]);
        let eval = |delta: Real, loss: &mut F| -> Result<Real, NumericsError> {
            let mut p = params.clone();
            p.get_mut(id).data_mut()[idx] += delta;
            let mut t = Tape::with_params(Arc::new(p));
            let v = loss(&mut t)?;
            Ok(t.value(v).item())
        };
        let plus = eval(step, &mut loss)?;
        let minus = eval(-step, &mut loss)?;
        let numeric = (plus - minus) / (2.0 * step);
        // Gradients far below the loss scale are compared against a floor,
        // since truncation error and ReLU kinks dominate there.
        let err = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(SCALE_FLOOR);
        report.checked += 1;
        if report.worst.is_none() || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst = Some((params.name(id).to_string(), idx, analytic, numeric));
        }
    }
    Ok(report)
}

/// Every coordinate of every parameter, or an evenly spread sample of at
/// most `limit` of them.
pub fn sample_coords(params: &ParamSet, limit: usize, seed: u64) -> Vec<(ParamId, usize)> {
    use rand::{Rng, SeedableRng};
    let all: Vec<(ParamId, usize)> = params.iter().flat_map(|(id, _, t)| (0..t.len()).map(move |i| (id, i))).collect();
    if all.len() <= limit {
        return all;
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<(ParamId, usize)> = Vec::with_capacity(limit);
    // Make sure each tensor is represented at least once.
    for (id, _, t) in params.iter() {
        if picked.len() < limit {
            picked.push((id, rng.random_range(0..t.len())));
        }
    }
    while picked.len() < limit {
        picked.push(all[rng.random_range(0..all.len())]);
    }
    picked
}
