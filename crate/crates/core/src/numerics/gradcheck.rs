//! Central finite-difference check of tape gradients.

use super::params::{ParamId, ParamStore, SplitMix64};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Denominator floor for the relative error, so entries whose true gradient
/// is zero are judged on absolute error at this scale.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub h: f64,
    pub tol: f64,
    /// Check at most this many randomly chosen entries per parameter matrix.
    pub max_entries_per_param: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-5,
            tol: 1e-4,
            max_entries_per_param: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub entries_checked: usize,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

fn eval<F>(f: &F, store: &ParamStore) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    let v = tape.value(out);
    if v.shape() != (1, 1) {
        return Err(Error::shape("grad_check objective", v.shape(), (1, 1)));
    }
    let v = v.item();
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("objective evaluated to {v}")));
    }
    Ok(v)
}

/// Compares tape gradients of the scalar `f` against `(f(p+h) - f(p-h)) / 2h`.
///
/// `params` selects which parameters to perturb; `None` checks all of them.
pub fn grad_check<F>(
    store: &ParamStore,
    params: Option<&[ParamId]>,
    f: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    if !(opts.h > 0.0) {
        return Err(Error::Argument(format!(
            "finite-difference step must be positive, got {}",
            opts.h
        )));
    }
    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    if !tape.value(out).item().is_finite() {
        return Err(Error::NonFinite("objective".into()));
    }
    let grads = tape.backward(out)?;

    let ids: Vec<ParamId> = match params {
        Some(p) => p.to_vec(),
        None => store.ids().collect(),
    };
    let mut rng = SplitMix64::new(opts.seed);
    let mut work = store.clone();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        entries_checked: 0,
        tol: opts.tol,
    };
    for id in ids {
        let analytic = grads.get_or_zeros(store, id);
        let n = analytic.len();
        let mut entries: Vec<usize> = (0..n).collect();
        if let Some(k) = opts.max_entries_per_param {
            if k < n {
                rng.shuffle(&mut entries);
                entries.truncate(k);
                entries.sort_unstable();
            }
        }
        for i in entries {
            let orig = store.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = orig + opts.h;
            let plus = eval(&f, &work)?;
            work.get_mut(id).data_mut()[i] = orig - opts.h;
            let minus = eval(&f, &work)?;
            work.get_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * opts.h);
            let err = relative_error(analytic.data()[i], numeric);
            report.entries_checked += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(err);
                report.worst = Some((store.name(id).to_string(), i));
            }
        }
    }
    Ok(report)
}
