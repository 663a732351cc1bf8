//! Central finite-difference gradient checker.

use alloc::format;
use alloc::string::String;

use crate::error::{Error, Result};
use crate::model::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdOptions {
    pub step: f64,
    pub tol: f64,
}

impl FdOptions {
    /// Step `1e-5`, tolerance `1e-6`: single kernels and losses.
    pub const fn elementary() -> Self {
        FdOptions { step: 1e-5, tol: 1e-6 }
    }

    /// Step `1e-5`, tolerance `1e-4`: full model + loss compositions.
    pub const fn composite() -> Self {
        FdOptions { step: 1e-5, tol: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Coordinate {
    pub param: String,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub max_rel_err: f64,
    /// Coordinate holding `max_rel_err`.
    pub worst: Option<Coordinate>,
    pub coords_checked: usize,
    pub pass: bool,
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares the gradient buffers of `params` against central differences of
/// `f` taken coordinate by coordinate over every parameter value.
pub fn finite_diff_check<F>(params: &ParamStore, mut f: F, opts: FdOptions) -> Result<FdReport>
where
    F: FnMut(&ParamStore) -> f64,
{
    if !(opts.step > 0.0) {
        return Err(Error::InvalidArgument(format!("finite-difference step must be > 0, got {}", opts.step)));
    }
    let mut work = params.clone();
    let mut max_rel_err = 0.0f64;
    let mut worst = None;
    let mut coords = 0;
    for p in 0..params.len() {
        for i in 0..params.value(p).as_slice().len() {
            let orig = params.value(p).as_slice()[i];
            work.value_mut(p).as_mut_slice()[i] = orig + opts.step;
            let plus = f(&work);
            work.value_mut(p).as_mut_slice()[i] = orig - opts.step;
            let minus = f(&work);
            work.value_mut(p).as_mut_slice()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!(
                    "objective at perturbed coordinate {}[{}]",
                    params.name(p),
                    i
                )));
            }
            let numeric = (plus - minus) / (2.0 * opts.step);
            let analytic = params.grad(p).as_slice()[i];
            let err = rel_err(analytic, numeric);
            coords += 1;
            if err > max_rel_err || worst.is_none() {
                max_rel_err = max_rel_err.max(err);
                worst = Some(Coordinate {
                    param: params.name(p).into(),
                    index: i,
                });
            }
        }
    }
    Ok(FdReport {
        max_rel_err,
        worst,
        coords_checked: coords,
        pass: max_rel_err < opts.tol,
    })
}
