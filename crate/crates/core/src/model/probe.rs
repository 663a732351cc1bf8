//! Seeded random instances for gradient checks of whole models.

use rand::Rng as _;

use super::{backward, forward, init_params, ModelSpec, ParamStore};
use crate::data::{LabelMode, LabelTrack};
use crate::error::Result;
use crate::gradcheck::{finite_diff_check, FdOptions, FdReport};
use crate::loss::multistage_loss;
use crate::matrix::Matrix;
use crate::rng;

/// Coarse numeric gradients in `(ZERO, FLOOR)` cannot be resolved to the
/// composite tolerance at the standard step, so such draws are resampled.
const RESOLVABLE_FLOOR: f64 = 1e-6;
const ZERO: f64 = 1e-12;
const MAX_DRAWS: u64 = 16;

pub fn random_input(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut r = rng::stream(seed, rng::STREAM_PROBE);
    Matrix::from_fn(rows, cols, |_, _| r.random_range(-1.0..1.0))
}

pub fn random_labels(t: usize, c: usize, mode: LabelMode, seed: u64) -> LabelTrack {
    let mut r = rng::stream(seed, rng::STREAM_PROBE + 1);
    match mode {
        LabelMode::Multiclass => LabelTrack::multiclass(c, (0..t).map(|_| r.random_range(0..c)).collect()),
        LabelMode::Multilabel => LabelTrack::multilabel(c, (0..t * c).map(|_| r.random_range(0..2u8)).collect()),
    }
}

pub fn loss_of(params: &ParamStore, spec: &ModelSpec, x: &Matrix, labels: &LabelTrack) -> Result<f64> {
    let (stages, _) = forward(params, spec, x)?;
    Ok(multistage_loss(&stages, labels)?.0)
}

/// Initialised parameters with non-zero biases, so bias paths are exercised.
pub fn random_params(spec: &ModelSpec, seed: u64) -> Result<ParamStore> {
    let mut params = init_params(spec, seed)?;
    let mut r = rng::stream(seed, rng::STREAM_PROBE + 2);
    for p in params.params_mut() {
        if p.name.ends_with(".b") || p.name.contains(".b_") {
            for v in p.value.as_mut_slice() {
                *v = r.random_range(-0.3..0.3);
            }
        }
    }
    Ok(params)
}

fn well_conditioned(params: &ParamStore, spec: &ModelSpec, x: &Matrix, labels: &LabelTrack) -> Result<bool> {
    let h = 1e-3;
    let mut work = params.clone();
    for p in 0..params.len() {
        for i in 0..params.value(p).as_slice().len() {
            let orig = params.value(p).as_slice()[i];
            work.value_mut(p).as_mut_slice()[i] = orig + h;
            let plus = loss_of(&work, spec, x, labels)?;
            work.value_mut(p).as_mut_slice()[i] = orig - h;
            let minus = loss_of(&work, spec, x, labels)?;
            work.value_mut(p).as_mut_slice()[i] = orig;
            let n = ((plus - minus) / (2.0 * h)).abs();
            if n > ZERO && n < RESOLVABLE_FLOOR {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// First parameter draw for this instance whose gradient has no coordinate
/// too close to zero for finite differences to resolve.
pub fn conditioned_params(spec: &ModelSpec, x: &Matrix, labels: &LabelTrack, seed: u64) -> Result<ParamStore> {
    let mut last = None;
    for draw in 0..MAX_DRAWS {
        let params = random_params(spec, seed.wrapping_add(draw << 32))?;
        if well_conditioned(&params, spec, x, labels)? {
            return Ok(params);
        }
        last = Some(params);
    }
    Ok(last.expect("at least one draw"))
}

/// Full model + loss gradient check at the composite tolerance. `tamper` sees
/// the analytic gradients before they are compared.
pub fn check_model_with<F>(spec: &ModelSpec, x: &Matrix, labels: &LabelTrack, seed: u64, tamper: F) -> Result<FdReport>
where
    F: FnOnce(&mut ParamStore),
{
    let mut params = conditioned_params(spec, x, labels, seed)?;
    let (stages, cache) = forward(&params, spec, x)?;
    let (_, d) = multistage_loss(&stages, labels)?;
    backward(&mut params, spec, &cache, &d)?;
    tamper(&mut params);
    finite_diff_check(
        &params,
        |p| loss_of(p, spec, x, labels).unwrap_or(f64::NAN),
        FdOptions::composite(),
    )
}

pub fn check_model(spec: &ModelSpec, x: &Matrix, labels: &LabelTrack, seed: u64) -> Result<FdReport> {
    check_model_with(spec, x, labels, seed, |_| {})
}
