//! Finite-difference suites over every op, loss and model, as run by the
//! command-line verifier.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::data::LabelMode;
use crate::error::{Error, Result};
use crate::gradcheck::{finite_diff_check, Coordinate, FdOptions, FdReport};
use crate::loss::{bce, cross_entropy, multistage_loss};
use crate::matrix::{dot, Matrix};
use crate::model::probe::{check_model_with, random_input, random_labels};
use crate::model::{ModelKind, ModelSpec, ParamStore};
use crate::ops::{
    activation_forward, conv1d_causal_forward, linear_forward, Activation, ActivationNode, Conv1dCausal, ConvShape,
    DiffNode, Linear,
};
use crate::rng;

/// Random seeds per unit.
pub const SEEDS: u64 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Ops,
    Losses,
    Models,
    All,
}

impl core::str::FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ops" => Ok(Scope::Ops),
            "losses" => Ok(Scope::Losses),
            "models" => Ok(Scope::Models),
            "all" => Ok(Scope::All),
            _ => Err(Error::InvalidArgument(format!(
                "unknown gradcheck scope `{s}` (valid scopes: ops, losses, models, all)"
            ))),
        }
    }
}

/// Deliberate backward bugs, for checking that the suites catch them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Sign flip on the input-to-update-gate weight gradient of every GRU layer.
    GruUpdateGate,
}

impl core::str::FromStr for Fault {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gru-update-gate" => Ok(Fault::GruUpdateGate),
            _ => Err(Error::InvalidArgument(format!("unknown fault `{s}`"))),
        }
    }
}

const OPS: [&str; 6] = ["linear", "conv1d-causal", "relu", "sigmoid", "tanh", "softmax"];
const LOSSES: [&str; 3] = ["cross-entropy", "bce", "multistage"];
const MODELS: [&str; 4] = ["frame-mlp", "clip-conv", "gru", "mstcn"];

pub fn units(scope: Scope) -> Vec<&'static str> {
    match scope {
        Scope::Ops => OPS.to_vec(),
        Scope::Losses => LOSSES.to_vec(),
        Scope::Models => MODELS.to_vec(),
        Scope::All => OPS.iter().chain(&LOSSES).chain(&MODELS).copied().collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitResult {
    pub unit: String,
    pub tolerance: f64,
    pub checks: usize,
    pub max_rel_err: f64,
    /// Seed and coordinate of the worst check.
    pub worst: Option<(u64, Coordinate)>,
    pub pass: bool,
}

struct Worst {
    checks: usize,
    max: f64,
    at: Option<(u64, Coordinate)>,
}

impl Worst {
    fn new() -> Self {
        Worst {
            checks: 0,
            max: 0.0,
            at: None,
        }
    }

    fn add(&mut self, seed: u64, r: FdReport) {
        self.checks += 1;
        if r.max_rel_err > self.max || self.at.is_none() {
            self.max = self.max.max(r.max_rel_err);
            self.at = r.worst.map(|c| (seed, c));
        }
    }
}

fn random(rows: usize, cols: usize, r: &mut rng::Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| r.random_range(-1.0..1.0))
}

/// Checks `⟨probe, op(inputs)⟩` against the analytic gradients in `store`.
fn projected<F>(store: &ParamStore, probe: &Matrix, op: F) -> Result<FdReport>
where
    F: Fn(&ParamStore) -> Result<Matrix>,
{
    finite_diff_check(
        store,
        |p| op(p).map(|y| dot(y.as_slice(), probe.as_slice())).unwrap_or(f64::NAN),
        FdOptions::elementary(),
    )
}

fn op_check(unit: &str, seed: u64) -> Result<FdReport> {
    let mut r = rng::stream(seed, rng::STREAM_PROBE + 16);
    let mut store = ParamStore::new(seed);
    match unit {
        "linear" => {
            let (x, w, b, probe) = (random(3, 2, &mut r), random(2, 2, &mut r), random(1, 2, &mut r), random(3, 2, &mut r));
            let g = Linear::forward(&x, &w, b.row(0))?.backward(&probe)?;
            store.push("x", x);
            store.push("w", w);
            store.push("b", b);
            *store.grad_mut(0) = g.dx;
            *store.grad_mut(1) = g.dw;
            *store.grad_mut(2) = Matrix::row_vector(&g.db);
            projected(&store, &probe, |p| linear_forward(p.value(0), p.value(1), p.value(2).row(0)))
        }
        "conv1d-causal" => {
            let shape = ConvShape {
                taps: 3,
                c_in: 2,
                c_out: 2,
                dilation: 2,
            };
            let (x, k, probe) = (random(8, 2, &mut r), random(6, 2, &mut r), random(8, 2, &mut r));
            let g = Conv1dCausal::forward(&x, &k, shape)?.backward(&probe)?;
            store.push("x", x);
            store.push("k", k);
            *store.grad_mut(0) = g.dx;
            *store.grad_mut(1) = g.dk;
            projected(&store, &probe, |p| conv1d_causal_forward(p.value(0), p.value(1), shape))
        }
        _ => {
            let kind = match unit {
                "relu" => Activation::Relu,
                "sigmoid" => Activation::Sigmoid,
                "tanh" => Activation::Tanh,
                _ => Activation::SoftmaxRows,
            };
            let (x, probe) = (random(4, 3, &mut r), random(4, 3, &mut r));
            let g = ActivationNode::forward(&x, kind)?.backward(&probe)?;
            store.push("x", x);
            *store.grad_mut(0) = g;
            projected(&store, &probe, |p| activation_forward(p.value(0), kind))
        }
    }
}

fn loss_check(unit: &str, seed: u64) -> Result<FdReport> {
    let mut store = ParamStore::new(seed);
    match unit {
        "cross-entropy" => {
            let labels = random_labels(4, 3, LabelMode::Multiclass, seed);
            let s = random_input(4, 3, seed).map(|v| 3.0 * v);
            let (_, g) = cross_entropy(&s, &labels)?;
            store.push("scores", s);
            *store.grad_mut(0) = g;
            finite_diff_check(
                &store,
                |p| cross_entropy(p.value(0), &labels).map(|l| l.0).unwrap_or(f64::NAN),
                FdOptions::elementary(),
            )
        }
        "bce" => {
            let labels = random_labels(3, 4, LabelMode::Multilabel, seed);
            let s = random_input(3, 4, seed).map(|v| 3.0 * v);
            let (_, g) = bce(&s, &labels)?;
            store.push("scores", s);
            *store.grad_mut(0) = g;
            finite_diff_check(
                &store,
                |p| bce(p.value(0), &labels).map(|l| l.0).unwrap_or(f64::NAN),
                FdOptions::elementary(),
            )
        }
        _ => {
            let labels = random_labels(4, 3, LabelMode::Multiclass, seed);
            let stages = vec![
                random_input(4, 3, seed).map(|v| 3.0 * v),
                random_input(4, 3, seed + 1_000_000).map(|v| 2.0 * v),
            ];
            let (_, grads) = multistage_loss(&stages, &labels)?;
            for (i, (s, g)) in stages.into_iter().zip(grads).enumerate() {
                store.push(format!("stage{i}"), s);
                *store.grad_mut(i) = g;
            }
            finite_diff_check(
                &store,
                |p| {
                    let st: Vec<Matrix> = p.params().iter().map(|q| q.value.clone()).collect();
                    multistage_loss(&st, &labels).map(|l| l.0).unwrap_or(f64::NAN)
                },
                FdOptions::elementary(),
            )
        }
    }
}

/// Small instance (T ≤ 8, D ≤ 4, C = 3) of each architecture.
fn small_spec(kind: ModelKind, mode: LabelMode) -> (ModelSpec, usize) {
    let d = match kind {
        ModelKind::Gru | ModelKind::Mstcn => 3,
        _ => 4,
    };
    let mut s = ModelSpec::new(kind, d, 3, mode);
    s.mlp_hidden = 6;
    s.clip_window = 4;
    s.clip_filters = 5;
    s.layers = 3;
    s.filters = 4;
    let t = match kind {
        ModelKind::Gru => 5,
        ModelKind::Mstcn => 6,
        _ => 8,
    };
    (s, t)
}

fn model_check(kind: ModelKind, mode: LabelMode, seed: u64, fault: Option<Fault>) -> Result<FdReport> {
    let (spec, t) = small_spec(kind, mode);
    let data_seed = if mode == LabelMode::Multilabel { seed + 100 } else { seed };
    let x = random_input(t, spec.feature_dim, data_seed);
    let y = random_labels(t, spec.num_classes, mode, data_seed);
    check_model_with(&spec, &x, &y, seed, |p| {
        if fault == Some(Fault::GruUpdateGate) {
            for q in p.params_mut() {
                if q.name.starts_with("gru.") && q.name.ends_with(".w_z") {
                    q.grad = q.grad.map(|g| -g);
                }
            }
        }
    })
}

/// Runs one unit over [`SEEDS`] seeds (both label modes for models).
pub fn run_unit(unit: &str, fault: Option<Fault>) -> Result<UnitResult> {
    let mut worst = Worst::new();
    let tolerance;
    if OPS.contains(&unit) {
        tolerance = FdOptions::elementary().tol;
        for seed in 0..SEEDS {
            worst.add(seed, op_check(unit, seed)?);
        }
    } else if LOSSES.contains(&unit) {
        tolerance = FdOptions::elementary().tol;
        for seed in 0..SEEDS {
            worst.add(seed, loss_check(unit, seed)?);
        }
    } else {
        let kind: ModelKind = unit.parse()?;
        tolerance = FdOptions::composite().tol;
        for seed in 0..SEEDS {
            for mode in [LabelMode::Multiclass, LabelMode::Multilabel] {
                worst.add(seed, model_check(kind, mode, seed, fault)?);
            }
        }
    }
    Ok(UnitResult {
        unit: unit.into(),
        tolerance,
        checks: worst.checks,
        max_rel_err: worst.max,
        worst: worst.at,
        pass: worst.max < tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scopes_partition_all() {
        let mut parts = units(Scope::Ops);
        parts.extend(units(Scope::Losses));
        parts.extend(units(Scope::Models));
        assert_eq!(parts, units(Scope::All));
        assert!("everything".parse::<Scope>().is_err());
    }

    #[test]
    fn every_op_and_loss_passes() {
        for unit in units(Scope::Ops).into_iter().chain(units(Scope::Losses)) {
            let r = run_unit(unit, None).unwrap();
            assert!(r.pass, "{r:?}");
            assert_eq!(r.checks, SEEDS as usize);
        }
    }

    #[test]
    fn injected_gru_fault_is_caught() {
        let r = run_unit("gru", Some(Fault::GruUpdateGate)).unwrap();
        assert!(!r.pass);
        let (_, at) = r.worst.unwrap();
        assert!(at.param.ends_with(".w_z"), "{at:?}");
        assert!(run_unit("mstcn", Some(Fault::GruUpdateGate)).unwrap().pass);
    }
}
