//! The four architectures as feature-space models.
//!
//! Every model maps a `T x D` feature sequence to one or more `T x C` score
//! matrices (one per refinement stage; only the multi-stage TCN has more
//! than one). Forward passes return a cache that [`backward`] consumes to
//! accumulate parameter gradients into the [`ParamStore`].

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::LabelMode;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::ops::{activation_forward, Activation};
use crate::rng;

pub mod clip_conv;
pub mod frame_mlp;
pub mod gru;
pub mod mstcn;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    FrameMlp,
    ClipConv,
    Gru,
    Mstcn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::FrameMlp, ModelKind::ClipConv, ModelKind::Gru, ModelKind::Mstcn];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::FrameMlp => "frame-mlp",
            ModelKind::ClipConv => "clip-conv",
            ModelKind::Gru => "gru",
            ModelKind::Mstcn => "mstcn",
        }
    }

    /// Temporal models train one optimizer step per whole video.
    pub fn is_temporal(self) -> bool {
        !matches!(self, ModelKind::FrameMlp)
    }
}

impl core::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown model kind `{s}` (valid kinds: frame-mlp, clip-conv, gru, mstcn)"
                ))
            })
    }
}

/// Architecture hyperparameters. Only the fields relevant to `kind` are read.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub label_mode: LabelMode,
    /// frame-mlp hidden width.
    pub mlp_hidden: usize,
    /// clip-conv window `n` (causal kernel width).
    pub clip_window: usize,
    pub clip_filters: usize,
    pub gru_hidden: usize,
    pub gru_layers: usize,
    pub stages: usize,
    /// Dilated residual layers per stage.
    pub layers: usize,
    pub filters: usize,
    pub kernel: usize,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, feature_dim: usize, num_classes: usize, label_mode: LabelMode) -> Self {
        ModelSpec {
            kind,
            feature_dim,
            num_classes,
            label_mode,
            mlp_hidden: 64,
            clip_window: 16,
            clip_filters: 64,
            gru_hidden: feature_dim,
            gru_layers: 2,
            stages: 2,
            layers: 15,
            filters: 64,
            kernel: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut issues = Vec::new();
        if self.feature_dim < 1 {
            issues.push(String::from("feature_dim must be >= 1"));
        }
        if self.num_classes < 2 {
            issues.push(String::from("num_classes must be >= 2"));
        }
        match self.kind {
            ModelKind::FrameMlp if self.mlp_hidden < 1 => issues.push("mlp_hidden must be >= 1".into()),
            ModelKind::ClipConv => {
                if self.clip_window < 1 {
                    issues.push("clip_window must be >= 1".into());
                }
                if self.clip_filters < 1 {
                    issues.push("clip_filters must be >= 1".into());
                }
            }
            ModelKind::Gru => {
                if self.gru_hidden < 1 {
                    issues.push("gru_hidden must be >= 1".into());
                }
                if self.gru_layers < 1 {
                    issues.push("gru_layers must be >= 1".into());
                }
            }
            ModelKind::Mstcn => {
                for (name, v) in [
                    ("stages", self.stages),
                    ("layers", self.layers),
                    ("filters", self.filters),
                    ("kernel", self.kernel),
                ] {
                    if v < 1 {
                        issues.push(format!("{name} must be >= 1"));
                    }
                }
                if self.layers > 30 {
                    issues.push("layers must be <= 30 (dilation 2^l overflows)".into());
                }
            }
            _ => {}
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(issues))
        }
    }

    /// Names, shapes and fan-in of every trainable tensor, in store order.
    pub fn layout(&self) -> Vec<TensorDef> {
        let d = self.feature_dim;
        let c = self.num_classes;
        let mut defs = Vec::new();
        let linear = |defs: &mut Vec<TensorDef>, prefix: &str, fan_in: usize, out: usize| {
            defs.push(TensorDef::weight(format!("{prefix}.w"), fan_in, out, fan_in));
            defs.push(TensorDef::bias(format!("{prefix}.b"), out));
        };
        match self.kind {
            ModelKind::FrameMlp => {
                linear(&mut defs, "hidden", d, self.mlp_hidden);
                linear(&mut defs, "head", self.mlp_hidden, c);
            }
            ModelKind::ClipConv => {
                let n = self.clip_window;
                defs.push(TensorDef::weight("clip.k".into(), n * d, self.clip_filters, n * d));
                defs.push(TensorDef::bias("clip.b".into(), self.clip_filters));
                linear(&mut defs, "head", self.clip_filters, c);
            }
            ModelKind::Gru => {
                let h = self.gru_hidden;
                for l in 0..self.gru_layers {
                    let input = if l == 0 { d } else { h };
                    for gate in ["z", "r", "h"] {
                        defs.push(TensorDef::weight(format!("gru.l{l}.w_{gate}"), input, h, input));
                        defs.push(TensorDef::weight(format!("gru.l{l}.u_{gate}"), h, h, h));
                        defs.push(TensorDef::bias(format!("gru.l{l}.b_{gate}"), h));
                    }
                }
                linear(&mut defs, "head", h, c);
            }
            ModelKind::Mstcn => {
                let f = self.filters;
                let k = self.kernel;
                for s in 0..self.stages {
                    let input = if s == 0 { d } else { c };
                    linear(&mut defs, &format!("s{s}.in"), input, f);
                    for l in 0..self.layers {
                        defs.push(TensorDef::weight(format!("s{s}.l{l}.dil.k"), k * f, f, k * f));
                        defs.push(TensorDef::bias(format!("s{s}.l{l}.dil.b"), f));
                        linear(&mut defs, &format!("s{s}.l{l}.pw"), f, f);
                    }
                    linear(&mut defs, &format!("s{s}.out"), f, c);
                }
            }
        }
        defs
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorDef {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// `None` for biases (zero-initialized).
    pub fan_in: Option<usize>,
}

impl TensorDef {
    fn weight(name: String, rows: usize, cols: usize, fan_in: usize) -> Self {
        TensorDef {
            name,
            rows,
            cols,
            fan_in: Some(fan_in),
        }
    }

    fn bias(name: String, cols: usize) -> Self {
        TensorDef {
            name,
            rows: 1,
            cols,
            fan_in: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
}

/// Named trainable tensors, each paired with a gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    seed: u64,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            params: Vec::new(),
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Appends a tensor with a zeroed gradient; returns its index.
    pub fn push(&mut self, name: impl Into<String>, value: Matrix) -> usize {
        let grad = Matrix::zeros(value.rows(), value.cols());
        self.params.push(Param {
            name: name.into(),
            value,
            grad,
        });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.as_slice().len()).sum()
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn name(&self, i: usize) -> &str {
        &self.params[i].name
    }

    pub fn value(&self, i: usize) -> &Matrix {
        &self.params[i].value
    }

    pub fn value_mut(&mut self, i: usize) -> &mut Matrix {
        &mut self.params[i].value
    }

    pub fn grad(&self, i: usize) -> &Matrix {
        &self.params[i].grad
    }

    pub fn grad_mut(&mut self, i: usize) -> &mut Matrix {
        &mut self.params[i].grad
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub(crate) fn require(&self, name: &str) -> Result<usize> {
        self.index_of(name)
            .ok_or_else(|| Error::InvalidArgument(format!("parameter `{name}` missing from store")))
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Sets every value (not gradient) to zero.
    pub fn zero_values(&mut self) {
        for p in &mut self.params {
            p.value.fill(0.0);
        }
    }

    /// Checks that the store matches the layout `spec` expects.
    pub fn check_layout(&self, spec: &ModelSpec) -> Result<()> {
        let defs = spec.layout();
        if defs.len() != self.params.len() {
            return Err(Error::InvalidArgument(format!(
                "store holds {} tensors, {} model expects {}",
                self.params.len(),
                spec.kind,
                defs.len()
            )));
        }
        for (def, p) in defs.iter().zip(&self.params) {
            if def.name != p.name || (def.rows, def.cols) != p.value.shape() {
                return Err(Error::InvalidArgument(format!(
                    "tensor `{}` has shape {}x{}, expected `{}` {}x{}",
                    p.name,
                    p.value.rows(),
                    p.value.cols(),
                    def.name,
                    def.rows,
                    def.cols
                )));
            }
        }
        Ok(())
    }
}

/// Weights uniform in `±sqrt(1/fan_in)`, biases zero. Tensor `i` draws from
/// ChaCha8 stream `i` of `seed`, so the result depends only on `(spec, seed)`.
pub fn init_params(spec: &ModelSpec, seed: u64) -> Result<ParamStore> {
    spec.validate()?;
    let mut store = ParamStore::new(seed);
    for (i, def) in spec.layout().into_iter().enumerate() {
        let value = match def.fan_in {
            None => Matrix::zeros(def.rows, def.cols),
            Some(fan_in) => {
                let bound = libm::sqrt(1.0 / fan_in as f64);
                let mut r = rng::stream(seed, i as u64);
                Matrix::from_fn(def.rows, def.cols, |_, _| r.random_range(-bound..=bound))
            }
        };
        store.push(def.name, value);
    }
    Ok(store)
}

/// Per-frame class scores plus their probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub scores: Matrix,
    pub probabilities: Matrix,
    /// Per-frame argmax (multiclass only).
    pub argmax: Option<Vec<usize>>,
}

impl Prediction {
    pub fn from_scores(scores: Matrix, mode: LabelMode) -> Result<Self> {
        let probabilities = probabilities(&scores, mode)?;
        let argmax = match mode {
            LabelMode::Multiclass => Some(argmax_rows(&scores)),
            LabelMode::Multilabel => None,
        };
        Ok(Prediction {
            scores,
            probabilities,
            argmax,
        })
    }

    pub fn frames(&self) -> usize {
        self.scores.rows()
    }
}

pub fn probabilities(scores: &Matrix, mode: LabelMode) -> Result<Matrix> {
    match mode {
        LabelMode::Multiclass => activation_forward(scores, Activation::SoftmaxRows),
        LabelMode::Multilabel => activation_forward(scores, Activation::Sigmoid),
    }
}

/// First index of the row maximum.
pub fn argmax_rows(m: &Matrix) -> Vec<usize> {
    (0..m.rows())
        .map(|t| {
            let row = m.row(t);
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

#[derive(Debug, Clone)]
pub enum Cache {
    FrameMlp(frame_mlp::Cache),
    ClipConv(clip_conv::Cache),
    Gru(gru::Cache),
    Mstcn(mstcn::Cache),
}

fn check_input(spec: &ModelSpec, x: &Matrix) -> Result<()> {
    if x.cols() != spec.feature_dim {
        return Err(Error::InvalidArgument(format!(
            "feature dimension mismatch: model expects D={}, input has {} columns",
            spec.feature_dim,
            x.cols()
        )));
    }
    if x.rows() == 0 {
        return Err(Error::InvalidArgument("input sequence has no frames".into()));
    }
    Ok(())
}

/// Runs the model and keeps what the backward pass needs. Returns one score
/// matrix per stage (a single one for all kinds except mstcn).
pub fn forward(params: &ParamStore, spec: &ModelSpec, x: &Matrix) -> Result<(Vec<Matrix>, Cache)> {
    check_input(spec, x)?;
    Ok(match spec.kind {
        ModelKind::FrameMlp => {
            let (s, c) = frame_mlp::forward(params, x)?;
            (vec![s], Cache::FrameMlp(c))
        }
        ModelKind::ClipConv => {
            let (s, c) = clip_conv::forward(params, spec, x)?;
            (vec![s], Cache::ClipConv(c))
        }
        ModelKind::Gru => {
            let (s, c) = gru::forward(params, spec, x)?;
            (vec![s], Cache::Gru(c))
        }
        ModelKind::Mstcn => {
            let (s, c) = mstcn::forward(params, spec, x)?;
            (s, Cache::Mstcn(c))
        }
    })
}

/// Accumulates parameter gradients for the given per-stage score gradients.
pub fn backward(params: &mut ParamStore, spec: &ModelSpec, cache: &Cache, d_scores: &[Matrix]) -> Result<()> {
    let single = |d: &[Matrix]| -> Result<()> {
        if d.len() != 1 {
            return Err(Error::InvalidArgument(format!("expected 1 score gradient, got {}", d.len())));
        }
        Ok(())
    };
    match cache {
        Cache::FrameMlp(c) => {
            single(d_scores)?;
            frame_mlp::backward(params, c, &d_scores[0])
        }
        Cache::ClipConv(c) => {
            single(d_scores)?;
            clip_conv::backward(params, spec, c, &d_scores[0])
        }
        Cache::Gru(c) => {
            single(d_scores)?;
            gru::backward(params, spec, c, &d_scores[0])
        }
        Cache::Mstcn(c) => mstcn::backward(params, spec, c, d_scores),
    }
}

/// Backward through `x·W + b` with `W`, `b` at store indices `w`, `b`.
/// Accumulates both gradients and returns `dX` when `need_dx`.
pub(crate) fn linear_back(
    params: &mut ParamStore,
    w: usize,
    b: usize,
    x: &Matrix,
    dy: &Matrix,
    need_dx: bool,
) -> Result<Option<Matrix>> {
    x.matmul_tn_acc(dy, params.grad_mut(w))?;
    let sums = dy.col_sums();
    for (g, s) in params.grad_mut(b).row_mut(0).iter_mut().zip(sums) {
        *g += s;
    }
    if need_dx {
        Ok(Some(dy.matmul_nt(params.value(w))?))
    } else {
        Ok(None)
    }
}

/// Masks `d` where the relu output `y` is not positive.
pub(crate) fn relu_back_inplace(d: &mut Matrix, y: &Matrix) {
    for (g, &h) in d.as_mut_slice().iter_mut().zip(y.as_slice()) {
        if h <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Pure inference: final-stage prediction, no state mutation.
pub fn predict(params: &ParamStore, spec: &ModelSpec, x: &Matrix) -> Result<Prediction> {
    let (mut stages, _) = forward(params, spec, x)?;
    let last = stages.pop().expect("at least one stage");
    Prediction::from_scores(last, spec.label_mode)
}

pub mod probe;
