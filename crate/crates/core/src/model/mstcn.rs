//! Causal multi-stage temporal convolutional network.
//!
//! A stage is a 1x1 input projection to `F` channels, `L` dilated residual
//! layers (`h += relu(conv_k,2^l(h) + b)·W + b'`) and a 1x1 projection to
//! `C` class scores. Stage `s > 0` reads the probabilities (softmax or
//! sigmoid, by label mode) of stage `s-1`. All convolutions are causal, so
//! a single stage sees `1 + (k-1)·(2^L - 1)` frames of history.

use alloc::format;
use alloc::vec::Vec;

use crate::data::LabelMode;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{linear_back, probabilities, relu_back_inplace, ModelSpec, ParamStore};
use crate::ops::{
    activation_backward, activation_forward, conv1d_causal_backward_acc, conv1d_causal_forward, linear_forward,
    receptive_field, Activation, ConvShape,
};

#[derive(Debug, Clone)]
struct LayerCache {
    /// Residual stream entering the layer.
    input: Matrix,
    /// relu output.
    act: Matrix,
}

#[derive(Debug, Clone)]
struct StageCache {
    input: Matrix,
    layers: Vec<LayerCache>,
    last: Matrix,
    /// Probabilities of this stage's scores, the next stage's input.
    probs: Option<Matrix>,
}

#[derive(Debug, Clone)]
pub struct Cache {
    stages: Vec<StageCache>,
}

struct LayerIdx {
    k: usize,
    kb: usize,
    pw: usize,
    pwb: usize,
}

struct StageIdx {
    in_w: usize,
    in_b: usize,
    layers: Vec<LayerIdx>,
    out_w: usize,
    out_b: usize,
}

fn stage_idx(params: &ParamStore, spec: &ModelSpec, s: usize) -> Result<StageIdx> {
    let layers = (0..spec.layers)
        .map(|l| {
            Ok(LayerIdx {
                k: params.require(&format!("s{s}.l{l}.dil.k"))?,
                kb: params.require(&format!("s{s}.l{l}.dil.b"))?,
                pw: params.require(&format!("s{s}.l{l}.pw.w"))?,
                pwb: params.require(&format!("s{s}.l{l}.pw.b"))?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(StageIdx {
        in_w: params.require(&format!("s{s}.in.w"))?,
        in_b: params.require(&format!("s{s}.in.b"))?,
        layers,
        out_w: params.require(&format!("s{s}.out.w"))?,
        out_b: params.require(&format!("s{s}.out.b"))?,
    })
}

fn layer_shape(spec: &ModelSpec, l: usize) -> ConvShape {
    ConvShape {
        taps: spec.kernel,
        c_in: spec.filters,
        c_out: spec.filters,
        dilation: 1usize << l,
    }
}

/// History, in frames including the current one, that one stage can see.
pub fn stage_receptive_field(spec: &ModelSpec) -> usize {
    receptive_field((0..spec.layers).map(|l| (spec.kernel, 1usize << l)))
}

fn prob_activation(mode: LabelMode) -> Activation {
    match mode {
        LabelMode::Multiclass => Activation::SoftmaxRows,
        LabelMode::Multilabel => Activation::Sigmoid,
    }
}

pub fn forward(params: &ParamStore, spec: &ModelSpec, x: &Matrix) -> Result<(Vec<Matrix>, Cache)> {
    let mut stage_scores = Vec::with_capacity(spec.stages);
    let mut stages = Vec::with_capacity(spec.stages);
    let mut input = x.clone();
    for s in 0..spec.stages {
        let idx = stage_idx(params, spec, s)?;
        let mut h = linear_forward(&input, params.value(idx.in_w), params.value(idx.in_b).row(0))?;
        let mut layers = Vec::with_capacity(spec.layers);
        for (l, li) in idx.layers.iter().enumerate() {
            let mut pre = conv1d_causal_forward(&h, params.value(li.k), layer_shape(spec, l))?;
            pre.add_row_bias(params.value(li.kb).row(0))?;
            let act = activation_forward(&pre, Activation::Relu)?;
            let delta = linear_forward(&act, params.value(li.pw), params.value(li.pwb).row(0))?;
            let mut next = h.clone();
            next.add_assign(&delta)?;
            layers.push(LayerCache { input: h, act });
            h = next;
        }
        let scores = linear_forward(&h, params.value(idx.out_w), params.value(idx.out_b).row(0))?;
        let probs = if s + 1 < spec.stages {
            Some(probabilities(&scores, spec.label_mode)?)
        } else {
            None
        };
        stages.push(StageCache {
            input: core::mem::replace(&mut input, probs.clone().unwrap_or_else(|| Matrix::zeros(0, 0))),
            layers,
            last: h,
            probs,
        });
        stage_scores.push(scores);
    }
    Ok((stage_scores, Cache { stages }))
}

pub fn backward(params: &mut ParamStore, spec: &ModelSpec, cache: &Cache, d_scores: &[Matrix]) -> Result<()> {
    if d_scores.len() != spec.stages {
        return Err(Error::InvalidArgument(format!(
            "mstcn has {} stages but {} score gradients were given",
            spec.stages,
            d_scores.len()
        )));
    }
    // Gradient arriving at the current stage's input probabilities from the
    // stage after it.
    let mut d_from_next: Option<Matrix> = None;
    for s in (0..spec.stages).rev() {
        let idx = stage_idx(params, spec, s)?;
        let sc = &cache.stages[s];
        let mut d_sc = d_scores[s].clone();
        if let (Some(d_probs), Some(probs)) = (d_from_next.take(), sc.probs.as_ref()) {
            let through = activation_backward(probs, prob_activation(spec.label_mode), &d_probs)?;
            d_sc.add_assign(&through)?;
        }
        let mut d_h = linear_back(params, idx.out_w, idx.out_b, &sc.last, &d_sc, true)?.expect("dx requested");
        for (l, li) in idx.layers.iter().enumerate().rev() {
            let lc = &sc.layers[l];
            let mut d_pre = linear_back(params, li.pw, li.pwb, &lc.act, &d_h, true)?.expect("dx requested");
            relu_back_inplace(&mut d_pre, &lc.act);
            for (g, v) in params.grad_mut(li.kb).row_mut(0).iter_mut().zip(d_pre.col_sums()) {
                *g += v;
            }
            let kernel = params.value(li.k).clone();
            let d_in = conv1d_causal_backward_acc(&lc.input, &kernel, layer_shape(spec, l), &d_pre, params.grad_mut(li.k))?;
            d_h.add_assign(&d_in)?;
        }
        d_from_next = linear_back(params, idx.in_w, idx.in_b, &sc.input, &d_h, s > 0)?;
    }
    Ok(())
}
