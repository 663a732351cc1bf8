//! Clip-level head: one causal convolution of width `n` over the feature
//! sequence, relu, then a per-frame linear layer. The score at `t` sees
//! frames `t-n+1 ..= t` only.

use crate::error::Result;
use crate::matrix::Matrix;
use crate::model::{linear_back, relu_back_inplace, ModelSpec, ParamStore};
use crate::ops::{conv1d_causal_forward, activation_forward, linear_forward, Activation, ConvShape};

#[derive(Debug, Clone)]
pub struct Cache {
    x: Matrix,
    hidden: Matrix,
}

fn conv_shape(spec: &ModelSpec) -> ConvShape {
    ConvShape {
        taps: spec.clip_window,
        c_in: spec.feature_dim,
        c_out: spec.clip_filters,
        dilation: 1,
    }
}

pub fn forward(params: &ParamStore, spec: &ModelSpec, x: &Matrix) -> Result<(Matrix, Cache)> {
    let k = params.require("clip.k")?;
    let kb = params.require("clip.b")?;
    let w = params.require("head.w")?;
    let b = params.require("head.b")?;
    let mut pre = conv1d_causal_forward(x, params.value(k), conv_shape(spec))?;
    pre.add_row_bias(params.value(kb).row(0))?;
    let hidden = activation_forward(&pre, Activation::Relu)?;
    let scores = linear_forward(&hidden, params.value(w), params.value(b).row(0))?;
    Ok((scores, Cache { x: x.clone(), hidden }))
}

pub fn backward(params: &mut ParamStore, spec: &ModelSpec, cache: &Cache, d_scores: &Matrix) -> Result<()> {
    let k = params.require("clip.k")?;
    let kb = params.require("clip.b")?;
    let w = params.require("head.w")?;
    let b = params.require("head.b")?;
    let mut d_pre = linear_back(params, w, b, &cache.hidden, d_scores, true)?.expect("dx requested");
    relu_back_inplace(&mut d_pre, &cache.hidden);
    for (g, s) in params.grad_mut(kb).row_mut(0).iter_mut().zip(d_pre.col_sums()) {
        *g += s;
    }
    let kernel = params.value(k).clone();
    crate::ops::conv1d_causal_backward_acc(&cache.x, &kernel, conv_shape(spec), &d_pre, params.grad_mut(k))?;
    Ok(())
}
