//! Frame-level head: `relu(x·W1 + b1)·W2 + b2`, applied to every frame on
//! its own.

use crate::error::Result;
use crate::matrix::Matrix;
use crate::model::{linear_back, relu_back_inplace, ParamStore};
use crate::ops::{activation_forward, linear_forward, Activation};

#[derive(Debug, Clone)]
pub struct Cache {
    x: Matrix,
    hidden: Matrix,
}

struct Idx {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

fn idx(params: &ParamStore) -> Result<Idx> {
    Ok(Idx {
        w1: params.require("hidden.w")?,
        b1: params.require("hidden.b")?,
        w2: params.require("head.w")?,
        b2: params.require("head.b")?,
    })
}

pub fn forward(params: &ParamStore, x: &Matrix) -> Result<(Matrix, Cache)> {
    let i = idx(params)?;
    let pre = linear_forward(x, params.value(i.w1), params.value(i.b1).row(0))?;
    let hidden = activation_forward(&pre, Activation::Relu)?;
    let scores = linear_forward(&hidden, params.value(i.w2), params.value(i.b2).row(0))?;
    Ok((scores, Cache { x: x.clone(), hidden }))
}

pub fn backward(params: &mut ParamStore, cache: &Cache, d_scores: &Matrix) -> Result<()> {
    let i = idx(params)?;
    let mut d_pre = linear_back(params, i.w2, i.b2, &cache.hidden, d_scores, true)?.expect("dx requested");
    relu_back_inplace(&mut d_pre, &cache.hidden);
    linear_back(params, i.w1, i.b1, &cache.x, &d_pre, false)?;
    Ok(())
}
