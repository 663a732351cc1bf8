//! Stacked GRU with a per-frame linear head, trained by backpropagation
//! through time.
//!
//! Per layer and step, with `h_0 = 0`:
//!
//! ```text
//! z_t = σ(x_t·W_z + h_{t-1}·U_z + b_z)
//! r_t = σ(x_t·W_r + h_{t-1}·U_r + b_r)
//! n_t = tanh(x_t·W_h + (r_t ⊙ h_{t-1})·U_h + b_h)
//! h_t = (1 - z_t) ⊙ h_{t-1} + z_t ⊙ n_t
//! ```

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::Result;
use crate::matrix::{outer_acc, vec_mat_acc, vec_mat_t_acc, Matrix};
use crate::model::{linear_back, ModelSpec, ParamStore};
use crate::ops::{linear_forward, sigmoid};

#[derive(Debug, Clone, Copy)]
struct LayerIdx {
    w: [usize; 3],
    u: [usize; 3],
    b: [usize; 3],
}

const Z: usize = 0;
const R: usize = 1;
const N: usize = 2;

fn layer_idx(params: &ParamStore, l: usize) -> Result<LayerIdx> {
    let mut idx = LayerIdx {
        w: [0; 3],
        u: [0; 3],
        b: [0; 3],
    };
    for (g, gate) in ["z", "r", "h"].iter().enumerate() {
        idx.w[g] = params.require(&format!("gru.l{l}.w_{gate}"))?;
        idx.u[g] = params.require(&format!("gru.l{l}.u_{gate}"))?;
        idx.b[g] = params.require(&format!("gru.l{l}.b_{gate}"))?;
    }
    Ok(idx)
}

#[derive(Debug, Clone)]
struct LayerCache {
    input: Matrix,
    z: Matrix,
    r: Matrix,
    n: Matrix,
    /// Row `t` is `h_t`; `h_{-1}` is implicit zero.
    h: Matrix,
}

#[derive(Debug, Clone)]
pub struct Cache {
    layers: Vec<LayerCache>,
}

fn layer_forward(params: &ParamStore, idx: &LayerIdx, input: &Matrix, hidden: usize) -> Result<LayerCache> {
    let t_len = input.rows();
    let px: Vec<Matrix> = (0..3)
        .map(|g| linear_forward(input, params.value(idx.w[g]), params.value(idx.b[g]).row(0)))
        .collect::<Result<_>>()?;
    let (uz, ur, un) = (params.value(idx.u[Z]), params.value(idx.u[R]), params.value(idx.u[N]));
    let mut z = Matrix::zeros(t_len, hidden);
    let mut r = Matrix::zeros(t_len, hidden);
    let mut n = Matrix::zeros(t_len, hidden);
    let mut h = Matrix::zeros(t_len, hidden);
    let zero = vec![0.0; hidden];
    let mut az = vec![0.0; hidden];
    let mut ar = vec![0.0; hidden];
    let mut an = vec![0.0; hidden];
    let mut rh = vec![0.0; hidden];
    for t in 0..t_len {
        let h_prev: Vec<f64> = if t == 0 { zero.clone() } else { h.row(t - 1).to_vec() };
        az.copy_from_slice(px[Z].row(t));
        ar.copy_from_slice(px[R].row(t));
        an.copy_from_slice(px[N].row(t));
        vec_mat_acc(&h_prev, uz, &mut az);
        vec_mat_acc(&h_prev, ur, &mut ar);
        for j in 0..hidden {
            z[(t, j)] = sigmoid(az[j]);
            r[(t, j)] = sigmoid(ar[j]);
            rh[j] = r[(t, j)] * h_prev[j];
        }
        vec_mat_acc(&rh, un, &mut an);
        for j in 0..hidden {
            let nj = libm::tanh(an[j]);
            n[(t, j)] = nj;
            let zj = z[(t, j)];
            h[(t, j)] = (1.0 - zj) * h_prev[j] + zj * nj;
        }
    }
    Ok(LayerCache {
        input: input.clone(),
        z,
        r,
        n,
        h,
    })
}

pub fn forward(params: &ParamStore, spec: &ModelSpec, x: &Matrix) -> Result<(Matrix, Cache)> {
    let mut layers = Vec::with_capacity(spec.gru_layers);
    let mut input = x.clone();
    for l in 0..spec.gru_layers {
        let idx = layer_idx(params, l)?;
        let cache = layer_forward(params, &idx, &input, spec.gru_hidden)?;
        input = cache.h.clone();
        layers.push(cache);
    }
    let w = params.require("head.w")?;
    let b = params.require("head.b")?;
    let scores = linear_forward(&input, params.value(w), params.value(b).row(0))?;
    Ok((scores, Cache { layers }))
}

/// BPTT through one layer given `dH` (gradient w.r.t. every `h_t` from
/// above). Accumulates parameter gradients and returns the gradient w.r.t.
/// the layer input.
fn layer_backward(
    params: &mut ParamStore,
    idx: &LayerIdx,
    cache: &LayerCache,
    d_h_above: &Matrix,
    need_dx: bool,
) -> Result<Option<Matrix>> {
    let t_len = cache.h.rows();
    let hidden = cache.h.cols();
    let uz = params.value(idx.u[Z]).clone();
    let ur = params.value(idx.u[R]).clone();
    let un = params.value(idx.u[N]).clone();
    let mut du = [
        Matrix::zeros(hidden, hidden),
        Matrix::zeros(hidden, hidden),
        Matrix::zeros(hidden, hidden),
    ];
    let mut da = [
        Matrix::zeros(t_len, hidden),
        Matrix::zeros(t_len, hidden),
        Matrix::zeros(t_len, hidden),
    ];
    let zero = vec![0.0; hidden];
    let mut carry = vec![0.0; hidden];
    let mut dh = vec![0.0; hidden];
    let mut d_prev = vec![0.0; hidden];
    let mut d_rh = vec![0.0; hidden];
    let mut rh = vec![0.0; hidden];
    let mut dz = vec![0.0; hidden];
    let mut dr = vec![0.0; hidden];
    let mut dn = vec![0.0; hidden];
    for t in (0..t_len).rev() {
        let h_prev: &[f64] = if t == 0 { &zero } else { cache.h.row(t - 1) };
        for j in 0..hidden {
            dh[j] = d_h_above[(t, j)] + carry[j];
        }
        let (z, r, n) = (cache.z.row(t), cache.r.row(t), cache.n.row(t));
        for j in 0..hidden {
            d_prev[j] = dh[j] * (1.0 - z[j]);
            let d_n = dh[j] * z[j];
            let d_z = dh[j] * (n[j] - h_prev[j]);
            dn[j] = d_n * (1.0 - n[j] * n[j]);
            dz[j] = d_z * z[j] * (1.0 - z[j]);
            rh[j] = r[j] * h_prev[j];
        }
        // candidate path through r ⊙ h_{t-1}
        d_rh.iter_mut().for_each(|v| *v = 0.0);
        vec_mat_t_acc(&dn, &un, &mut d_rh);
        outer_acc(&rh, &dn, &mut du[N]);
        for j in 0..hidden {
            let d_r = d_rh[j] * h_prev[j];
            d_prev[j] += d_rh[j] * r[j];
            dr[j] = d_r * r[j] * (1.0 - r[j]);
        }
        vec_mat_t_acc(&dz, &uz, &mut d_prev);
        vec_mat_t_acc(&dr, &ur, &mut d_prev);
        outer_acc(h_prev, &dz, &mut du[Z]);
        outer_acc(h_prev, &dr, &mut du[R]);
        da[Z].row_mut(t).copy_from_slice(&dz);
        da[R].row_mut(t).copy_from_slice(&dr);
        da[N].row_mut(t).copy_from_slice(&dn);
        carry.copy_from_slice(&d_prev);
    }
    for g in 0..3 {
        params.grad_mut(idx.u[g]).add_assign(&du[g])?;
    }
    let mut dx: Option<Matrix> = None;
    for g in 0..3 {
        let part = linear_back(params, idx.w[g], idx.b[g], &cache.input, &da[g], need_dx)?;
        if let Some(p) = part {
            match dx.as_mut() {
                Some(acc) => acc.add_assign(&p)?,
                None => dx = Some(p),
            }
        }
    }
    Ok(dx)
}

pub fn backward(params: &mut ParamStore, spec: &ModelSpec, cache: &Cache, d_scores: &Matrix) -> Result<()> {
    let w = params.require("head.w")?;
    let b = params.require("head.b")?;
    let top = cache.layers.last().expect("at least one layer");
    let mut d_h = linear_back(params, w, b, &top.h, d_scores, true)?.expect("dx requested");
    for l in (0..spec.gru_layers).rev() {
        let idx = layer_idx(params, l)?;
        match layer_backward(params, &idx, &cache.layers[l], &d_h, l > 0)? {
            Some(d) => d_h = d,
            None => break,
        }
    }
    Ok(())
}
