//! Differentiable kernels: affine map, dilated causal 1-D convolution and
//! the activations used by the models.
//!
//! Each kernel comes as a pair of free functions (`*_forward`, `*_backward`)
//! that the models call directly on their own caches, plus a [`DiffNode`]
//! wrapper that owns the saved inputs for standalone use.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};

/// A forward result that knows how to pull an output gradient back to its
/// inputs.
pub trait DiffNode {
    type Grads;

    fn output(&self) -> &Matrix;

    fn backward(&self, d_out: &Matrix) -> Result<Self::Grads>;
}

// ---------------------------------------------------------------------------
// linear

pub fn linear_forward(x: &Matrix, w: &Matrix, b: &[f64]) -> Result<Matrix> {
    if x.cols() != w.rows() {
        return Err(Error::shape("linear", x.shape(), w.shape()));
    }
    if b.len() != w.cols() {
        return Err(Error::shape("linear bias", w.shape(), (1, b.len())));
    }
    let mut y = x.matmul(w)?;
    y.add_row_bias(b)?;
    Ok(y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrads {
    pub dx: Matrix,
    pub dw: Matrix,
    pub db: Vec<f64>,
}

/// Accumulates `dW += xᵀ·dY`, `db += colsum(dY)` and returns `dX = dY·Wᵀ`.
pub fn linear_backward_acc(
    x: &Matrix,
    w: &Matrix,
    dy: &Matrix,
    dw: &mut Matrix,
    db: &mut [f64],
) -> Result<Matrix> {
    if dy.shape() != (x.rows(), w.cols()) {
        return Err(Error::shape("linear backward", dy.shape(), (x.rows(), w.cols())));
    }
    x.matmul_tn_acc(dy, dw)?;
    for (acc, s) in db.iter_mut().zip(dy.col_sums()) {
        *acc += s;
    }
    dy.matmul_nt(w)
}

/// Same as [`linear_backward_acc`] without computing the input gradient.
pub fn linear_backward_params_acc(
    x: &Matrix,
    dy: &Matrix,
    dw: &mut Matrix,
    db: &mut [f64],
) -> Result<()> {
    x.matmul_tn_acc(dy, dw)?;
    for (acc, s) in db.iter_mut().zip(dy.col_sums()) {
        *acc += s;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Linear {
    x: Matrix,
    w: Matrix,
    out: Matrix,
}

impl Linear {
    pub fn forward(x: &Matrix, w: &Matrix, b: &[f64]) -> Result<Self> {
        let out = linear_forward(x, w, b)?;
        Ok(Linear {
            x: x.clone(),
            w: w.clone(),
            out,
        })
    }
}

impl DiffNode for Linear {
    type Grads = LinearGrads;

    fn output(&self) -> &Matrix {
        &self.out
    }

    fn backward(&self, dy: &Matrix) -> Result<LinearGrads> {
        let mut dw = Matrix::zeros(self.w.rows(), self.w.cols());
        let mut db = vec![0.0; self.w.cols()];
        let dx = linear_backward_acc(&self.x, &self.w, dy, &mut dw, &mut db)?;
        Ok(LinearGrads { dx, dw, db })
    }
}

// ---------------------------------------------------------------------------
// causal convolution

/// Convolution taps stored as a `(taps·c_in) x c_out` matrix: row
/// `i·c_in + c` holds the weights from input channel `c` at tap `i`. Tap
/// `taps-1` reads the current frame, tap `i` reads `(taps-1-i)·dilation`
/// frames back.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub taps: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub dilation: usize,
}

impl ConvShape {
    fn check(&self, x: &Matrix, kernel: &Matrix) -> Result<()> {
        if self.taps == 0 || self.dilation == 0 {
            return Err(Error::InvalidArgument(alloc::format!(
                "conv1d_causal requires kernel size >= 1 and dilation >= 1, got k={} d={}",
                self.taps,
                self.dilation
            )));
        }
        if x.rows() == 0 {
            return Err(Error::InvalidArgument("conv1d_causal requires T >= 1".into()));
        }
        if x.cols() != self.c_in {
            return Err(Error::shape("conv1d_causal input", x.shape(), (x.rows(), self.c_in)));
        }
        if kernel.shape() != (self.taps * self.c_in, self.c_out) {
            return Err(Error::shape(
                "conv1d_causal kernel",
                kernel.shape(),
                (self.taps * self.c_in, self.c_out),
            ));
        }
        Ok(())
    }

    /// How many frames back tap `i` reads.
    #[inline]
    fn lag(&self, i: usize) -> usize {
        (self.taps - 1 - i) * self.dilation
    }
}

/// `out[t,o] = Σ_i Σ_c K[i,c,o] · x[t - (k-1-i)·d, c]` with zero rows before
/// the first frame. Accumulation runs taps ascending, then channels ascending.
pub fn conv1d_causal_forward(x: &Matrix, kernel: &Matrix, shape: ConvShape) -> Result<Matrix> {
    shape.check(x, kernel)?;
    let t_len = x.rows();
    let mut out = Matrix::zeros(t_len, shape.c_out);
    for t in 0..t_len {
        let o_row = out.row_mut(t);
        for i in 0..shape.taps {
            let lag = shape.lag(i);
            if lag > t {
                continue;
            }
            let x_row = x.row(t - lag);
            for (c, &xv) in x_row.iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                let k_row = kernel.row(i * shape.c_in + c);
                for (o, kv) in o_row.iter_mut().zip(k_row) {
                    *o += xv * kv;
                }
            }
        }
    }
    Ok(out)
}

/// Accumulates the kernel gradient into `dk` and returns the input gradient.
pub fn conv1d_causal_backward_acc(
    x: &Matrix,
    kernel: &Matrix,
    shape: ConvShape,
    dy: &Matrix,
    dk: &mut Matrix,
) -> Result<Matrix> {
    shape.check(x, kernel)?;
    if dy.shape() != (x.rows(), shape.c_out) || dk.shape() != kernel.shape() {
        return Err(Error::shape("conv1d_causal backward", dy.shape(), (x.rows(), shape.c_out)));
    }
    let t_len = x.rows();
    let mut dx = Matrix::zeros(t_len, shape.c_in);
    for i in 0..shape.taps {
        let lag = shape.lag(i);
        if lag >= t_len {
            continue;
        }
        for t in lag..t_len {
            let dy_row = dy.row(t);
            let src = t - lag;
            for c in 0..shape.c_in {
                let row = i * shape.c_in + c;
                dx[(src, c)] += dot(dy_row, kernel.row(row));
                let xv = x[(src, c)];
                if xv != 0.0 {
                    for (g, d) in dk.row_mut(row).iter_mut().zip(dy_row) {
                        *g += xv * d;
                    }
                }
            }
        }
    }
    Ok(dx)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub dx: Matrix,
    pub dk: Matrix,
}

#[derive(Debug, Clone)]
pub struct Conv1dCausal {
    x: Matrix,
    kernel: Matrix,
    shape: ConvShape,
    out: Matrix,
}

impl Conv1dCausal {
    pub fn forward(x: &Matrix, kernel: &Matrix, shape: ConvShape) -> Result<Self> {
        let out = conv1d_causal_forward(x, kernel, shape)?;
        Ok(Conv1dCausal {
            x: x.clone(),
            kernel: kernel.clone(),
            shape,
            out,
        })
    }
}

impl DiffNode for Conv1dCausal {
    type Grads = ConvGrads;

    fn output(&self) -> &Matrix {
        &self.out
    }

    fn backward(&self, dy: &Matrix) -> Result<ConvGrads> {
        let mut dk = Matrix::zeros(self.kernel.rows(), self.kernel.cols());
        let dx = conv1d_causal_backward_acc(&self.x, &self.kernel, self.shape, dy, &mut dk)?;
        Ok(ConvGrads { dx, dk })
    }
}

/// Frames of past context a causal stack of `(taps, dilation)` layers sees,
/// including the current frame.
pub fn receptive_field(layers: impl IntoIterator<Item = (usize, usize)>) -> usize {
    1 + layers
        .into_iter()
        .map(|(k, d)| (k - 1) * d)
        .sum::<usize>()
}

// ---------------------------------------------------------------------------
// activations

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
    SoftmaxRows,
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

pub fn softmax_row(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = libm::exp(*v - max);
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

pub fn activation_forward(x: &Matrix, kind: Activation) -> Result<Matrix> {
    Ok(match kind {
        Activation::Relu => x.map(|v| if v > 0.0 { v } else { 0.0 }),
        Activation::Sigmoid => x.map(sigmoid),
        Activation::Tanh => x.map(libm::tanh),
        Activation::SoftmaxRows => {
            if x.cols() == 0 {
                return Err(Error::InvalidArgument("softmax over zero columns".into()));
            }
            let mut y = x.clone();
            for r in 0..y.rows() {
                softmax_row(y.row_mut(r));
            }
            y
        }
    })
}

/// Input gradient given the forward output `y` (every supported activation's
/// derivative is expressible through its output).
pub fn activation_backward(y: &Matrix, kind: Activation, dy: &Matrix) -> Result<Matrix> {
    if y.shape() != dy.shape() {
        return Err(Error::shape("activation backward", y.shape(), dy.shape()));
    }
    let mut dx = Matrix::zeros(y.rows(), y.cols());
    match kind {
        Activation::Relu => {
            for ((g, &o), &d) in dx.as_mut_slice().iter_mut().zip(y.as_slice()).zip(dy.as_slice()) {
                *g = if o > 0.0 { d } else { 0.0 };
            }
        }
        Activation::Sigmoid => {
            for ((g, &o), &d) in dx.as_mut_slice().iter_mut().zip(y.as_slice()).zip(dy.as_slice()) {
                *g = d * o * (1.0 - o);
            }
        }
        Activation::Tanh => {
            for ((g, &o), &d) in dx.as_mut_slice().iter_mut().zip(y.as_slice()).zip(dy.as_slice()) {
                *g = d * (1.0 - o * o);
            }
        }
        Activation::SoftmaxRows => {
            for r in 0..y.rows() {
                let yr = y.row(r);
                let dr = dy.row(r);
                let inner = dot(yr, dr);
                for ((g, &o), &d) in dx.row_mut(r).iter_mut().zip(yr).zip(dr) {
                    *g = o * (d - inner);
                }
            }
        }
    }
    Ok(dx)
}

#[derive(Debug, Clone)]
pub struct ActivationNode {
    kind: Activation,
    out: Matrix,
}

impl ActivationNode {
    pub fn forward(x: &Matrix, kind: Activation) -> Result<Self> {
        Ok(ActivationNode {
            kind,
            out: activation_forward(x, kind)?,
        })
    }
}

impl DiffNode for ActivationNode {
    type Grads = Matrix;

    fn output(&self) -> &Matrix {
        &self.out
    }

    fn backward(&self, dy: &Matrix) -> Result<Matrix> {
        activation_backward(&self.out, self.kind, dy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{finite_diff_check, FdOptions};
    use crate::model::ParamStore;
    use crate::rng;
    use rand::Rng;

    fn random(rows: usize, cols: usize, rng: &mut rng::Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn linear_zero_input_passes_bias() {
        let x = Matrix::zeros(4, 3);
        let w = Matrix::from_fn(3, 2, |r, c| (r * 2 + c) as f64);
        let y = linear_forward(&x, &w, &[1.0, 2.0]).unwrap();
        for t in 0..4 {
            assert_eq!(y.row(t), &[1.0, 2.0]);
        }
    }

    #[test]
    fn linear_identity() {
        let x = Matrix::from_fn(3, 3, |r, c| (r as f64) - 0.5 * c as f64);
        let y = linear_forward(&x, &Matrix::identity(3), &[0.0; 3]).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn linear_rejects_bad_shapes() {
        let err = linear_forward(&Matrix::zeros(3, 2), &Matrix::zeros(3, 2), &[0.0; 2]).unwrap_err();
        assert!(alloc::format!("{err}").contains("3x2"));
    }

    /// Finite-difference check of `Σ R ⊙ op(params)` against the node's
    /// backward applied to `R`.
    fn check_linear(seed: u64) -> f64 {
        let mut r = rng::stream(seed, 0);
        let x = random(3, 2, &mut r);
        let w = random(2, 2, &mut r);
        let b = random(1, 2, &mut r);
        let probe = random(3, 2, &mut r);
        let node = Linear::forward(&x, &w, b.row(0)).unwrap();
        let g = node.backward(&probe).unwrap();
        let mut store = ParamStore::new(seed);
        store.push("x", x);
        store.push("w", w);
        store.push("b", b);
        *store.grad_mut(0) = g.dx;
        *store.grad_mut(1) = g.dw;
        *store.grad_mut(2) = Matrix::row_vector(&g.db);
        let report = finite_diff_check(
            &store,
            |p| {
                let y = linear_forward(p.value(0), p.value(1), p.value(2).row(0)).unwrap();
                dot(y.as_slice(), probe.as_slice())
            },
            FdOptions::elementary(),
        )
        .unwrap();
        assert!(report.pass, "{report:?}");
        report.max_rel_err
    }

    #[test]
    fn linear_gradients_match_finite_differences() {
        for seed in 0..20 {
            check_linear(seed);
        }
    }

    fn conv_shape(k: usize, cin: usize, cout: usize, d: usize) -> ConvShape {
        ConvShape {
            taps: k,
            c_in: cin,
            c_out: cout,
            dilation: d,
        }
    }

    #[test]
    fn conv_pointwise_identity() {
        let x = Matrix::from_fn(5, 3, |r, c| (r * 3 + c) as f64);
        let y = conv1d_causal_forward(&x, &Matrix::identity(3), conv_shape(1, 3, 3, 1)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv_impulse_respects_causality() {
        let mut x = Matrix::zeros(12, 1);
        x[(5, 0)] = 1.0;
        let k = Matrix::from_vec(3, 1, vec![1.0, 1.0, 1.0]).unwrap();
        let y = conv1d_causal_forward(&x, &k, conv_shape(3, 1, 1, 2)).unwrap();
        let nonzero: Vec<usize> = (0..12).filter(|&t| y[(t, 0)] != 0.0).collect();
        assert_eq!(nonzero, vec![5, 7, 9]);
    }

    #[test]
    fn conv_rejects_zero_kernel_or_dilation() {
        let x = Matrix::zeros(4, 1);
        assert!(conv1d_causal_forward(&x, &Matrix::zeros(0, 1), conv_shape(0, 1, 1, 1)).is_err());
        assert!(conv1d_causal_forward(&x, &Matrix::zeros(1, 1), conv_shape(1, 1, 1, 0)).is_err());
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        for seed in 0..20 {
            let mut r = rng::stream(seed, 1);
            let shape = conv_shape(3, 2, 2, 2);
            let x = random(8, 2, &mut r);
            let k = random(6, 2, &mut r);
            let probe = random(8, 2, &mut r);
            let node = Conv1dCausal::forward(&x, &k, shape).unwrap();
            let g = node.backward(&probe).unwrap();
            let mut store = ParamStore::new(seed);
            store.push("x", x);
            store.push("k", k);
            *store.grad_mut(0) = g.dx;
            *store.grad_mut(1) = g.dk;
            let report = finite_diff_check(
                &store,
                |p| {
                    let y = conv1d_causal_forward(p.value(0), p.value(1), shape).unwrap();
                    dot(y.as_slice(), probe.as_slice())
                },
                FdOptions::elementary(),
            )
            .unwrap();
            assert!(report.pass, "seed {seed}: {report:?}");
        }
    }

    #[test]
    fn receptive_field_closed_form() {
        let l = 15;
        let rf = receptive_field((0..l).map(|i| (3, 1usize << i)));
        assert_eq!(rf, 65535);
        assert_eq!(rf, (1 << (l + 1)) - 1);
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        let y = activation_forward(&Matrix::zeros(3, 4), Activation::Sigmoid).unwrap();
        assert!(y.as_slice().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn softmax_uniform_row() {
        let y = activation_forward(&Matrix::from_fn(2, 7, |_, _| 3.25), Activation::SoftmaxRows).unwrap();
        for &v in y.as_slice() {
            assert!((v - 1.0 / 7.0).abs() < 1e-15);
        }
    }

    #[test]
    fn activation_gradients_match_finite_differences() {
        for kind in [Activation::Tanh, Activation::Sigmoid, Activation::SoftmaxRows, Activation::Relu] {
            for seed in 0..20 {
                let mut r = rng::stream(seed, 2);
                let x = random(4, 3, &mut r);
                let probe = random(4, 3, &mut r);
                let node = ActivationNode::forward(&x, kind).unwrap();
                let mut store = ParamStore::new(seed);
                store.push("x", x);
                *store.grad_mut(0) = node.backward(&probe).unwrap();
                let report = finite_diff_check(
                    &store,
                    |p| {
                        let y = activation_forward(p.value(0), kind).unwrap();
                        dot(y.as_slice(), probe.as_slice())
                    },
                    FdOptions::elementary(),
                )
                .unwrap();
                assert!(report.pass, "{kind:?} seed {seed}: {report:?}");
            }
        }
    }

    #[test]
    fn zero_output_gradient_gives_zero_input_gradient() {
        let mut r = rng::stream(11, 0);
        let x = random(5, 3, &mut r);
        let w = random(3, 2, &mut r);
        let g = Linear::forward(&x, &w, &[0.1, 0.2]).unwrap().backward(&Matrix::zeros(5, 2)).unwrap();
        assert!(g.dx.as_slice().iter().chain(g.dw.as_slice()).chain(&g.db).all(|&v| v == 0.0));
        let k = random(6, 2, &mut r);
        let shape = conv_shape(2, 3, 2, 3);
        let g = Conv1dCausal::forward(&x, &k, shape).unwrap().backward(&Matrix::zeros(5, 2)).unwrap();
        assert!(g.dx.as_slice().iter().chain(g.dk.as_slice()).all(|&v| v == 0.0));
    }

    mod props {
        use super::*;
        use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(100))]

            #[test]
            fn conv_perturbation_only_moves_later_rows(
                t_len in 1usize..20, k in 1usize..4, d in 1usize..4, t0 in 0usize..20, seed in 0u64..1000
            ) {
                let t0 = t0 % t_len;
                let mut r = rng::stream(seed, 3);
                let shape = conv_shape(k, 2, 3, d);
                let x = random(t_len, 2, &mut r);
                let kernel = random(k * 2, 3, &mut r);
                let base = conv1d_causal_forward(&x, &kernel, shape).unwrap();
                let mut x2 = x.clone();
                x2[(t0, 0)] += 0.75;
                let moved = conv1d_causal_forward(&x2, &kernel, shape).unwrap();
                for t in 0..t0 {
                    prop_assert_eq!(base.row(t), moved.row(t));
                }
            }

            #[test]
            fn activation_ranges(seed in 0u64..10_000, rows in 1usize..6, cols in 1usize..6) {
                let mut r = rng::stream(seed, 4);
                let x = Matrix::from_fn(rows, cols, |_, _| r.random_range(-30.0..30.0));
                let sm = activation_forward(&x, Activation::SoftmaxRows).unwrap();
                for t in 0..rows {
                    let s: f64 = sm.row(t).iter().sum();
                    prop_assert!((s - 1.0).abs() < 1e-12);
                }
                let relu = activation_forward(&x, Activation::Relu).unwrap();
                prop_assert!(relu.as_slice().iter().all(|&v| v >= 0.0));
                let sig = activation_forward(&x.map(|v| v / 2.0), Activation::Sigmoid).unwrap();
                prop_assert!(sig.as_slice().iter().all(|&v| v > 0.0 && v < 1.0));
            }

            #[test]
            fn directional_derivative_matches(seed in 0u64..100_000, t_len in 1usize..7, cin in 1usize..4, cout in 1usize..4, k in 1usize..4, d in 1usize..3) {
                let mut r = rng::stream(seed, 5);
                let shape = conv_shape(k, cin, cout, d);
                let x = random(t_len, cin, &mut r);
                let kernel = random(k * cin, cout, &mut r);
                let dir_x = random(t_len, cin, &mut r);
                let dir_k = random(k * cin, cout, &mut r);
                let probe = random(t_len, cout, &mut r);
                let f = |eps: f64| {
                    let mut xp = x.clone();
                    let mut kp = kernel.clone();
                    for (a, b) in xp.as_mut_slice().iter_mut().zip(dir_x.as_slice()) { *a += eps * b; }
                    for (a, b) in kp.as_mut_slice().iter_mut().zip(dir_k.as_slice()) { *a += eps * b; }
                    dot(conv1d_causal_forward(&xp, &kp, shape).unwrap().as_slice(), probe.as_slice())
                };
                let h = 1e-5;
                let numeric = (f(h) - f(-h)) / (2.0 * h);
                let g = Conv1dCausal::forward(&x, &kernel, shape).unwrap().backward(&probe).unwrap();
                let analytic = dot(g.dx.as_slice(), dir_x.as_slice()) + dot(g.dk.as_slice(), dir_k.as_slice());
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
                prop_assert!(rel < 1e-6, "rel {}", rel);
            }
        }
    }
}
