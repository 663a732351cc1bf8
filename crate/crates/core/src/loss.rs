//! Frame-averaged cross-entropy and binary cross-entropy on raw scores.

use alloc::vec::Vec;

use crate::data::LabelTrack;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::ops::{sigmoid, softmax_row};

fn check_frames(scores: &Matrix, labels: &LabelTrack) -> Result<()> {
    if scores.rows() != labels.frames() || scores.cols() != labels.num_classes() {
        return Err(Error::shape(
            "loss",
            scores.shape(),
            (labels.frames(), labels.num_classes()),
        ));
    }
    if scores.rows() == 0 {
        return Err(Error::InvalidArgument("loss over zero frames".into()));
    }
    Ok(())
}

/// `-(1/T) Σ_t log softmax(s_t)[y_t]` and its gradient `(softmax - onehot)/T`.
pub fn cross_entropy(scores: &Matrix, labels: &LabelTrack) -> Result<(f64, Matrix)> {
    let ids = labels.ids().ok_or(Error::ModeMismatch {
        expected: "multiclass",
        found: "multilabel",
    })?;
    check_frames(scores, labels)?;
    labels.validate()?;
    let t_len = scores.rows() as f64;
    let mut loss = 0.0;
    let mut grad = scores.clone();
    for (t, &y) in ids.iter().enumerate() {
        let row = scores.row(t);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + libm::log(row.iter().map(|&v| libm::exp(v - max)).sum::<f64>());
        loss += lse - row[y];
        let g = grad.row_mut(t);
        softmax_row(g);
        g[y] -= 1.0;
        for v in g.iter_mut() {
            *v /= t_len;
        }
    }
    Ok((loss / t_len, grad))
}

/// Mean over `T·C` entries of the logistic loss, in the stable form
/// `max(s,0) - s·y + log(1 + e^{-|s|})`.
pub fn bce(scores: &Matrix, labels: &LabelTrack) -> Result<(f64, Matrix)> {
    let mask = labels.mask().ok_or(Error::ModeMismatch {
        expected: "multilabel",
        found: "multiclass",
    })?;
    check_frames(scores, labels)?;
    labels.validate()?;
    let n = scores.as_slice().len() as f64;
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(scores.rows(), scores.cols());
    for ((g, &s), &y) in grad.as_mut_slice().iter_mut().zip(scores.as_slice()).zip(mask) {
        let y = y as f64;
        loss += s.max(0.0) - s * y + libm::log1p(libm::exp(-s.abs()));
        *g = (sigmoid(s) - y) / n;
    }
    Ok((loss / n, grad))
}

/// Cross-entropy or BCE according to the label mode.
pub fn sequence_loss(scores: &Matrix, labels: &LabelTrack) -> Result<(f64, Matrix)> {
    match labels {
        LabelTrack::Multiclass { .. } => cross_entropy(scores, labels),
        LabelTrack::Multilabel { .. } => bce(scores, labels),
    }
}

/// Unweighted sum of the per-stage losses.
pub fn multistage_loss(stage_scores: &[Matrix], labels: &LabelTrack) -> Result<(f64, Vec<Matrix>)> {
    if stage_scores.is_empty() {
        return Err(Error::InvalidArgument("multistage loss needs at least one stage".into()));
    }
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(stage_scores.len());
    for s in stage_scores {
        let (l, g) = sequence_loss(s, labels)?;
        total += l;
        grads.push(g);
    }
    Ok((total, grads))
}
