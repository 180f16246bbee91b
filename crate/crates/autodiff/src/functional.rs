//! Composite operations built from tape primitives.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{AutodiffError, Result};
use crate::matrix::Matrix;
use crate::tape::{Tape, Var};

/// `x + broadcast(bias)` for a 1 x cols bias row.
pub fn add_bias(t: &mut Tape, x: Var, bias: Var) -> Result<Var> {
    let rows = t.shape(x).0;
    let b = t.broadcast_rows(bias, rows)?;
    t.add(x, b)
}

/// Scales row `i` of `x` by `v[i]` (v is rows x 1).
pub fn row_scale(t: &mut Tape, x: Var, v: Var) -> Result<Var> {
    let cols = t.shape(x).1;
    let b = t.broadcast_cols(v, cols)?;
    t.mul(x, b)
}

/// `x * s` for a 1x1 tensor `s`.
pub fn mul_scalar(t: &mut Tape, x: Var, s: Var) -> Result<Var> {
    let (rows, cols) = t.shape(x);
    let b = t.broadcast_scalar(s, rows, cols)?;
    t.mul(x, b)
}

/// Entry `(r, c)` of `x` as a 1x1 tensor.
pub fn entry(t: &mut Tape, x: Var, r: usize, c: usize) -> Result<Var> {
    let (rows, cols) = t.shape(x);
    if r >= rows || c >= cols {
        return Err(AutodiffError::IndexOutOfRange {
            op: "entry",
            index: r * cols + c,
            len: rows * cols,
        });
    }
    let mut onehot = Matrix::zeros(rows, cols);
    onehot.set(r, c, 1.0);
    let m = t.constant(onehot)?;
    let picked = t.mul(x, m)?;
    t.sum_all(picked)
}

pub fn sum_squares(t: &mut Tape, x: Var) -> Result<Var> {
    let sq = t.mul(x, x)?;
    t.sum_all(sq)
}

/// Inverted dropout with a mask drawn from `seed`. `rate == 0` returns `x`.
pub fn dropout(t: &mut Tape, x: Var, rate: f64, seed: u64) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(AutodiffError::InvalidArgument(format!(
            "dropout rate {rate} outside [0, 1)"
        )));
    }
    if rate == 0.0 {
        return Ok(x);
    }
    let (rows, cols) = t.shape(x);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = (0..rows * cols)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect();
    let m = t.constant(Matrix::from_vec(rows, cols, mask)?)?;
    t.mul(x, m)
}

fn check_nodes(logits: &Matrix, labels: &[usize], nodes: &[usize]) -> Result<()> {
    if nodes.is_empty() {
        return Err(AutodiffError::EmptyNodeSet);
    }
    if labels.len() != logits.rows() {
        return Err(AutodiffError::ShapeMismatch {
            op: "labels",
            left: logits.shape(),
            right: (labels.len(), logits.cols()),
        });
    }
    for &n in nodes {
        if n >= logits.rows() {
            return Err(AutodiffError::IndexOutOfRange {
                op: "node_set",
                index: n,
                len: logits.rows(),
            });
        }
        if labels[n] >= logits.cols() {
            return Err(AutodiffError::IndexOutOfRange {
                op: "labels",
                index: labels[n],
                len: logits.cols(),
            });
        }
    }
    Ok(())
}

/// Mean cross-entropy of `logits` (n x C) against `labels` over `nodes`.
pub fn masked_cross_entropy(t: &mut Tape, logits: Var, labels: &[usize], nodes: &[usize]) -> Result<Var> {
    check_nodes(t.value(logits), labels, nodes)?;
    let classes = t.shape(logits).1;
    let index: Rc<[usize]> = nodes.into();
    let picked = t.gather_rows(logits, &index)?;
    let logp = t.row_log_softmax(picked)?;
    let mut onehot = Matrix::zeros(nodes.len(), classes);
    for (r, &n) in nodes.iter().enumerate() {
        onehot.set(r, labels[n], 1.0);
    }
    let y = t.constant(onehot)?;
    let ll = t.mul(logp, y)?;
    let total = t.sum_all(ll)?;
    t.scale(total, -1.0 / nodes.len() as f64)
}

/// Mean of `tanh(z_best_wrong - z_true)` over `nodes`. Larger means more
/// nodes pushed across the decision boundary.
pub fn tanh_margin(t: &mut Tape, logits: Var, labels: &[usize], nodes: &[usize]) -> Result<Var> {
    check_nodes(t.value(logits), labels, nodes)?;
    let classes = t.shape(logits).1;
    if classes < 2 {
        return Err(AutodiffError::InvalidArgument(
            "margin loss needs at least two classes".into(),
        ));
    }
    let index: Rc<[usize]> = nodes.into();
    let picked = t.gather_rows(logits, &index)?;
    let mut select = Matrix::zeros(nodes.len(), classes);
    {
        let z = t.value(picked);
        for (r, &n) in nodes.iter().enumerate() {
            let truth = labels[n];
            let row = z.row(r);
            let mut best: Option<usize> = None;
            for (c, &v) in row.iter().enumerate() {
                if c != truth && best.is_none_or(|b| v > row[b]) {
                    best = Some(c);
                }
            }
            select.set(r, truth, -1.0);
            select.set(r, best.expect("at least two classes"), 1.0);
        }
    }
    let s = t.constant(select)?;
    let signed = t.mul(picked, s)?;
    let margin = t.sum_cols(signed)?;
    let squashed = t.tanh(margin)?;
    let total = t.sum_all(squashed)?;
    t.scale(total, 1.0 / nodes.len() as f64)
}

/// Softmax of edge `values` (E x H) within groups of edges sharing a
/// segment id, optionally with per-edge multiplicative `weights` (E x 1)
/// applied to the unnormalized terms:
/// `out_e = w_e exp(v_e) / sum_{f in seg(e)} w_f exp(v_f)`.
///
/// A weight of zero makes the edge contribute exactly as if it were absent.
pub fn segment_softmax(
    t: &mut Tape,
    values: Var,
    weights: Option<Var>,
    segments: &Rc<[usize]>,
    num_segments: usize,
) -> Result<Var> {
    let (edges, heads) = t.shape(values);
    if segments.len() != edges {
        return Err(AutodiffError::ShapeMismatch {
            op: "segment_softmax",
            left: (edges, heads),
            right: (segments.len(), heads),
        });
    }
    if let Some(&bad) = segments.iter().find(|&&s| s >= num_segments) {
        return Err(AutodiffError::IndexOutOfRange {
            op: "segment_softmax",
            index: bad,
            len: num_segments,
        });
    }
    // Per-segment max is a constant shift; the result does not depend on it.
    let shift = {
        let v = t.value(values);
        let mut max = Matrix::filled(num_segments, heads, f64::NEG_INFINITY);
        for (e, &s) in segments.iter().enumerate() {
            for h in 0..heads {
                if v.get(e, h) > max.get(s, h) {
                    max.set(s, h, v.get(e, h));
                }
            }
        }
        let mut per_edge = Matrix::zeros(edges, heads);
        for (e, &s) in segments.iter().enumerate() {
            for h in 0..heads {
                per_edge.set(e, h, max.get(s, h));
            }
        }
        per_edge
    };
    let shift = t.constant(shift)?;
    let centered = t.sub(values, shift)?;
    let mut terms = t.exp(centered)?;
    if let Some(w) = weights {
        if t.shape(w) != (edges, 1) {
            return Err(AutodiffError::ShapeMismatch {
                op: "segment_softmax",
                left: t.shape(w),
                right: (edges, 1),
            });
        }
        let wb = t.broadcast_cols(w, heads)?;
        terms = t.mul(terms, wb)?;
    }
    let totals = t.scatter_add_rows(terms, segments, num_segments)?;
    let inv = t.powf(totals, -1.0)?;
    let inv_e = t.gather_rows(inv, segments)?;
    t.mul(terms, inv_e)
}
