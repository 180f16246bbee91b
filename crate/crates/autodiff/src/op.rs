//! Primitive operations, their forward kernels and vector-Jacobian products.
//!
//! Every VJP is written against [`Ctx`], so the same rule runs eagerly on
//! values or records itself on a tape. Each rule only uses primitives from
//! this file, which makes recorded gradients differentiable again.

use std::rc::Rc;

use crate::error::{AutodiffError, Result};
use crate::matrix::{Matrix, PairList, SparseOperand};

/// Primitive operation over handles of type `T`.
#[derive(Clone, Debug)]
pub enum Op<T> {
    Add(T, T),
    Sub(T, T),
    Mul(T, T),
    Scale(T, f64),
    AddConst(T, f64),
    /// `op(a) * op(b)`, `ta`/`tb` transpose the stored operands.
    MatMul {
        a: T,
        b: T,
        ta: bool,
        tb: bool,
    },
    /// Constant sparse matrix (or its transpose) times `b`.
    SparseMatMul {
        x: Rc<SparseOperand>,
        b: T,
        transposed: bool,
    },
    SumAll(T),
    BroadcastScalar {
        x: T,
        rows: usize,
        cols: usize,
    },
    /// Column sums, r x c -> 1 x c.
    SumRows(T),
    BroadcastRows {
        x: T,
        rows: usize,
    },
    /// Row sums, r x c -> r x 1.
    SumCols(T),
    BroadcastCols {
        x: T,
        cols: usize,
    },
    /// Sums each of `heads` contiguous column blocks, r x (h*f) -> r x h.
    SumHeads {
        x: T,
        heads: usize,
    },
    /// Repeats each column `width` times, r x h -> r x (h*width).
    ExpandHeads {
        x: T,
        width: usize,
    },
    Relu(T),
    LeakyRelu(T, f64),
    Tanh(T),
    Exp(T),
    Powf(T, f64),
    RowSoftmax(T),
    RowLogSoftmax(T),
    GatherRows {
        x: T,
        index: Rc<[usize]>,
    },
    ScatterAddRows {
        x: T,
        index: Rc<[usize]>,
        rows: usize,
    },
    /// Symmetric propagation: `out_i += w_ij x_j`, `out_j += w_ij x_i`.
    SpmmWeighted {
        pairs: Rc<PairList>,
        w: T,
        x: T,
    },
    /// `out_e = a_i . b_j + a_j . b_i` per pair.
    PairDot {
        pairs: Rc<PairList>,
        a: T,
        b: T,
    },
    /// Directed per-head propagation:
    /// `out[to_e, head h] += coef[e, h] * x[from_e, head h]`.
    EdgeAggregate {
        from: Rc<[usize]>,
        to: Rc<[usize]>,
        rows: usize,
        coef: T,
        x: T,
    },
    /// Per-edge, per-head dot products `a[ia_e, h] . b[ib_e, h]`.
    EdgeHeadDot {
        ia: Rc<[usize]>,
        ib: Rc<[usize]>,
        a: T,
        b: T,
        heads: usize,
    },
}

impl<T> Op<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddConst(..) => "add_const",
            Op::MatMul { .. } => "matmul",
            Op::SparseMatMul { .. } => "sparse_matmul",
            Op::SumAll(..) => "sum_all",
            Op::BroadcastScalar { .. } => "broadcast_scalar",
            Op::SumRows(..) => "sum_rows",
            Op::BroadcastRows { .. } => "broadcast_rows",
            Op::SumCols(..) => "sum_cols",
            Op::BroadcastCols { .. } => "broadcast_cols",
            Op::SumHeads { .. } => "sum_heads",
            Op::ExpandHeads { .. } => "expand_heads",
            Op::Relu(..) => "relu",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Tanh(..) => "tanh",
            Op::Exp(..) => "exp",
            Op::Powf(..) => "powf",
            Op::RowSoftmax(..) => "row_softmax",
            Op::RowLogSoftmax(..) => "row_log_softmax",
            Op::GatherRows { .. } => "gather_rows",
            Op::ScatterAddRows { .. } => "scatter_add_rows",
            Op::SpmmWeighted { .. } => "spmm_weighted",
            Op::PairDot { .. } => "pair_dot",
            Op::EdgeAggregate { .. } => "edge_aggregate",
            Op::EdgeHeadDot { .. } => "edge_head_dot",
        }
    }

    pub fn inputs(&self) -> Vec<&T> {
        match self {
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![a, b],
            Op::MatMul { a, b, .. } | Op::PairDot { a, b, .. } | Op::EdgeHeadDot { a, b, .. } => {
                vec![a, b]
            }
            Op::SpmmWeighted { w, x, .. } => vec![w, x],
            Op::EdgeAggregate { coef, x, .. } => vec![coef, x],
            Op::Scale(x, _)
            | Op::AddConst(x, _)
            | Op::SumAll(x)
            | Op::SumRows(x)
            | Op::SumCols(x)
            | Op::Relu(x)
            | Op::LeakyRelu(x, _)
            | Op::Tanh(x)
            | Op::Exp(x)
            | Op::Powf(x, _)
            | Op::RowSoftmax(x)
            | Op::RowLogSoftmax(x) => vec![x],
            Op::SparseMatMul { b, .. } => vec![b],
            Op::BroadcastScalar { x, .. }
            | Op::BroadcastRows { x, .. }
            | Op::BroadcastCols { x, .. }
            | Op::SumHeads { x, .. }
            | Op::ExpandHeads { x, .. }
            | Op::GatherRows { x, .. }
            | Op::ScatterAddRows { x, .. } => vec![x],
        }
    }

    /// Same op with every input handle mapped through `f`.
    pub fn map<'a, U>(&'a self, mut f: impl FnMut(&'a T) -> U) -> Op<U> {
        match self {
            Op::Add(a, b) => Op::Add(f(a), f(b)),
            Op::Sub(a, b) => Op::Sub(f(a), f(b)),
            Op::Mul(a, b) => Op::Mul(f(a), f(b)),
            Op::Scale(x, c) => Op::Scale(f(x), *c),
            Op::AddConst(x, c) => Op::AddConst(f(x), *c),
            Op::MatMul { a, b, ta, tb } => Op::MatMul {
                a: f(a),
                b: f(b),
                ta: *ta,
                tb: *tb,
            },
            Op::SparseMatMul { x, b, transposed } => Op::SparseMatMul {
                x: x.clone(),
                b: f(b),
                transposed: *transposed,
            },
            Op::SumAll(x) => Op::SumAll(f(x)),
            Op::BroadcastScalar { x, rows, cols } => Op::BroadcastScalar {
                x: f(x),
                rows: *rows,
                cols: *cols,
            },
            Op::SumRows(x) => Op::SumRows(f(x)),
            Op::BroadcastRows { x, rows } => Op::BroadcastRows { x: f(x), rows: *rows },
            Op::SumCols(x) => Op::SumCols(f(x)),
            Op::BroadcastCols { x, cols } => Op::BroadcastCols { x: f(x), cols: *cols },
            Op::SumHeads { x, heads } => Op::SumHeads { x: f(x), heads: *heads },
            Op::ExpandHeads { x, width } => Op::ExpandHeads { x: f(x), width: *width },
            Op::Relu(x) => Op::Relu(f(x)),
            Op::LeakyRelu(x, s) => Op::LeakyRelu(f(x), *s),
            Op::Tanh(x) => Op::Tanh(f(x)),
            Op::Exp(x) => Op::Exp(f(x)),
            Op::Powf(x, p) => Op::Powf(f(x), *p),
            Op::RowSoftmax(x) => Op::RowSoftmax(f(x)),
            Op::RowLogSoftmax(x) => Op::RowLogSoftmax(f(x)),
            Op::GatherRows { x, index } => Op::GatherRows {
                x: f(x),
                index: index.clone(),
            },
            Op::ScatterAddRows { x, index, rows } => Op::ScatterAddRows {
                x: f(x),
                index: index.clone(),
                rows: *rows,
            },
            Op::SpmmWeighted { pairs, w, x } => Op::SpmmWeighted {
                pairs: pairs.clone(),
                w: f(w),
                x: f(x),
            },
            Op::PairDot { pairs, a, b } => Op::PairDot {
                pairs: pairs.clone(),
                a: f(a),
                b: f(b),
            },
            Op::EdgeAggregate {
                from,
                to,
                rows,
                coef,
                x,
            } => Op::EdgeAggregate {
                from: from.clone(),
                to: to.clone(),
                rows: *rows,
                coef: f(coef),
                x: f(x),
            },
            Op::EdgeHeadDot { ia, ib, a, b, heads } => Op::EdgeHeadDot {
                ia: ia.clone(),
                ib: ib.clone(),
                a: f(a),
                b: f(b),
                heads: *heads,
            },
        }
    }
}

fn same_shape(op: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(AutodiffError::ShapeMismatch {
            op,
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

fn check_index(op: &'static str, index: &[usize], len: usize) -> Result<()> {
    match index.iter().find(|&&i| i >= len) {
        Some(&bad) => Err(AutodiffError::IndexOutOfRange { op, index: bad, len }),
        None => Ok(()),
    }
}

fn head_width(op: &'static str, total: usize, heads: usize) -> Result<usize> {
    if heads == 0 || total % heads != 0 {
        return Err(AutodiffError::InvalidArgument(format!(
            "{op}: {total} columns do not split into {heads} heads"
        )));
    }
    Ok(total / heads)
}

/// Forward kernel.
pub fn forward(op: &Op<&Matrix>) -> Result<Matrix> {
    let name = op.name();
    Ok(match *op {
        Op::Add(a, b) => {
            same_shape(name, a, b)?;
            a.zip_map(b, |x, y| x + y)
        }
        Op::Sub(a, b) => {
            same_shape(name, a, b)?;
            a.zip_map(b, |x, y| x - y)
        }
        Op::Mul(a, b) => {
            same_shape(name, a, b)?;
            a.zip_map(b, |x, y| x * y)
        }
        Op::Scale(x, c) => x.map(|v| v * c),
        Op::AddConst(x, c) => x.map(|v| v + c),
        Op::MatMul { a, b, ta, tb } => a.matmul_t(b, ta, tb)?,
        Op::SparseMatMul { ref x, b, transposed } => {
            if transposed {
                x.transposed.matmul(b)?
            } else {
                x.forward.matmul(b)?
            }
        }
        Op::SumAll(x) => Matrix::scalar(x.sum()),
        Op::BroadcastScalar { x, rows, cols } => {
            if !x.is_scalar() {
                return Err(AutodiffError::ShapeMismatch {
                    op: name,
                    left: x.shape(),
                    right: (1, 1),
                });
            }
            Matrix::filled(rows, cols, x.item())
        }
        Op::SumRows(x) => {
            let mut out = Matrix::zeros(1, x.cols());
            for r in 0..x.rows() {
                for (o, v) in out.as_mut_slice().iter_mut().zip(x.row(r)) {
                    *o += v;
                }
            }
            out
        }
        Op::BroadcastRows { x, rows } => {
            if x.rows() != 1 {
                return Err(AutodiffError::ShapeMismatch {
                    op: name,
                    left: x.shape(),
                    right: (1, x.cols()),
                });
            }
            let mut out = Matrix::zeros(rows, x.cols());
            for r in 0..rows {
                out.row_mut(r).copy_from_slice(x.as_slice());
            }
            out
        }
        Op::SumCols(x) => Matrix::column((0..x.rows()).map(|r| x.row(r).iter().sum()).collect()),
        Op::BroadcastCols { x, cols } => {
            if x.cols() != 1 {
                return Err(AutodiffError::ShapeMismatch {
                    op: name,
                    left: x.shape(),
                    right: (x.rows(), 1),
                });
            }
            let mut out = Matrix::zeros(x.rows(), cols);
            for r in 0..x.rows() {
                let v = x.get(r, 0);
                out.row_mut(r).iter_mut().for_each(|o| *o = v);
            }
            out
        }
        Op::SumHeads { x, heads } => {
            let width = head_width(name, x.cols(), heads)?;
            let mut out = Matrix::zeros(x.rows(), heads);
            for r in 0..x.rows() {
                let row = x.row(r);
                for h in 0..heads {
                    out.set(r, h, row[h * width..(h + 1) * width].iter().sum());
                }
            }
            out
        }
        Op::ExpandHeads { x, width } => {
            let heads = x.cols();
            let mut out = Matrix::zeros(x.rows(), heads * width);
            for r in 0..x.rows() {
                let src = x.row(r).to_vec();
                let dst = out.row_mut(r);
                for (h, v) in src.into_iter().enumerate() {
                    dst[h * width..(h + 1) * width].iter_mut().for_each(|o| *o = v);
                }
            }
            out
        }
        Op::Relu(x) => x.map(|v| v.max(0.0)),
        Op::LeakyRelu(x, s) => x.map(|v| if v > 0.0 { v } else { s * v }),
        Op::Tanh(x) => x.map(f64::tanh),
        Op::Exp(x) => x.map(f64::exp),
        Op::Powf(x, p) => x.map(|v| v.powf(p)),
        Op::RowSoftmax(x) => {
            let mut out = x.clone();
            for r in 0..out.rows() {
                let row = out.row_mut(r);
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    z += *v;
                }
                row.iter_mut().for_each(|v| *v /= z);
            }
            out
        }
        Op::RowLogSoftmax(x) => {
            let mut out = x.clone();
            for r in 0..out.rows() {
                let row = out.row_mut(r);
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                row.iter_mut().for_each(|v| *v -= lse);
            }
            out
        }
        Op::GatherRows { x, ref index } => {
            check_index(name, index, x.rows())?;
            let mut out = Matrix::zeros(index.len(), x.cols());
            for (o, &i) in index.iter().enumerate() {
                out.row_mut(o).copy_from_slice(x.row(i));
            }
            out
        }
        Op::ScatterAddRows { x, ref index, rows } => {
            if index.len() != x.rows() {
                return Err(AutodiffError::ShapeMismatch {
                    op: name,
                    left: x.shape(),
                    right: (index.len(), x.cols()),
                });
            }
            check_index(name, index, rows)?;
            let mut out = Matrix::zeros(rows, x.cols());
            for (src, &dst) in index.iter().enumerate() {
                for (o, v) in out.row_mut(dst).iter_mut().zip(x.row(src)) {
                    *o += v;
                }
            }
            out
        }
        Op::SpmmWeighted { ref pairs, w, x } => {
            if w.shape() != (pairs.len(), 1) {
                return Err(AutodiffError::ShapeMismatch {
                    op: name,
                    left: w.shape(),
                    right: (pairs.len(), 1),
                });
            }
            if x.rows() != pairs.num_nodes() {
                return Err(AutodiffError::ShapeMismatch {
                    op: name,
                    left: x.shape(),
                    right: (pairs.num_nodes(), x.cols()),
                });
            }
            let mut out = Matrix::zeros(x.rows(), x.cols());
            for (e, (i, j)) in pairs.iter().enumerate() {
                let we = w.get(e, 0);
                if we == 0.0 {
                    continue;
                }
                for c in 0..x.cols() {
                    let xi = x.get(i, c);
                    let xj = x.get(j, c);
                    let oi = out.get(i, c);
                    out.set(i, c, oi + we * xj);
                    let oj = out.get(j, c);
                    out.set(j, c, oj + we * xi);
                }
            }
            out
        }
        Op::PairDot { ref pairs, a, b } => {
            same_shape(name, a, b)?;
            if a.rows() != pairs.num_nodes() {
                return Err(AutodiffError::ShapeMismatch {
                    op: name,
                    left: a.shape(),
                    right: (pairs.num_nodes(), a.cols()),
                });
            }
            Matrix::column(
                pairs
                    .iter()
                    .map(|(i, j)| {
                        let ab: f64 = a.row(i).iter().zip(b.row(j)).map(|(p, q)| p * q).sum();
                        let ba: f64 = a.row(j).iter().zip(b.row(i)).map(|(p, q)| p * q).sum();
                        ab + ba
                    })
                    .collect(),
            )
        }
        Op::EdgeAggregate {
            ref from,
            ref to,
            rows,
            coef,
            x,
        } => {
            if from.len() != to.len() || coef.rows() != from.len() {
                return Err(AutodiffError::ShapeMismatch {
                    op: name,
                    left: coef.shape(),
                    right: (from.len(), coef.cols()),
                });
            }
            check_index(name, from, x.rows())?;
            check_index(name, to, rows)?;
            let heads = coef.cols();
            let width = head_width(name, x.cols(), heads)?;
            let mut out = Matrix::zeros(rows, x.cols());
            for e in 0..from.len() {
                let src = x.row(from[e]);
                let c = coef.row(e);
                let dst = out.row_mut(to[e]);
                for h in 0..heads {
                    let ch = c[h];
                    if ch == 0.0 {
                        continue;
                    }
                    for k in h * width..(h + 1) * width {
                        dst[k] += ch * src[k];
                    }
                }
            }
            out
        }
        Op::EdgeHeadDot {
            ref ia,
            ref ib,
            a,
            b,
            heads,
        } => {
            if a.cols() != b.cols() || ia.len() != ib.len() {
                return Err(AutodiffError::ShapeMismatch {
                    op: name,
                    left: a.shape(),
                    right: b.shape(),
                });
            }
            check_index(name, ia, a.rows())?;
            check_index(name, ib, b.rows())?;
            let width = head_width(name, a.cols(), heads)?;
            let mut out = Matrix::zeros(ia.len(), heads);
            for e in 0..ia.len() {
                let ra = a.row(ia[e]);
                let rb = b.row(ib[e]);
                for h in 0..heads {
                    let s = h * width..(h + 1) * width;
                    let d: f64 = ra[s.clone()].iter().zip(&rb[s]).map(|(p, q)| p * q).sum();
                    out.set(e, h, d);
                }
            }
            out
        }
    })
}

/// Evaluation context for VJP rules: either eager values or a recording tape.
pub trait Ctx {
    type T: Clone;
    fn apply(&mut self, op: Op<Self::T>) -> Result<Self::T>;
    fn constant(&mut self, value: Matrix) -> Self::T;
    fn value<'a>(&'a self, t: &'a Self::T) -> &'a Matrix;
    fn accumulate(&mut self, acc: Self::T, g: Self::T) -> Result<Self::T> {
        self.apply(Op::Add(acc, g))
    }
}

/// Eager context: values are computed immediately and nothing is recorded.
#[derive(Debug, Default)]
pub struct Eager;

impl Ctx for Eager {
    type T = Rc<Matrix>;

    fn apply(&mut self, op: Op<Self::T>) -> Result<Self::T> {
        forward(&op.map(|t| &**t)).map(Rc::new)
    }

    fn constant(&mut self, value: Matrix) -> Self::T {
        Rc::new(value)
    }

    fn value<'a>(&'a self, t: &'a Self::T) -> &'a Matrix {
        t
    }

    fn accumulate(&mut self, mut acc: Self::T, g: Self::T) -> Result<Self::T> {
        same_shape("accumulate", &acc, &g)?;
        Rc::make_mut(&mut acc).add_assign(&g);
        Ok(acc)
    }
}

/// Vector-Jacobian product of `op` given upstream gradient `g` of its
/// output `out`. Returns one optional gradient per entry of `op.inputs()`;
/// entries whose `want` flag is false are skipped.
pub fn vjp<C: Ctx>(c: &mut C, op: &Op<C::T>, out: &C::T, g: &C::T, want: &[bool]) -> Result<Vec<Option<C::T>>> {
    let w0 = want.first().copied().unwrap_or(false);
    let w1 = want.get(1).copied().unwrap_or(false);
    let g = g.clone();
    let grads = match op {
        Op::Add(_, _) => vec![w0.then(|| g.clone()), w1.then_some(g)],
        Op::Sub(_, _) => {
            let gb = if w1 {
                Some(c.apply(Op::Scale(g.clone(), -1.0))?)
            } else {
                None
            };
            vec![w0.then_some(g), gb]
        }
        Op::Mul(a, b) => {
            let ga = if w0 {
                Some(c.apply(Op::Mul(g.clone(), b.clone()))?)
            } else {
                None
            };
            let gb = if w1 {
                Some(c.apply(Op::Mul(g, a.clone()))?)
            } else {
                None
            };
            vec![ga, gb]
        }
        Op::Scale(_, k) => vec![Some(c.apply(Op::Scale(g, *k))?)],
        Op::AddConst(_, _) => vec![Some(g)],
        Op::MatMul { a, b, ta, tb } => {
            let ga = if w0 {
                Some(if *ta {
                    c.apply(Op::MatMul {
                        a: b.clone(),
                        b: g.clone(),
                        ta: *tb,
                        tb: true,
                    })?
                } else {
                    c.apply(Op::MatMul {
                        a: g.clone(),
                        b: b.clone(),
                        ta: false,
                        tb: !*tb,
                    })?
                })
            } else {
                None
            };
            let gb = if w1 {
                Some(if *tb {
                    c.apply(Op::MatMul {
                        a: g,
                        b: a.clone(),
                        ta: true,
                        tb: *ta,
                    })?
                } else {
                    c.apply(Op::MatMul {
                        a: a.clone(),
                        b: g,
                        ta: !*ta,
                        tb: false,
                    })?
                })
            } else {
                None
            };
            vec![ga, gb]
        }
        Op::SparseMatMul { x, transposed, .. } => vec![Some(c.apply(Op::SparseMatMul {
            x: x.clone(),
            b: g,
            transposed: !*transposed,
        })?)],
        Op::SumAll(x) => {
            let (rows, cols) = c.value(x).shape();
            vec![Some(c.apply(Op::BroadcastScalar { x: g, rows, cols })?)]
        }
        Op::BroadcastScalar { .. } => vec![Some(c.apply(Op::SumAll(g))?)],
        Op::SumRows(x) => {
            let rows = c.value(x).rows();
            vec![Some(c.apply(Op::BroadcastRows { x: g, rows })?)]
        }
        Op::BroadcastRows { .. } => vec![Some(c.apply(Op::SumRows(g))?)],
        Op::SumCols(x) => {
            let cols = c.value(x).cols();
            vec![Some(c.apply(Op::BroadcastCols { x: g, cols })?)]
        }
        Op::BroadcastCols { .. } => vec![Some(c.apply(Op::SumCols(g))?)],
        Op::SumHeads { x, heads } => {
            let width = c.value(x).cols() / heads;
            vec![Some(c.apply(Op::ExpandHeads { x: g, width })?)]
        }
        Op::ExpandHeads { x, .. } => {
            let heads = c.value(x).cols();
            vec![Some(c.apply(Op::SumHeads { x: g, heads })?)]
        }
        Op::Relu(x) => {
            let mask = c.value(x).map(|v| if v > 0.0 { 1.0 } else { 0.0 });
            let mask = c.constant(mask);
            vec![Some(c.apply(Op::Mul(g, mask))?)]
        }
        Op::LeakyRelu(x, s) => {
            let s = *s;
            let mask = c.value(x).map(|v| if v > 0.0 { 1.0 } else { s });
            let mask = c.constant(mask);
            vec![Some(c.apply(Op::Mul(g, mask))?)]
        }
        Op::Tanh(_) => {
            let sq = c.apply(Op::Mul(out.clone(), out.clone()))?;
            let neg = c.apply(Op::Scale(sq, -1.0))?;
            let d = c.apply(Op::AddConst(neg, 1.0))?;
            vec![Some(c.apply(Op::Mul(g, d))?)]
        }
        Op::Exp(_) => vec![Some(c.apply(Op::Mul(g, out.clone()))?)],
        Op::Powf(x, p) => {
            let lower = c.apply(Op::Powf(x.clone(), p - 1.0))?;
            let d = c.apply(Op::Scale(lower, *p))?;
            vec![Some(c.apply(Op::Mul(g, d))?)]
        }
        Op::RowSoftmax(_) => {
            let cols = c.value(out).cols();
            let gs = c.apply(Op::Mul(g.clone(), out.clone()))?;
            let r = c.apply(Op::SumCols(gs))?;
            let rb = c.apply(Op::BroadcastCols { x: r, cols })?;
            let centered = c.apply(Op::Sub(g, rb))?;
            vec![Some(c.apply(Op::Mul(out.clone(), centered))?)]
        }
        Op::RowLogSoftmax(x) => {
            let cols = c.value(x).cols();
            let s = c.apply(Op::RowSoftmax(x.clone()))?;
            let r = c.apply(Op::SumCols(g.clone()))?;
            let rb = c.apply(Op::BroadcastCols { x: r, cols })?;
            let sr = c.apply(Op::Mul(s, rb))?;
            vec![Some(c.apply(Op::Sub(g, sr))?)]
        }
        Op::GatherRows { x, index } => {
            let rows = c.value(x).rows();
            vec![Some(c.apply(Op::ScatterAddRows {
                x: g,
                index: index.clone(),
                rows,
            })?)]
        }
        Op::ScatterAddRows { index, .. } => vec![Some(c.apply(Op::GatherRows {
            x: g,
            index: index.clone(),
        })?)],
        Op::SpmmWeighted { pairs, w, x } => {
            let gw = if w0 {
                Some(c.apply(Op::PairDot {
                    pairs: pairs.clone(),
                    a: g.clone(),
                    b: x.clone(),
                })?)
            } else {
                None
            };
            let gx = if w1 {
                Some(c.apply(Op::SpmmWeighted {
                    pairs: pairs.clone(),
                    w: w.clone(),
                    x: g,
                })?)
            } else {
                None
            };
            vec![gw, gx]
        }
        Op::PairDot { pairs, a, b } => {
            let ga = if w0 {
                Some(c.apply(Op::SpmmWeighted {
                    pairs: pairs.clone(),
                    w: g.clone(),
                    x: b.clone(),
                })?)
            } else {
                None
            };
            let gb = if w1 {
                Some(c.apply(Op::SpmmWeighted {
                    pairs: pairs.clone(),
                    w: g,
                    x: a.clone(),
                })?)
            } else {
                None
            };
            vec![ga, gb]
        }
        Op::EdgeAggregate { from, to, coef, x, .. } => {
            let heads = c.value(coef).cols();
            let gcoef = if w0 {
                Some(c.apply(Op::EdgeHeadDot {
                    ia: to.clone(),
                    ib: from.clone(),
                    a: g.clone(),
                    b: x.clone(),
                    heads,
                })?)
            } else {
                None
            };
            let gx = if w1 {
                let rows = c.value(x).rows();
                Some(c.apply(Op::EdgeAggregate {
                    from: to.clone(),
                    to: from.clone(),
                    rows,
                    coef: coef.clone(),
                    x: g,
                })?)
            } else {
                None
            };
            vec![gcoef, gx]
        }
        Op::EdgeHeadDot { ia, ib, a, b, .. } => {
            let ga = if w0 {
                let rows = c.value(a).rows();
                Some(c.apply(Op::EdgeAggregate {
                    from: ib.clone(),
                    to: ia.clone(),
                    rows,
                    coef: g.clone(),
                    x: b.clone(),
                })?)
            } else {
                None
            };
            let gb = if w1 {
                let rows = c.value(b).rows();
                Some(c.apply(Op::EdgeAggregate {
                    from: ia.clone(),
                    to: ib.clone(),
                    rows,
                    coef: g,
                    x: a.clone(),
                })?)
            } else {
                None
            };
            vec![ga, gb]
        }
    };
    Ok(grads)
}
