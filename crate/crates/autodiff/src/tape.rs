//! The tape: an append-only record of primitive applications.
//!
//! Nodes are stored in creation order, which is a topological order, so a
//! backward pass is a single reverse sweep. [`Tape::backward`] computes
//! numeric gradients without touching the tape; [`Tape::grad`] records the
//! gradient computation itself, so the result can be differentiated again
//! (this is what lets a whole training loop live on one tape).

use std::collections::HashMap;
use std::rc::Rc;

use crate::error::{AutodiffError, Result};
use crate::matrix::{Matrix, PairList, SparseOperand};
use crate::op::{self, Ctx, Eager, Op};

/// Handle to a tensor on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
struct Node {
    value: Rc<Matrix>,
    op: Option<Op<Var>>,
    /// Leaf marked as a differentiation target.
    requires_grad: bool,
    /// Depends on at least one leaf that requires gradients.
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bytes: usize,
    memory_cap: Option<usize>,
}

/// Numeric gradients of one backward pass, keyed by leaf.
#[derive(Debug, Default, Clone)]
pub struct Gradients {
    map: HashMap<Var, Matrix>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.map.get(&v)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, &Matrix)> {
        self.map.iter().map(|(v, m)| (*v, m))
    }

    /// Gradient for `v`; zeros when `v` requires gradients but the output
    /// does not depend on it.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Result<Matrix> {
        let node = tape.node(v)?;
        if !node.requires_grad {
            return Err(AutodiffError::Detached(v.0));
        }
        Ok(self
            .map
            .get(&v)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(node.value.rows(), node.value.cols())))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Fails any further push once the stored values exceed `bytes`.
    pub fn with_memory_cap(bytes: usize) -> Self {
        Self {
            memory_cap: Some(bytes),
            ..Self::default()
        }
    }

    pub fn set_memory_cap(&mut self, cap: Option<usize>) {
        self.memory_cap = cap;
    }

    /// Bytes held by node values.
    pub fn memory_bytes(&self) -> usize {
        self.bytes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn node(&self, v: Var) -> Result<&Node> {
        self.nodes.get(v.0).ok_or(AutodiffError::UnknownTensor(v.0))
    }

    fn push(&mut self, node: Node) -> Result<Var> {
        let size = node.value.len() * std::mem::size_of::<f64>();
        if let Some(cap) = self.memory_cap {
            if self.bytes + size > cap {
                return Err(AutodiffError::MemoryCap {
                    cap,
                    used: self.bytes + size,
                });
            }
        }
        #[cfg(debug_assertions)]
        if !node.value.all_finite() {
            return Err(AutodiffError::NonFinite(node.op.as_ref().map_or("leaf", Op::name)));
        }
        self.bytes += size;
        self.nodes.push(node);
        Ok(Var(self.nodes.len() - 1))
    }

    fn leaf(&mut self, value: Matrix, requires_grad: bool) -> Result<Var> {
        self.push(Node {
            value: Rc::new(value),
            op: None,
            requires_grad,
            needs_grad: requires_grad,
        })
    }

    /// Leaf that gradients are taken with respect to.
    pub fn param(&mut self, value: Matrix) -> Result<Var> {
        self.leaf(value, true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&mut self, value: Matrix) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn scalar(&mut self, value: f64) -> Result<Var> {
        self.constant(Matrix::scalar(value))
    }

    /// Constant copy of `v`: same value, no gradient flows through it.
    pub fn detach(&mut self, v: Var) -> Result<Var> {
        let value = self.node(v)?.value.clone();
        self.push(Node {
            value,
            op: None,
            requires_grad: false,
            needs_grad: false,
        })
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.get(v.0).is_some_and(|n| n.requires_grad)
    }

    /// Whether `v` depends on any leaf that requires gradients.
    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes.get(v.0).is_some_and(|n| n.needs_grad)
    }

    pub fn apply(&mut self, op: Op<Var>) -> Result<Var> {
        let mut needs_grad = false;
        for v in op.inputs() {
            needs_grad |= self.node(*v)?.needs_grad;
        }
        let value = op::forward(&op.map(|v| &*self.nodes[v.0].value))?;
        self.push(Node {
            value: Rc::new(value),
            op: Some(op),
            requires_grad: false,
            needs_grad,
        })
    }

    fn check_scalar(&self, output: Var) -> Result<()> {
        let (rows, cols) = self.node(output)?.value.shape();
        if (rows, cols) != (1, 1) {
            return Err(AutodiffError::NonScalarOutput { rows, cols });
        }
        Ok(())
    }

    /// Reverse sweep computing numeric gradients for every leaf that
    /// requires them and that `output` depends on.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        self.check_scalar(output)?;
        let mut grads = Gradients::default();
        if !self.nodes[output.0].needs_grad {
            return Ok(grads);
        }
        let mut ctx = Eager;
        let mut adj: Vec<Option<Rc<Matrix>>> = vec![None; output.0 + 1];
        adj[output.0] = Some(Rc::new(Matrix::scalar(1.0)));
        for i in (0..=output.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            let Some(op) = &node.op else {
                if node.requires_grad {
                    grads.map.insert(Var(i), Rc::unwrap_or_clone(g));
                }
                continue;
            };
            let inputs: Vec<Var> = op.inputs().into_iter().copied().collect();
            let want: Vec<bool> = inputs.iter().map(|v| self.nodes[v.0].needs_grad).collect();
            let valued = op.map(|v| self.nodes[v.0].value.clone());
            let parts = op::vjp(&mut ctx, &valued, &node.value, &g, &want)?;
            for (v, part) in inputs.into_iter().zip(parts) {
                let Some(part) = part else { continue };
                adj[v.0] = Some(match adj[v.0].take() {
                    Some(acc) => ctx.accumulate(acc, part)?,
                    None => part,
                });
            }
        }
        Ok(grads)
    }

    /// Records the gradient of `output` with respect to each of `wrt` on
    /// this tape and returns the gradient tensors. Unlike [`Tape::backward`]
    /// the result is itself differentiable.
    pub fn grad(&mut self, output: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        self.check_scalar(output)?;
        for &w in wrt {
            self.node(w)?;
        }
        // Restrict the sweep to nodes lying on a path from `wrt` to `output`.
        let mut reaches = vec![false; output.0 + 1];
        for &w in wrt {
            if w.0 <= output.0 {
                reaches[w.0] = true;
            }
        }
        for i in 0..=output.0 {
            if reaches[i] {
                continue;
            }
            if let Some(op) = &self.nodes[i].op {
                reaches[i] = op.inputs().iter().any(|v| reaches[v.0]);
            }
        }
        let mut adj: Vec<Option<Var>> = vec![None; output.0 + 1];
        if reaches[output.0] {
            adj[output.0] = Some(self.scalar(1.0)?);
        }
        for i in (0..=output.0).rev() {
            let Some(g) = adj[i] else { continue };
            let Some(op) = self.nodes[i].op.clone() else {
                continue;
            };
            let inputs: Vec<Var> = op.inputs().into_iter().copied().collect();
            let want: Vec<bool> = inputs.iter().map(|v| reaches[v.0]).collect();
            let parts = op::vjp(self, &op, &Var(i), &g, &want)?;
            for (v, part) in inputs.into_iter().zip(parts) {
                let Some(part) = part else { continue };
                adj[v.0] = Some(match adj[v.0] {
                    Some(acc) => self.add(acc, part)?,
                    None => part,
                });
            }
        }
        wrt.iter()
            .map(|&w| match adj.get(w.0).copied().flatten() {
                Some(g) => Ok(g),
                None => {
                    let (r, c) = self.shape(w);
                    self.constant(Matrix::zeros(r, c))
                }
            })
            .collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        self.apply(Op::Scale(a, k))
    }

    pub fn add_const(&mut self, a: Var, k: f64) -> Result<Var> {
        self.apply(Op::AddConst(a, k))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        self.apply(Op::MatMul { a, b, ta, tb })
    }

    pub fn sparse_matmul(&mut self, x: &Rc<SparseOperand>, b: Var) -> Result<Var> {
        self.apply(Op::SparseMatMul {
            x: x.clone(),
            b,
            transposed: false,
        })
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        self.apply(Op::SumAll(x))
    }

    pub fn broadcast_scalar(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        self.apply(Op::BroadcastScalar { x, rows, cols })
    }

    pub fn sum_rows(&mut self, x: Var) -> Result<Var> {
        self.apply(Op::SumRows(x))
    }

    pub fn broadcast_rows(&mut self, x: Var, rows: usize) -> Result<Var> {
        self.apply(Op::BroadcastRows { x, rows })
    }

    pub fn sum_cols(&mut self, x: Var) -> Result<Var> {
        self.apply(Op::SumCols(x))
    }

    pub fn broadcast_cols(&mut self, x: Var, cols: usize) -> Result<Var> {
        self.apply(Op::BroadcastCols { x, cols })
    }

    pub fn sum_heads(&mut self, x: Var, heads: usize) -> Result<Var> {
        self.apply(Op::SumHeads { x, heads })
    }

    pub fn expand_heads(&mut self, x: Var, width: usize) -> Result<Var> {
        self.apply(Op::ExpandHeads { x, width })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.apply(Op::Relu(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.apply(Op::LeakyRelu(x, slope))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.apply(Op::Tanh(x))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.apply(Op::Exp(x))
    }

    pub fn powf(&mut self, x: Var, p: f64) -> Result<Var> {
        self.apply(Op::Powf(x, p))
    }

    pub fn row_softmax(&mut self, x: Var) -> Result<Var> {
        self.apply(Op::RowSoftmax(x))
    }

    pub fn row_log_softmax(&mut self, x: Var) -> Result<Var> {
        self.apply(Op::RowLogSoftmax(x))
    }

    pub fn gather_rows(&mut self, x: Var, index: &Rc<[usize]>) -> Result<Var> {
        self.apply(Op::GatherRows {
            x,
            index: index.clone(),
        })
    }

    pub fn scatter_add_rows(&mut self, x: Var, index: &Rc<[usize]>, rows: usize) -> Result<Var> {
        self.apply(Op::ScatterAddRows {
            x,
            index: index.clone(),
            rows,
        })
    }

    /// `out_i = sum_j w_ij x_j` over undirected `pairs`, one weight per pair
    /// (`w` is pairs x 1). Differentiable in both `w` and `x`.
    pub fn spmm_weighted(&mut self, pairs: &Rc<PairList>, w: Var, x: Var) -> Result<Var> {
        self.apply(Op::SpmmWeighted {
            pairs: pairs.clone(),
            w,
            x,
        })
    }

    pub fn pair_dot(&mut self, pairs: &Rc<PairList>, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::PairDot {
            pairs: pairs.clone(),
            a,
            b,
        })
    }

    pub fn edge_aggregate(
        &mut self,
        from: &Rc<[usize]>,
        to: &Rc<[usize]>,
        rows: usize,
        coef: Var,
        x: Var,
    ) -> Result<Var> {
        self.apply(Op::EdgeAggregate {
            from: from.clone(),
            to: to.clone(),
            rows,
            coef,
            x,
        })
    }

    pub fn edge_head_dot(&mut self, ia: &Rc<[usize]>, ib: &Rc<[usize]>, a: Var, b: Var, heads: usize) -> Result<Var> {
        self.apply(Op::EdgeHeadDot {
            ia: ia.clone(),
            ib: ib.clone(),
            a,
            b,
            heads,
        })
    }
}

impl Ctx for Tape {
    type T = Var;

    fn apply(&mut self, op: Op<Var>) -> Result<Var> {
        Tape::apply(self, op)
    }

    fn constant(&mut self, value: Matrix) -> Var {
        // Gradient rules only build constants the size of existing nodes;
        // bypass the cap so a backward pass cannot fail halfway on a mask.
        let size = value.len() * std::mem::size_of::<f64>();
        self.bytes += size;
        self.nodes.push(Node {
            value: Rc::new(value),
            op: None,
            requires_grad: false,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    fn value<'a>(&'a self, t: &'a Var) -> &'a Matrix {
        &self.nodes[t.0].value
    }
}
