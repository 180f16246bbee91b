//! Relaxed adjacency weights over the union of graph pairs and a block.

use std::rc::Rc;

use autodiff::{Matrix, Tape, Var};

use crate::error::Result;
use crate::models::Structure;

/// Merges two sorted, duplicate-free pair lists. Returns the union and,
/// for each input list, the union position of every element.
pub(crate) fn merge_pairs(a: &[(usize, usize)], b: &[(usize, usize)]) -> (Vec<(usize, usize)>, Vec<usize>, Vec<usize>) {
    let mut union = Vec::with_capacity(a.len() + b.len());
    let mut pa = Vec::with_capacity(a.len());
    let mut pb = Vec::with_capacity(b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        let take_a = j == b.len() || (i < a.len() && a[i] <= b[j]);
        let take_b = i == a.len() || (j < b.len() && b[j] <= a[i]);
        if take_a {
            pa.push(union.len());
        }
        if take_b {
            pb.push(union.len());
        }
        if take_a {
            union.push(a[i]);
            i += 1;
        } else {
            union.push(b[j]);
        }
        if take_b {
            j += 1;
        }
    }
    (union, pa, pb)
}

/// Weights `a + (1 - 2a) q` on the union of base pairs (carrying weights
/// `a`) and block pairs (carrying flip probabilities `q`). Pairs outside
/// the block keep their base weight; block pairs outside the base start
/// from weight 0.
#[derive(Debug, Clone)]
pub struct FlipLayer {
    structure: Structure,
    union: Vec<(usize, usize)>,
    base_pos: Rc<[usize]>,
    block_pos: Rc<[usize]>,
}

impl FlipLayer {
    /// Both pair lists must be sorted and duplicate-free with `i < j`.
    pub fn new(n: usize, base: &[(usize, usize)], block: &[(usize, usize)]) -> Result<Self> {
        let (union, base_pos, block_pos) = merge_pairs(base, block);
        Ok(Self {
            structure: Structure::new(n, &union)?,
            union,
            base_pos: base_pos.into(),
            block_pos: block_pos.into(),
        })
    }

    pub fn structure(&self) -> &Structure {
        &self.structure
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.union
    }

    /// Union weights on the tape from base weights and block values (both
    /// column vectors).
    pub fn weights_on_tape(&self, tape: &mut Tape, base: Var, block: Var) -> Result<Var> {
        let u = self.union.len();
        let a = tape.scatter_add_rows(base, &self.base_pos, u)?;
        let q = tape.scatter_add_rows(block, &self.block_pos, u)?;
        let coef = tape.scale(a, -2.0)?;
        let coef = tape.add_const(coef, 1.0)?;
        let flip = tape.mul(coef, q)?;
        Ok(tape.add(a, flip)?)
    }

    /// The same weights computed directly.
    pub fn weights(&self, base: &[f64], block: &[f64]) -> Vec<f64> {
        let mut a = vec![0.0; self.union.len()];
        for (&p, &w) in self.base_pos.iter().zip(base) {
            a[p] = w;
        }
        let mut out = a.clone();
        for (&p, &q) in self.block_pos.iter().zip(block) {
            out[p] = a[p] + (1.0 - 2.0 * a[p]) * q;
        }
        out
    }

    /// Chains a gradient with respect to the union weights back to the
    /// block values.
    pub fn block_gradient(&self, base: &[f64], grad_weights: &[f64]) -> Vec<f64> {
        let mut a = vec![0.0; self.union.len()];
        for (&p, &w) in self.base_pos.iter().zip(base) {
            a[p] = w;
        }
        self.block_pos
            .iter()
            .map(|&p| (1.0 - 2.0 * a[p]) * grad_weights[p])
            .collect()
    }

    pub(crate) fn base_column(&self, tape: &mut Tape, base: &[f64]) -> Result<Var> {
        Ok(tape.constant(Matrix::column(base.to_vec()))?)
    }
}

/// Relaxed weights of `graph`'s edges under block flip probabilities.
pub fn relaxed_weights(
    graph: &crate::Graph,
    block: &[(usize, usize)],
    values: &[f64],
) -> Result<(Vec<(usize, usize)>, Vec<f64>)> {
    let layer = FlipLayer::new(graph.num_nodes(), graph.edges(), block)?;
    let w = layer.weights(&vec![1.0; graph.num_edges()], values);
    Ok((layer.union, w))
}
