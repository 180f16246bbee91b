//! GCN, GAT, APPNP and GPRGNN over a weighted undirected adjacency.
//!
//! Forward passes run on an [`autodiff::Tape`] and take one weight per
//! undirected pair, so the same code serves victim training (binary
//! weights), evasion (relaxed weights as parameters) and unrolled
//! poisoning (weights reached through the whole training loop).

mod checkpoint;

use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use autodiff::functional::{add_bias, dropout, entry, mul_scalar, row_scale, segment_softmax};
use autodiff::{Matrix, PairList, SparseOperand, Tape, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Gcn,
    Gat,
    Appnp,
    Gprgnn,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [
        Architecture::Gcn,
        Architecture::Gat,
        Architecture::Appnp,
        Architecture::Gprgnn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Gcn => "gcn",
            Architecture::Gat => "gat",
            Architecture::Appnp => "appnp",
            Architecture::Gprgnn => "gprgnn",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidConfig(format!("unknown architecture {s:?}")))
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub arch: Architecture,
    /// Hidden width; for GAT the concatenation of all heads.
    pub hidden: usize,
    /// GAT attention heads in the first layer.
    pub heads: usize,
    /// APPNP / GPRGNN propagation steps.
    pub hops: usize,
    /// APPNP teleport probability and GPRGNN init parameter.
    pub alpha: f64,
    /// GAT leaky-relu slope.
    pub slope: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::new(Architecture::Gcn)
    }
}

impl ModelConfig {
    pub fn new(arch: Architecture) -> Self {
        Self {
            arch,
            hidden: 64,
            heads: 8,
            hops: 10,
            alpha: 0.1,
            slope: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.hidden == 0 {
            return bad("hidden width must be positive".into());
        }
        if self.arch == Architecture::Gat && (self.heads == 0 || self.hidden % self.heads != 0) {
            return bad(format!(
                "hidden {} not divisible into {} heads",
                self.hidden, self.heads
            ));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha {} outside [0, 1]", self.alpha));
        }
        if !self.slope.is_finite() {
            return bad(format!("slope {}", self.slope));
        }
        Ok(())
    }

    /// Tensor shapes in storage order; see [`ModelParams::tensor_names`].
    pub fn shapes(&self, dims: Dims) -> Vec<(usize, usize)> {
        let (d, h, c) = (dims.features, self.hidden, dims.classes);
        match self.arch {
            Architecture::Gcn | Architecture::Appnp => vec![(d, h), (1, h), (h, c), (1, c)],
            Architecture::Gprgnn => vec![(d, h), (1, h), (h, c), (1, c), (1, self.hops + 1)],
            Architecture::Gat => vec![(d, h), (1, h), (1, h), (1, h), (h, c), (1, c), (1, c), (1, c)],
        }
    }

    pub fn tensor_names(&self) -> &'static [&'static str] {
        match self.arch {
            Architecture::Gcn | Architecture::Appnp => &["w1", "b1", "w2", "b2"],
            Architecture::Gprgnn => &["w1", "b1", "w2", "b2", "gamma"],
            Architecture::Gat => &["w1", "att_src1", "att_dst1", "b1", "w2", "att_src2", "att_dst2", "b2"],
        }
    }

    /// Whether weight decay applies to tensor `k`. The GPRGNN hop
    /// coefficients are exempt.
    pub fn decayed(&self, k: usize) -> bool {
        !(self.arch == Architecture::Gprgnn && k == 4)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub features: usize,
    pub classes: usize,
}

impl Dims {
    pub fn of(g: &Graph) -> Self {
        Self {
            features: g.feature_dim(),
            classes: g.num_classes(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    dims: Dims,
    tensors: Vec<Matrix>,
}

fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize, fan_out: usize) -> Matrix {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-limit..=limit)).collect();
    Matrix::from_vec(rows, cols, data).expect("shape matches data")
}

/// Glorot-uniform weights, zero biases, and for GPRGNN the personalized
/// PageRank coefficients `alpha (1 - alpha)^k`.
pub fn init_model(config: &ModelConfig, dims: Dims, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    if dims.features == 0 || dims.classes == 0 {
        return Err(Error::InvalidConfig(format!("invalid dims {dims:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names = config.tensor_names();
    let tensors = config
        .shapes(dims)
        .into_iter()
        .zip(names)
        .map(|((r, c), &name)| match name {
            "w1" | "w2" => glorot(&mut rng, r, c, r, c),
            n if n.starts_with("att_") => {
                let width = if n.ends_with('1') {
                    config.hidden / config.heads
                } else {
                    c
                };
                glorot(&mut rng, r, c, width, 1)
            }
            "gamma" => Matrix::from_vec(
                1,
                c,
                (0..c)
                    .map(|k| config.alpha * (1.0 - config.alpha).powi(k as i32))
                    .collect(),
            )
            .expect("shape matches data"),
            _ => Matrix::zeros(r, c),
        })
        .collect();
    Ok(ModelParams {
        config: config.clone(),
        dims,
        tensors,
    })
}

impl ModelParams {
    pub fn from_tensors(config: ModelConfig, dims: Dims, tensors: Vec<Matrix>) -> Result<Self> {
        config.validate()?;
        let shapes = config.shapes(dims);
        if shapes.len() != tensors.len() {
            return Err(Error::InvalidConfig(format!(
                "{} tensors given, {} expected",
                tensors.len(),
                shapes.len()
            )));
        }
        for ((name, shape), t) in config.tensor_names().iter().zip(&shapes).zip(&tensors) {
            if t.shape() != *shape {
                return Err(Error::InvalidConfig(format!(
                    "tensor {name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            if !t.all_finite() {
                return Err(Error::InvalidConfig(format!("tensor {name} is not finite")));
            }
        }
        Ok(Self { config, dims, tensors })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn tensors(&self) -> &[Matrix] {
        &self.tensors
    }

    pub fn tensor(&self, name: &str) -> Option<&Matrix> {
        let k = self.config.tensor_names().iter().position(|&n| n == name)?;
        Some(&self.tensors[k])
    }

    pub(crate) fn tensors_mut(&mut self) -> &mut [Matrix] {
        &mut self.tensors
    }

    /// Places the tensors on `tape`, as parameters or as constants.
    pub fn to_tape(&self, tape: &mut Tape, trainable: bool) -> Result<Vec<Var>> {
        self.tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
                .map_err(Error::from)
            })
            .collect()
    }

    /// Evaluation-mode logits for the given pair weights.
    pub fn logits(&self, input: &GraphInput, structure: &Structure, weights: &[f64]) -> Result<Matrix> {
        let mut tape = Tape::new();
        let theta = self.to_tape(&mut tape, false)?;
        let w = tape.constant(Matrix::column(weights.to_vec()))?;
        let out = forward(&mut tape, &self.config, &theta, input, structure, w, Phase::Eval)?;
        Ok(tape.value(out).clone())
    }

    /// Evaluation-mode logits on `g` with its binary adjacency.
    pub fn logits_on(&self, g: &Graph) -> Result<Matrix> {
        let input = GraphInput::new(g);
        let structure = Structure::new(g.num_nodes(), g.edges())?;
        self.logits(&input, &structure, &vec![1.0; g.num_edges()])
    }

    /// Accuracy on `nodes` of `g` (binary adjacency, eval mode).
    pub fn accuracy(&self, g: &Graph, nodes: &[usize]) -> Result<f64> {
        accuracy(&self.logits_on(g)?, g.labels(), nodes)
    }
}

/// Per-graph constant input: the (sparse) feature matrix.
#[derive(Debug, Clone)]
pub struct GraphInput {
    features: Rc<SparseOperand>,
    num_nodes: usize,
}

impl GraphInput {
    pub fn new(g: &Graph) -> Self {
        Self::from_features(g.features())
    }

    pub fn from_features(x: &Matrix) -> Self {
        Self {
            features: Rc::new(SparseOperand::from_dense(x)),
            num_nodes: x.rows(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn features(&self) -> &Rc<SparseOperand> {
        &self.features
    }
}

/// Index structure for a set of undirected pairs carrying weights: the
/// pair list for symmetric propagation plus the directed edge lists (both
/// directions and one self-loop per node) used by attention.
#[derive(Debug, Clone)]
pub struct Structure {
    num_nodes: usize,
    pairs: Rc<PairList>,
    first: Rc<[usize]>,
    second: Rc<[usize]>,
    src: Rc<[usize]>,
    dst: Rc<[usize]>,
    /// Row of the padded weight vector feeding each directed edge; self
    /// loops read the trailing constant 1.
    weight_row: Rc<[usize]>,
    pad_index: Rc<[usize]>,
}

impl Structure {
    pub fn new(num_nodes: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let list = PairList::new(num_nodes, pairs)?;
        let e = pairs.len();
        let first: Rc<[usize]> = list.first().into();
        let second: Rc<[usize]> = list.second().into();
        let mut src = Vec::with_capacity(2 * e + num_nodes);
        let mut dst = Vec::with_capacity(2 * e + num_nodes);
        let mut weight_row = Vec::with_capacity(2 * e + num_nodes);
        for (k, &(i, j)) in pairs.iter().enumerate() {
            src.extend([i, j]);
            dst.extend([j, i]);
            weight_row.extend([k, k]);
        }
        for v in 0..num_nodes {
            src.push(v);
            dst.push(v);
            weight_row.push(e);
        }
        Ok(Self {
            num_nodes,
            pairs: Rc::new(list),
            first,
            second,
            src: src.into(),
            dst: dst.into(),
            weight_row: weight_row.into(),
            pad_index: (0..e).collect::<Vec<_>>().into(),
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn pairs(&self) -> &Rc<PairList> {
        &self.pairs
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Phase {
    Train { dropout: f64, seed: u64 },
    Eval,
}

impl Phase {
    fn drop(self, tape: &mut Tape, x: Var, salt: u64) -> Result<Var> {
        match self {
            Phase::Train { dropout: rate, seed } if rate > 0.0 => {
                Ok(dropout(tape, x, rate, seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ salt)?)
            }
            _ => Ok(x),
        }
    }
}

/// Symmetric normalization `D^{-1/2} (W + I) D^{-1/2}` on the tape, with
/// `deg = 1 + sum of incident weights`.
pub struct Normalized {
    pair_weights: Var,
    self_weights: Var,
}

pub fn normalize(tape: &mut Tape, s: &Structure, weights: Var) -> Result<Normalized> {
    let n = s.num_nodes;
    let a = tape.scatter_add_rows(weights, &s.first, n)?;
    let b = tape.scatter_add_rows(weights, &s.second, n)?;
    let deg = tape.add(a, b)?;
    let deg = tape.add_const(deg, 1.0)?;
    let inv_sqrt = tape.powf(deg, -0.5)?;
    let l = tape.gather_rows(inv_sqrt, &s.first)?;
    let r = tape.gather_rows(inv_sqrt, &s.second)?;
    let pw = tape.mul(weights, l)?;
    let pair_weights = tape.mul(pw, r)?;
    let self_weights = tape.powf(deg, -1.0)?;
    Ok(Normalized {
        pair_weights,
        self_weights,
    })
}

/// `Â h` for a normalized adjacency.
pub fn propagate(tape: &mut Tape, s: &Structure, a: &Normalized, h: Var) -> Result<Var> {
    let off = tape.spmm_weighted(&s.pairs, a.pair_weights, h)?;
    let diag = row_scale(tape, h, a.self_weights)?;
    Ok(tape.add(off, diag)?)
}

fn mlp(tape: &mut Tape, theta: &[Var], input: &GraphInput, phase: Phase) -> Result<Var> {
    let h = tape.sparse_matmul(&input.features, theta[0])?;
    let h = add_bias(tape, h, theta[1])?;
    let h = tape.relu(h)?;
    let h = phase.drop(tape, h, 1)?;
    let h = tape.matmul(h, theta[2])?;
    Ok(add_bias(tape, h, theta[3])?)
}

fn elu(tape: &mut Tape, x: Var) -> Result<Var> {
    let pos = tape.relu(x)?;
    let negx = tape.scale(x, -1.0)?;
    let neg = tape.relu(negx)?;
    let neg = tape.scale(neg, -1.0)?;
    let e = tape.exp(neg)?;
    let e = tape.add_const(e, -1.0)?;
    Ok(tape.add(pos, e)?)
}

struct Attention {
    weights: Var,
}

impl Attention {
    /// Directed edge weights: each pair weight twice, then 1 per self-loop.
    fn new(tape: &mut Tape, s: &Structure, weights: Var) -> Result<Self> {
        let e = s.num_pairs();
        let spread = tape.scatter_add_rows(weights, &s.pad_index, e + 1)?;
        let mut pad = Matrix::zeros(e + 1, 1);
        pad.set(e, 0, 1.0);
        let pad = tape.constant(pad)?;
        let padded = tape.add(spread, pad)?;
        let weights = tape.gather_rows(padded, &s.weight_row)?;
        Ok(Self { weights })
    }

    fn layer(
        &self,
        tape: &mut Tape,
        s: &Structure,
        h: Var,
        att_src: Var,
        att_dst: Var,
        heads: usize,
        slope: f64,
    ) -> Result<Var> {
        let n = s.num_nodes;
        let a_src = tape.broadcast_rows(att_src, n)?;
        let a_src = tape.mul(h, a_src)?;
        let score_src = tape.sum_heads(a_src, heads)?;
        let a_dst = tape.broadcast_rows(att_dst, n)?;
        let a_dst = tape.mul(h, a_dst)?;
        let score_dst = tape.sum_heads(a_dst, heads)?;
        let from = tape.gather_rows(score_src, &s.src)?;
        let to = tape.gather_rows(score_dst, &s.dst)?;
        let logits = tape.add(from, to)?;
        let logits = tape.leaky_relu(logits, slope)?;
        let coef = segment_softmax(tape, logits, Some(self.weights), &s.dst, n)?;
        Ok(tape.edge_aggregate(&s.src, &s.dst, n, coef, h)?)
    }
}

/// Logits `n x classes` for parameters `theta` (in storage order) and one
/// weight per pair of `structure` (`weights` is `num_pairs x 1`, entries
/// in `[0, 1]`).
pub fn forward(
    tape: &mut Tape,
    config: &ModelConfig,
    theta: &[Var],
    input: &GraphInput,
    structure: &Structure,
    weights: Var,
    phase: Phase,
) -> Result<Var> {
    let expected = config.tensor_names().len();
    if theta.len() != expected {
        return Err(Error::InvalidConfig(format!(
            "{} parameter tensors given, {expected} expected",
            theta.len()
        )));
    }
    if input.num_nodes != structure.num_nodes {
        return Err(Error::DatasetMismatch(format!(
            "{} feature rows for {} nodes",
            input.num_nodes, structure.num_nodes
        )));
    }
    if tape.shape(weights) != (structure.num_pairs(), 1) {
        return Err(Error::DatasetMismatch(format!(
            "weights of shape {:?} for {} pairs",
            tape.shape(weights),
            structure.num_pairs()
        )));
    }
    debug_assert!(
        tape.value(weights)
            .as_slice()
            .iter()
            .all(|&w| (-1e-12..=1.0 + 1e-12).contains(&w)),
        "pair weights must lie in [0, 1]"
    );
    match config.arch {
        Architecture::Gcn => {
            let a = normalize(tape, structure, weights)?;
            let h = tape.sparse_matmul(&input.features, theta[0])?;
            let h = propagate(tape, structure, &a, h)?;
            let h = add_bias(tape, h, theta[1])?;
            let h = tape.relu(h)?;
            let h = phase.drop(tape, h, 1)?;
            let h = tape.matmul(h, theta[2])?;
            let h = propagate(tape, structure, &a, h)?;
            Ok(add_bias(tape, h, theta[3])?)
        }
        Architecture::Appnp => {
            let h = mlp(tape, theta, input, phase)?;
            let a = normalize(tape, structure, weights)?;
            let teleport = tape.scale(h, config.alpha)?;
            let mut z = h;
            for _ in 0..config.hops {
                let p = propagate(tape, structure, &a, z)?;
                let p = tape.scale(p, 1.0 - config.alpha)?;
                z = tape.add(p, teleport)?;
            }
            Ok(z)
        }
        Architecture::Gprgnn => {
            let h = mlp(tape, theta, input, phase)?;
            let a = normalize(tape, structure, weights)?;
            let g0 = entry(tape, theta[4], 0, 0)?;
            let mut out = mul_scalar(tape, h, g0)?;
            let mut z = h;
            for k in 1..=config.hops {
                z = propagate(tape, structure, &a, z)?;
                let gk = entry(tape, theta[4], 0, k)?;
                let term = mul_scalar(tape, z, gk)?;
                out = tape.add(out, term)?;
            }
            Ok(out)
        }
        Architecture::Gat => {
            let att = Attention::new(tape, structure, weights)?;
            let h = tape.sparse_matmul(&input.features, theta[0])?;
            let h = att.layer(tape, structure, h, theta[1], theta[2], config.heads, config.slope)?;
            let h = add_bias(tape, h, theta[3])?;
            let h = elu(tape, h)?;
            let h = phase.drop(tape, h, 1)?;
            let h = tape.matmul(h, theta[4])?;
            let h = att.layer(tape, structure, h, theta[5], theta[6], 1, config.slope)?;
            Ok(add_bias(tape, h, theta[7])?)
        }
    }
}

/// Argmax class per row; ties go to the lowest class index.
pub fn predict(logits: &Matrix) -> Vec<usize> {
    logits.row_argmax()
}

pub fn accuracy(logits: &Matrix, labels: &[usize], nodes: &[usize]) -> Result<f64> {
    if nodes.is_empty() {
        return Err(Error::EmptyNodeSet);
    }
    let pred = predict(logits);
    let mut correct = 0usize;
    for &v in nodes {
        let (Some(&p), Some(&y)) = (pred.get(v), labels.get(v)) else {
            return Err(Error::IndexOutOfRange {
                index: v as u64,
                len: pred.len().min(labels.len()) as u64,
            });
        };
        correct += (p == y) as usize;
    }
    Ok(correct as f64 / nodes.len() as f64)
}
