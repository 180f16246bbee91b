//! Victim training (eager, Adam, early stopping) and differentiable
//! unrolled training (SGD with momentum, recorded on the tape).

use autodiff::functional::{masked_cross_entropy, sum_squares};
use autodiff::{Matrix, Tape, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Splits};
use crate::models::{forward, init_model, Dims, GraphInput, ModelConfig, ModelParams, Phase, Structure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Adam,
    SgdMomentum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub optimizer: Optimizer,
    pub lr: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    /// Early-stopping patience on validation loss; `None` disables it.
    pub patience: Option<usize>,
    pub dropout: f64,
    /// Upper bound on tape memory for unrolled training.
    pub memory_cap_bytes: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::victim()
    }
}

impl TrainConfig {
    /// Deserializes a possibly partial config, taking missing fields from
    /// [`TrainConfig::unrolled`] instead of the victim defaults.
    pub fn deserialize_unrolled<'de, D>(d: D) -> std::result::Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        use serde::de::Error as _;
        let overrides = serde_json::Value::deserialize(d)?;
        let serde_json::Value::Object(overrides) = overrides else {
            return Err(D::Error::custom("unrolled training config must be an object"));
        };
        let mut merged = serde_json::to_value(Self::unrolled()).map_err(D::Error::custom)?;
        if let serde_json::Value::Object(m) = &mut merged {
            m.extend(overrides);
        }
        serde_json::from_value(merged).map_err(D::Error::custom)
    }

    pub fn victim() -> Self {
        Self {
            epochs: 200,
            optimizer: Optimizer::Adam,
            lr: 0.01,
            weight_decay: 5e-4,
            momentum: 0.9,
            patience: Some(50),
            dropout: 0.5,
            memory_cap_bytes: None,
        }
    }

    /// Unrolled surrogate training: 100 steps of SGD with momentum, no
    /// dropout, no early stopping.
    pub fn unrolled() -> Self {
        Self {
            epochs: 100,
            optimizer: Optimizer::SgdMomentum,
            lr: 0.1,
            weight_decay: 5e-4,
            momentum: 0.9,
            patience: None,
            dropout: 0.0,
            memory_cap_bytes: Some(3 << 30),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.lr));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight decay {} < 0", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if let Some(p) = self.patience {
            if p > self.epochs {
                return bad(format!("patience {p} exceeds {} epochs", self.epochs));
            }
        }
        Ok(())
    }
}

/// What a training run sees: features, structure with per-pair weights,
/// labels, and the node sets.
#[derive(Clone, Copy)]
pub struct TrainingData<'a> {
    pub input: &'a GraphInput,
    pub structure: &'a Structure,
    pub weights: &'a [f64],
    pub labels: &'a [usize],
    pub train_nodes: &'a [usize],
    pub val_nodes: &'a [usize],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub params: ModelParams,
    pub history: Vec<EpochLog>,
    /// Epoch whose parameters were returned.
    pub best_epoch: usize,
}

/// Cross-entropy on `nodes` plus `wd/2` times the squared norm of every
/// decayed tensor.
fn objective(
    tape: &mut Tape,
    model: &ModelConfig,
    theta: &[Var],
    logits: Var,
    labels: &[usize],
    nodes: &[usize],
    weight_decay: f64,
) -> Result<Var> {
    let ce = masked_cross_entropy(tape, logits, labels, nodes)?;
    if weight_decay == 0.0 {
        return Ok(ce);
    }
    let mut reg: Option<Var> = None;
    for (k, &t) in theta.iter().enumerate() {
        if model.decayed(k) {
            let s = sum_squares(tape, t)?;
            reg = Some(match reg {
                Some(r) => tape.add(r, s)?,
                None => s,
            });
        }
    }
    match reg {
        Some(r) => {
            let r = tape.scale(r, 0.5 * weight_decay)?;
            Ok(tape.add(ce, r)?)
        }
        None => Ok(ce),
    }
}

fn eval_loss(params: &ModelParams, data: &TrainingData<'_>, nodes: &[usize]) -> Result<f64> {
    let mut tape = Tape::new();
    let theta = params.to_tape(&mut tape, false)?;
    let w = tape.constant(Matrix::column(data.weights.to_vec()))?;
    let logits = forward(
        &mut tape,
        params.config(),
        &theta,
        data.input,
        data.structure,
        w,
        Phase::Eval,
    )?;
    let l = masked_cross_entropy(&mut tape, logits, data.labels, nodes)?;
    Ok(tape.value(l).item())
}

struct AdamState {
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Eager training from `init` on fixed pair weights.
pub fn fit(init: ModelParams, data: &TrainingData<'_>, cfg: &TrainConfig, seed: u64) -> Result<Trained> {
    cfg.validate()?;
    if data.train_nodes.is_empty() {
        return Err(Error::EmptyNodeSet);
    }
    let mut params = init;
    let model = params.config().clone();
    let early_stop = cfg.patience.filter(|_| !data.val_nodes.is_empty());
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best = (f64::INFINITY, 0usize, params.clone());
    let mut velocity: Option<Vec<Matrix>> = None;
    let mut adam = AdamState {
        m: params
            .tensors()
            .iter()
            .map(|t| Matrix::zeros(t.rows(), t.cols()))
            .collect(),
        v: params
            .tensors()
            .iter()
            .map(|t| Matrix::zeros(t.rows(), t.cols()))
            .collect(),
        t: 0,
    };
    for epoch in 0..cfg.epochs {
        let mut tape = Tape::new();
        let theta = params.to_tape(&mut tape, true)?;
        let w = tape.constant(Matrix::column(data.weights.to_vec()))?;
        let phase = Phase::Train {
            dropout: cfg.dropout,
            seed: seed ^ (epoch as u64).wrapping_mul(0xd134_2543_de82_ef95),
        };
        let logits = forward(&mut tape, &model, &theta, data.input, data.structure, w, phase)?;
        let loss = objective(
            &mut tape,
            &model,
            &theta,
            logits,
            data.labels,
            data.train_nodes,
            cfg.weight_decay,
        )?;
        let train_loss = tape.value(loss).item();
        if !train_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                loss: train_loss,
            });
        }
        let grads = tape.backward(loss)?;
        let grads: Vec<Matrix> = theta
            .iter()
            .map(|&t| grads.wrt(&tape, t))
            .collect::<autodiff::Result<_>>()?;
        match cfg.optimizer {
            Optimizer::SgdMomentum => {
                let v = match velocity.take() {
                    None => grads,
                    Some(mut v) => {
                        for (vk, gk) in v.iter_mut().zip(&grads) {
                            *vk = vk.map(|x| x * cfg.momentum);
                            vk.add_assign(gk);
                        }
                        v
                    }
                };
                for (p, vk) in params.tensors_mut().iter_mut().zip(&v) {
                    let step = vk.map(|x| x * cfg.lr);
                    *p = p.zip_map(&step, |a, b| a - b);
                }
                velocity = Some(v);
            }
            Optimizer::Adam => {
                adam.t += 1;
                let c1 = 1.0 - BETA1.powi(adam.t);
                let c2 = 1.0 - BETA2.powi(adam.t);
                for (k, p) in params.tensors_mut().iter_mut().enumerate() {
                    let g = grads[k].as_slice();
                    let m = adam.m[k].as_mut_slice();
                    let v = adam.v[k].as_mut_slice();
                    for (idx, x) in p.as_mut_slice().iter_mut().enumerate() {
                        m[idx] = BETA1 * m[idx] + (1.0 - BETA1) * g[idx];
                        v[idx] = BETA2 * v[idx] + (1.0 - BETA2) * g[idx] * g[idx];
                        let mhat = m[idx] / c1;
                        let vhat = v[idx] / c2;
                        *x -= cfg.lr * mhat / (vhat.sqrt() + ADAM_EPS);
                    }
                }
            }
        }
        let val_loss = match early_stop {
            Some(_) => Some(eval_loss(&params, data, data.val_nodes)?),
            None => None,
        };
        history.push(EpochLog { train_loss, val_loss });
        if let (Some(patience), Some(vl)) = (early_stop, val_loss) {
            if vl < best.0 {
                best = (vl, epoch + 1, params.clone());
            } else if epoch + 1 - best.1 >= patience {
                break;
            }
        }
    }
    if early_stop.is_some() && best.0.is_finite() {
        return Ok(Trained {
            params: best.2,
            history,
            best_epoch: best.1,
        });
    }
    Ok(Trained {
        params,
        best_epoch: history.len(),
        history,
    })
}

/// The graph a model is trained on, with maps between its node ids and
/// the full graph's.
#[derive(Debug, Clone)]
pub struct TrainingView {
    pub graph: Graph,
    /// View node id to full-graph node id.
    pub to_full: Vec<usize>,
    /// Full-graph node id to view node id.
    pub to_view: Vec<Option<usize>>,
}

impl TrainingView {
    /// The full graph in transductive mode; in inductive mode the subgraph
    /// without test nodes and their edges.
    pub fn new(g: &Graph, splits: &Splits) -> Result<Self> {
        let keep = splits.training_nodes(g.num_nodes());
        let graph = if keep.len() == g.num_nodes() {
            g.clone()
        } else {
            g.induced_subgraph(&keep)?
        };
        let mut to_view = vec![None; g.num_nodes()];
        for (k, &v) in keep.iter().enumerate() {
            to_view[v] = Some(k);
        }
        Ok(Self {
            graph,
            to_full: keep,
            to_view,
        })
    }

    pub fn is_identity(&self) -> bool {
        self.graph.num_nodes() == self.to_view.len()
    }

    /// Maps full-graph nodes into the view, failing on nodes outside it.
    pub fn map_nodes(&self, nodes: &[usize]) -> Result<Vec<usize>> {
        nodes
            .iter()
            .map(|&v| {
                self.to_view
                    .get(v)
                    .copied()
                    .flatten()
                    .ok_or(Error::InvalidConfig(format!(
                        "node {v} is not part of the training graph"
                    )))
            })
            .collect()
    }
}

/// Trains a freshly initialized model on `labeled_train`, early-stopping on
/// `validation`. In inductive mode test nodes are removed first.
pub fn train_victim(
    model: &ModelConfig,
    g: &Graph,
    splits: &Splits,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<ModelParams> {
    Ok(train_victim_logged(model, g, splits, cfg, seed)?.params)
}

pub fn train_victim_logged(
    model: &ModelConfig,
    g: &Graph,
    splits: &Splits,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Trained> {
    let view = TrainingView::new(g, splits)?;
    let train = view.map_nodes(&splits.labeled_train)?;
    let val = view.map_nodes(&splits.validation)?;
    let vg = &view.graph;
    let input = GraphInput::new(vg);
    let structure = Structure::new(vg.num_nodes(), vg.edges())?;
    let weights = vec![1.0; vg.num_edges()];
    let init = init_model(model, Dims::of(g), seed)?;
    fit(
        init,
        &TrainingData {
            input: &input,
            structure: &structure,
            weights: &weights,
            labels: vg.labels(),
            train_nodes: &train,
            val_nodes: &val,
        },
        cfg,
        seed,
    )
}

/// Runs `cfg.epochs` steps of SGD with momentum on the tape, starting from
/// `init`, and returns the final parameters as tape variables. Gradients
/// of anything computed from them reach `weights` (and the initial
/// parameters, which enter as tape parameters).
///
/// Memory grows linearly with the number of steps; `cfg.memory_cap_bytes`
/// bounds it and exceeding the cap is an error.
#[allow(clippy::too_many_arguments)]
pub fn unrolled_train(
    tape: &mut Tape,
    init: &ModelParams,
    input: &GraphInput,
    structure: &Structure,
    weights: Var,
    labels: &[usize],
    train_nodes: &[usize],
    cfg: &TrainConfig,
) -> Result<Vec<Var>> {
    check_unrolled(cfg, train_nodes)?;
    if let Some(cap) = cfg.memory_cap_bytes {
        tape.set_memory_cap(Some(cap));
    }
    let model = init.config();
    let mut theta = init.to_tape(tape, true)?;
    let mut velocity: Option<Vec<Var>> = None;
    for epoch in 0..cfg.epochs {
        let logits = forward(tape, model, &theta, input, structure, weights, Phase::Eval)?;
        let loss = objective(tape, model, &theta, logits, labels, train_nodes, cfg.weight_decay)?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::Diverged { epoch, loss: value });
        }
        let grads = tape.grad(loss, &theta)?;
        let v = match velocity.take() {
            None => grads,
            Some(v) => v
                .into_iter()
                .zip(grads)
                .map(|(vk, gk)| {
                    let s = tape.scale(vk, cfg.momentum)?;
                    tape.add(s, gk)
                })
                .collect::<autodiff::Result<Vec<_>>>()?,
        };
        theta = theta
            .iter()
            .zip(&v)
            .map(|(&p, &vk)| {
                let step = tape.scale(vk, cfg.lr)?;
                tape.sub(p, step)
            })
            .collect::<autodiff::Result<Vec<_>>>()?;
        velocity = Some(v);
    }
    Ok(theta)
}

/// Outer loss and gradients of a meta-gradient computation.
#[derive(Debug, Clone)]
pub struct MetaGradient {
    pub loss: f64,
    /// Gradient with respect to the edge weights of the training graph.
    pub weights: Vec<f64>,
    /// The trained parameters the outer loss was evaluated at.
    pub trained: ModelParams,
}

fn check_unrolled(cfg: &TrainConfig, train_nodes: &[usize]) -> Result<()> {
    cfg.validate()?;
    if cfg.optimizer != Optimizer::SgdMomentum {
        return Err(Error::InvalidConfig(
            "unrolled training supports sgd_momentum only".into(),
        ));
    }
    if cfg.dropout != 0.0 {
        return Err(Error::InvalidConfig("unrolled training runs without dropout".into()));
    }
    if train_nodes.is_empty() {
        return Err(Error::EmptyNodeSet);
    }
    Ok(())
}

/// Gradient of `outer(theta_T, w)` with respect to the edge weights `w`,
/// where `theta_T` comes from `cfg.epochs` steps of SGD with momentum on
/// the graph weighted by `w`. Gives the same result as differentiating
/// through [`unrolled_train`], but only one training step lives on a tape
/// at a time: the forward pass keeps the parameter trajectory and the
/// backward pass replays each step to pull the adjoints back through it.
///
/// `outer` receives the trained parameters and `w` as differentiable
/// leaves and returns a scalar loss. `cfg.memory_cap_bytes` bounds each
/// per-step tape.
#[allow(clippy::too_many_arguments)]
pub fn unrolled_meta_gradient<F>(
    init: &ModelParams,
    input: &GraphInput,
    structure: &Structure,
    weights: &[f64],
    labels: &[usize],
    train_nodes: &[usize],
    cfg: &TrainConfig,
    outer: F,
) -> Result<MetaGradient>
where
    F: FnOnce(&mut Tape, &[Var], Var) -> Result<Var>,
{
    check_unrolled(cfg, train_nodes)?;
    let model = init.config();
    let new_tape = || {
        let mut t = Tape::new();
        t.set_memory_cap(cfg.memory_cap_bytes);
        t
    };
    let w_value = Matrix::column(weights.to_vec());

    // Forward: trajectory[t] holds the parameters and velocity entering
    // step t.
    let mut theta: Vec<Matrix> = init.tensors().to_vec();
    let mut velocity: Vec<Matrix> = theta.iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect();
    let mut trajectory = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut tape = new_tape();
        let th: Vec<Var> = theta
            .iter()
            .map(|m| tape.param(m.clone()))
            .collect::<autodiff::Result<_>>()?;
        let w = tape.constant(w_value.clone())?;
        let logits = forward(&mut tape, model, &th, input, structure, w, Phase::Eval)?;
        let loss = objective(&mut tape, model, &th, logits, labels, train_nodes, cfg.weight_decay)?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::Diverged { epoch, loss: value });
        }
        let grads = tape.backward(loss)?;
        let mut next_theta = Vec::with_capacity(theta.len());
        let mut next_velocity = Vec::with_capacity(theta.len());
        for ((p, v), &var) in theta.iter().zip(&velocity).zip(&th) {
            let g = grads.wrt(&tape, var)?;
            let v2 = v.zip_map(&g, |a, b| cfg.momentum * a + b);
            next_theta.push(p.zip_map(&v2, |a, b| a - cfg.lr * b));
            next_velocity.push(v2);
        }
        trajectory.push((
            std::mem::replace(&mut theta, next_theta),
            std::mem::replace(&mut velocity, next_velocity),
        ));
    }

    // Outer loss at the trained parameters.
    let mut tape = new_tape();
    let th: Vec<Var> = theta
        .iter()
        .map(|m| tape.param(m.clone()))
        .collect::<autodiff::Result<_>>()?;
    let w = tape.param(w_value.clone())?;
    let loss = outer(&mut tape, &th, w)?;
    let loss_value = tape.value(loss).item();
    let grads = tape.backward(loss)?;
    let mut adj_theta: Vec<Matrix> = th
        .iter()
        .map(|&v| grads.wrt(&tape, v))
        .collect::<autodiff::Result<_>>()?;
    let mut adj_velocity: Vec<Matrix> = theta.iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect();
    let mut adj_w = grads.wrt(&tape, w)?;
    let trained = ModelParams::from_tensors(model.clone(), init.dims(), theta)?;
    drop(tape);

    // Backward: replay each step and pull (adj_theta, adj_velocity) back
    // through theta' = theta - lr * (mu * v + g(theta, w)), v' = mu * v + g.
    for (theta_t, velocity_t) in trajectory.into_iter().rev() {
        let mut tape = new_tape();
        let th: Vec<Var> = theta_t
            .into_iter()
            .map(|m| tape.param(m))
            .collect::<autodiff::Result<_>>()?;
        let vs: Vec<Var> = velocity_t
            .into_iter()
            .map(|m| tape.param(m))
            .collect::<autodiff::Result<_>>()?;
        let w = tape.param(w_value.clone())?;
        let logits = forward(&mut tape, model, &th, input, structure, w, Phase::Eval)?;
        let loss = objective(&mut tape, model, &th, logits, labels, train_nodes, cfg.weight_decay)?;
        let g = tape.grad(loss, &th)?;
        let mut seed: Option<Var> = None;
        for k in 0..th.len() {
            let s = tape.scale(vs[k], cfg.momentum)?;
            let v2 = tape.add(s, g[k])?;
            let step = tape.scale(v2, cfg.lr)?;
            let p2 = tape.sub(th[k], step)?;
            for (x, adj) in [(p2, &adj_theta[k]), (v2, &adj_velocity[k])] {
                let a = tape.constant(adj.clone())?;
                let prod = tape.mul(x, a)?;
                let term = tape.sum_all(prod)?;
                seed = Some(match seed {
                    Some(acc) => tape.add(acc, term)?,
                    None => term,
                });
            }
        }
        let seed = seed.expect("models have at least one tensor");
        let grads = tape.backward(seed)?;
        adj_theta = th
            .iter()
            .map(|&v| grads.wrt(&tape, v))
            .collect::<autodiff::Result<_>>()?;
        adj_velocity = vs
            .iter()
            .map(|&v| grads.wrt(&tape, v))
            .collect::<autodiff::Result<_>>()?;
        adj_w.add_assign(&grads.wrt(&tape, w)?);
    }
    Ok(MetaGradient {
        loss: loss_value,
        weights: adj_w.as_slice().to_vec(),
        trained,
    })
}

/// Reads the numeric values of parameters produced on a tape.
pub fn params_from_tape(tape: &Tape, like: &ModelParams, theta: &[Var]) -> Result<ModelParams> {
    ModelParams::from_tensors(
        like.config().clone(),
        like.dims(),
        theta.iter().map(|&v| tape.value(v).clone()).collect(),
    )
}
