//! Poisoning through unrolled surrogate training, and the symbiotic
//! attacks that follow it with an evasion stage.

use std::rc::Rc;

use autodiff::{Matrix, Tape, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::evasion::{evasion_attack, EvasionProblem};
use super::prbcd::{resample_step, sample_final, step_size, PerturbationState};
use super::relax::{merge_pairs, FlipLayer};
use super::{attack_loss, stream, AttackConfig, SymbioticFlips, Targets};
use crate::error::Result;
use crate::flips::EdgeFlipSet;
use crate::graph::{apply_flips, Graph, Splits};
use crate::models::{forward, init_model, Dims, GraphInput, ModelConfig, ModelParams, Phase, Structure};
use crate::seeds::derive_seed;
use crate::training::{fit, params_from_tape, unrolled_meta_gradient, TrainingData, TrainingView};

/// Inner evasion run inside every poisoning iteration of the joint attack.
struct InnerEvasion {
    state: PerturbationState,
    iterations: usize,
    next_t: usize,
}

/// Poisoning objective: train a surrogate on the (relaxed) training graph,
/// then score it on the target nodes of the full graph.
struct PoisonProblem<'a> {
    graph: &'a Graph,
    view: TrainingView,
    view_input: GraphInput,
    full_input: GraphInput,
    train_nodes: Vec<usize>,
    /// Full-graph edges with an endpoint outside the training graph.
    outside_edges: Vec<(usize, usize)>,
    targets: &'a Targets,
    init: ModelParams,
    cfg: &'a AttackConfig,
    retrain_seed: u64,
}

impl<'a> PoisonProblem<'a> {
    fn new(
        model: &ModelConfig,
        graph: &'a Graph,
        splits: &Splits,
        targets: &'a Targets,
        cfg: &'a AttackConfig,
        seed: u64,
    ) -> Result<Self> {
        let view = TrainingView::new(graph, splits)?;
        let train_nodes = view.map_nodes(&splits.labeled_train)?;
        let outside_edges = graph
            .edges()
            .iter()
            .copied()
            .filter(|&(i, j)| view.to_view[i].is_none() || view.to_view[j].is_none())
            .collect();
        Ok(Self {
            graph,
            view_input: GraphInput::new(&view.graph),
            full_input: GraphInput::new(graph),
            view,
            train_nodes,
            outside_edges,
            targets,
            init: init_model(model, Dims::of(graph), derive_seed(seed, stream::POISON_INIT))?,
            cfg,
            retrain_seed: derive_seed(seed, stream::POISON_RETRAIN),
        })
    }

    fn to_full(&self, pairs: &[(usize, usize)]) -> Vec<(usize, usize)> {
        pairs
            .iter()
            .map(|&(a, b)| (self.view.to_full[a], self.view.to_full[b]))
            .collect()
    }

    /// Extends training-graph weights to the full graph, where edges at
    /// held-out nodes carry weight 1.
    fn lift(&self, tape: &mut Tape, view_pairs: &[(usize, usize)], w: Var) -> Result<(Vec<(usize, usize)>, Var)> {
        if self.view.is_identity() {
            return Ok((view_pairs.to_vec(), w));
        }
        let (union, pv, pe) = merge_pairs(&self.to_full(view_pairs), &self.outside_edges);
        let pv: Rc<[usize]> = pv.into();
        let lifted = tape.scatter_add_rows(w, &pv, union.len())?;
        if pe.is_empty() {
            return Ok((union, lifted));
        }
        let pe: Rc<[usize]> = pe.into();
        let ones = tape.constant(Matrix::filled(pe.len(), 1, 1.0))?;
        let extra = tape.scatter_add_rows(ones, &pe, union.len())?;
        Ok((union, tape.add(lifted, extra)?))
    }

    fn loss_and_gradient(
        &self,
        state: &PerturbationState,
        inner: Option<&mut InnerEvasion>,
    ) -> Result<(f64, Vec<f64>)> {
        let vg = &self.view.graph;
        let n = self.graph.num_nodes();
        let layer = FlipLayer::new(vg.num_nodes(), vg.edges(), &state.pairs())?;
        let ones = vec![1.0; vg.num_edges()];
        let w_view = layer.weights(&ones, state.values());
        let outer = |tape: &mut Tape, theta: &[Var], w: Var| -> Result<Var> {
            let (mut pairs, mut w) = self.lift(tape, layer.pairs(), w)?;
            let mut structure = if self.view.is_identity() {
                layer.structure().clone()
            } else {
                Structure::new(n, &pairs)?
            };
            if let Some(inner) = inner {
                // The evaded graph enters the poisoning loss as a constant.
                let trained = params_from_tape(tape, &self.init, theta)?;
                let base_weights = tape.value(w).as_slice().to_vec();
                let problem = EvasionProblem {
                    params: &trained,
                    input: &self.full_input,
                    base_pairs: &pairs,
                    base_weights: &base_weights,
                    targets: self.targets,
                    loss: self.cfg.evasion_loss,
                };
                problem.run(&mut inner.state, inner.next_t, inner.iterations, self.cfg)?;
                inner.next_t += inner.iterations;
                let evaded = FlipLayer::new(n, &pairs, &inner.state.pairs())?;
                let q = tape.constant(Matrix::column(inner.state.values().to_vec()))?;
                w = evaded.weights_on_tape(tape, w, q)?;
                pairs = evaded.pairs().to_vec();
                structure = evaded.structure().clone();
            }
            debug_assert_eq!(pairs.len(), structure.num_pairs());
            let logits = forward(
                tape,
                self.init.config(),
                theta,
                &self.full_input,
                &structure,
                w,
                Phase::Eval,
            )?;
            attack_loss(
                tape,
                logits,
                &self.targets.labels,
                &self.targets.nodes,
                self.cfg.poisoning_loss,
            )
        };
        let meta = unrolled_meta_gradient(
            &self.init,
            &self.view_input,
            layer.structure(),
            &w_view,
            vg.labels(),
            &self.train_nodes,
            &self.cfg.unrolled,
            outer,
        )?;
        Ok((meta.loss, layer.block_gradient(&ones, &meta.weights)))
    }

    /// Retrains the surrogate (fixed seed) on the training graph with
    /// `flips` applied and scores it on the flipped full graph.
    fn discrete_loss(&self, flips: &[(usize, usize)]) -> Result<f64> {
        let poisoned = apply_flips(&self.view.graph, flips)?;
        let structure = Structure::new(poisoned.num_nodes(), poisoned.edges())?;
        let weights = vec![1.0; poisoned.num_edges()];
        let trained = fit(
            self.init.clone(),
            &TrainingData {
                input: &self.view_input,
                structure: &structure,
                weights: &weights,
                labels: poisoned.labels(),
                train_nodes: &self.train_nodes,
                val_nodes: &[],
            },
            &self.cfg.unrolled,
            self.retrain_seed,
        )?
        .params;
        let logits = if self.view.is_identity() {
            trained.logits(&self.full_input, &structure, &weights)?
        } else {
            trained.logits_on(&apply_flips(self.graph, &self.to_full(flips))?)?
        };
        let mut tape = Tape::new();
        let z = tape.constant(logits)?;
        let loss = attack_loss(
            &mut tape,
            z,
            &self.targets.labels,
            &self.targets.nodes,
            self.cfg.poisoning_loss,
        )?;
        Ok(tape.value(loss).item())
    }
}

#[allow(clippy::too_many_arguments)]
fn poison_with(
    model: &ModelConfig,
    graph: &Graph,
    splits: &Splits,
    targets: &Targets,
    budget: usize,
    inner_budget: usize,
    inner_iterations: usize,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<EdgeFlipSet> {
    cfg.validate()?;
    if budget == 0 {
        return Ok(EdgeFlipSet::empty(graph.id()));
    }
    let problem = PoisonProblem::new(model, graph, splits, targets, cfg, seed)?;
    let nv = problem.view.graph.num_nodes();
    let mut state = PerturbationState::new(
        nv,
        cfg.block_size_for(nv),
        budget,
        derive_seed(seed, stream::POISON_BLOCK),
    )?;
    let n = graph.num_nodes();
    let mut inner = if inner_iterations > 0 && inner_budget > 0 {
        Some(InnerEvasion {
            state: PerturbationState::new(
                n,
                cfg.block_size_for(n),
                inner_budget,
                derive_seed(seed, stream::INNER_BLOCK),
            )?,
            iterations: inner_iterations,
            next_t: 1,
        })
    } else {
        None
    };
    for t in 1..=cfg.iterations {
        let (_, grad) = problem.loss_and_gradient(&state, inner.as_mut())?;
        let eta = step_size(cfg.base_lr, budget, t);
        resample_step(&mut state, &grad, eta, cfg.keep_threshold, cfg.projection_tol)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, stream::POISON_FINAL));
    let flips = sample_final(
        &state,
        budget,
        cfg.final_samples,
        |f| problem.discrete_loss(f),
        &mut rng,
    )?;
    EdgeFlipSet::new(problem.to_full(&flips), graph.id())
}

/// At most `budget` flips of `graph` that increase the loss of a model
/// trained on the flipped graph. The attacker's surrogate is trained on
/// `splits.labeled_train` and scored on `targets`; in inductive mode only
/// pairs among training nodes are attacked.
pub fn poison_attack(
    model: &ModelConfig,
    graph: &Graph,
    splits: &Splits,
    targets: &Targets,
    budget: usize,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<EdgeFlipSet> {
    poison_with(model, graph, splits, targets, budget, 0, 0, cfg, seed)
}

/// The poisoning stage of the joint attack: the surrogate is scored on the
/// graph produced by `cfg.inner_iterations` evasion iterations (budget
/// `inner_budget`) run inside each poisoning iteration. The inner attack
/// is warm-started across iterations and treated as a constant.
#[allow(clippy::too_many_arguments)]
pub fn joint_poison_attack(
    model: &ModelConfig,
    graph: &Graph,
    splits: &Splits,
    targets: &Targets,
    budget: usize,
    inner_budget: usize,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<EdgeFlipSet> {
    poison_with(
        model,
        graph,
        splits,
        targets,
        budget,
        inner_budget,
        cfg.inner_iterations,
        cfg,
        seed,
    )
}

/// Evasion against a surrogate retrained on the poisoned graph.
fn evasion_stage(
    model: &ModelConfig,
    graph: &Graph,
    splits: &Splits,
    targets: &Targets,
    poison: EdgeFlipSet,
    budget: usize,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<SymbioticFlips> {
    let poisoned = poison.apply(graph)?;
    let evasion = if budget == 0 {
        EdgeFlipSet::empty(poisoned.id())
    } else {
        let surrogate = crate::training::train_victim(
            model,
            &poisoned,
            splits,
            &cfg.surrogate,
            derive_seed(seed, stream::SURROGATE),
        )?;
        evasion_attack(
            &surrogate,
            &poisoned,
            targets,
            budget,
            cfg,
            derive_seed(seed, stream::EVASION_STAGE),
        )?
    };
    Ok(SymbioticFlips { poison, evasion })
}

/// Poisoning with `floor(alpha * budget)` flips, then evasion with the
/// rest against a surrogate retrained on the poisoned graph.
pub fn sequential_attack(
    model: &ModelConfig,
    graph: &Graph,
    splits: &Splits,
    targets: &Targets,
    budget: usize,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<SymbioticFlips> {
    let (poison_budget, evasion_budget) = cfg.split_budget(budget);
    let poison = poison_attack(model, graph, splits, targets, poison_budget, cfg, seed)?;
    evasion_stage(model, graph, splits, targets, poison, evasion_budget, cfg, seed)
}

/// Like [`sequential_attack`], but the poisoning stage anticipates the
/// evasion stage through inner evasion runs. With zero inner iterations
/// it performs exactly the sequential attack.
pub fn joint_attack(
    model: &ModelConfig,
    graph: &Graph,
    splits: &Splits,
    targets: &Targets,
    budget: usize,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<SymbioticFlips> {
    let (poison_budget, evasion_budget) = cfg.split_budget(budget);
    let poison = joint_poison_attack(model, graph, splits, targets, poison_budget, evasion_budget, cfg, seed)?;
    evasion_stage(model, graph, splits, targets, poison, evasion_budget, cfg, seed)
}
