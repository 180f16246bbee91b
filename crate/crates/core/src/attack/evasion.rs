//! Evasion: flips chosen against a fixed, trained model.

use autodiff::{Matrix, Tape};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::prbcd::{resample_step, sample_final, step_size, PerturbationState};
use super::relax::FlipLayer;
use super::{attack_loss, stream, AttackConfig, LossKind, Targets};
use crate::error::Result;
use crate::flips::EdgeFlipSet;
use crate::graph::{apply_flips, Graph};
use crate::models::{forward, GraphInput, ModelParams, Phase, Structure};
use crate::seeds::derive_seed;

/// A fixed model evaluated on weighted base pairs plus a relaxed block.
pub(crate) struct EvasionProblem<'a> {
    pub params: &'a ModelParams,
    pub input: &'a GraphInput,
    pub base_pairs: &'a [(usize, usize)],
    pub base_weights: &'a [f64],
    pub targets: &'a Targets,
    pub loss: LossKind,
}

impl EvasionProblem<'_> {
    /// Attack loss and its gradient with respect to the block values.
    pub fn loss_and_gradient(&self, state: &PerturbationState) -> Result<(f64, Vec<f64>)> {
        let layer = FlipLayer::new(self.input.num_nodes(), self.base_pairs, &state.pairs())?;
        let mut tape = Tape::new();
        let theta = self.params.to_tape(&mut tape, false)?;
        let base = layer.base_column(&mut tape, self.base_weights)?;
        let p = tape.param(Matrix::column(state.values().to_vec()))?;
        let w = layer.weights_on_tape(&mut tape, base, p)?;
        let logits = forward(
            &mut tape,
            self.params.config(),
            &theta,
            self.input,
            layer.structure(),
            w,
            Phase::Eval,
        )?;
        let loss = attack_loss(&mut tape, logits, &self.targets.labels, &self.targets.nodes, self.loss)?;
        let grad = tape.backward(loss)?.wrt(&tape, p)?;
        Ok((tape.value(loss).item(), grad.as_slice().to_vec()))
    }

    /// Runs iterations `first..first + count` of the ascent.
    pub fn run(
        &self,
        state: &mut PerturbationState,
        first: usize,
        count: usize,
        cfg: &AttackConfig,
    ) -> Result<Vec<f64>> {
        let mut trace = Vec::with_capacity(count);
        for t in first..first + count {
            let (loss, grad) = self.loss_and_gradient(state)?;
            let eta = step_size(cfg.base_lr, state.budget(), t);
            resample_step(state, &grad, eta, cfg.keep_threshold, cfg.projection_tol)?;
            trace.push(loss);
        }
        Ok(trace)
    }
}

/// Loss of a fixed model on `graph` with `flips` applied.
pub(crate) fn discrete_loss(
    params: &ModelParams,
    graph: &Graph,
    input: &GraphInput,
    flips: &[(usize, usize)],
    targets: &Targets,
    kind: LossKind,
) -> Result<f64> {
    let g = apply_flips(graph, flips)?;
    let structure = Structure::new(g.num_nodes(), g.edges())?;
    let mut tape = Tape::new();
    let theta = params.to_tape(&mut tape, false)?;
    let w = tape.constant(Matrix::filled(g.num_edges(), 1, 1.0))?;
    let logits = forward(&mut tape, params.config(), &theta, input, &structure, w, Phase::Eval)?;
    let loss = attack_loss(&mut tape, logits, &targets.labels, &targets.nodes, kind)?;
    Ok(tape.value(loss).item())
}

/// At most `budget` flips of `graph` that increase the evasion loss of
/// `params` on the target nodes.
pub fn evasion_attack(
    params: &ModelParams,
    graph: &Graph,
    targets: &Targets,
    budget: usize,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<EdgeFlipSet> {
    cfg.validate()?;
    if budget == 0 {
        return Ok(EdgeFlipSet::empty(graph.id()));
    }
    let n = graph.num_nodes();
    let input = GraphInput::new(graph);
    let ones = vec![1.0; graph.num_edges()];
    let problem = EvasionProblem {
        params,
        input: &input,
        base_pairs: graph.edges(),
        base_weights: &ones,
        targets,
        loss: cfg.evasion_loss,
    };
    let mut state = PerturbationState::new(
        n,
        cfg.block_size_for(n),
        budget,
        derive_seed(seed, stream::EVASION_BLOCK),
    )?;
    problem.run(&mut state, 1, cfg.iterations, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, stream::EVASION_FINAL));
    let flips = sample_final(
        &state,
        budget,
        cfg.final_samples,
        |f| discrete_loss(params, graph, &input, f, targets, cfg.evasion_loss),
        &mut rng,
    )?;
    EdgeFlipSet::new(flips, graph.id())
}
