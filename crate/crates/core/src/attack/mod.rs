//! Edge-flip attacks: evasion against a fixed model, meta-gradient
//! poisoning, and their sequential and joint combinations.

mod evasion;
mod poisoning;
pub mod prbcd;
mod relax;

use autodiff::functional::{masked_cross_entropy, tanh_margin};
use autodiff::{Tape, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flips::EdgeFlipSet;
use crate::graph::num_pairs;
use crate::training::TrainConfig;

pub use evasion::evasion_attack;
pub use poisoning::{joint_attack, joint_poison_attack, poison_attack, sequential_attack};
pub use prbcd::{project, resample_step, sample_block, sample_final, step_size, PerturbationState};
pub use relax::{relaxed_weights, FlipLayer};

/// Attack objective, maximized by the attacker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Mean cross-entropy of the target nodes.
    CrossEntropy,
    /// Mean `tanh(z_best_wrong - z_true)` of the target nodes.
    TanhMargin,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cross_entropy" | "ce" => Ok(Self::CrossEntropy),
            "tanh_margin" | "margin" => Ok(Self::TanhMargin),
            other => Err(Error::InvalidConfig(format!("unknown loss kind '{other}'"))),
        }
    }
}

pub fn attack_loss(tape: &mut Tape, logits: Var, labels: &[usize], nodes: &[usize], kind: LossKind) -> Result<Var> {
    if nodes.is_empty() {
        return Err(Error::EmptyNodeSet);
    }
    Ok(match kind {
        LossKind::CrossEntropy => masked_cross_entropy(tape, logits, labels, nodes)?,
        LossKind::TanhMargin => tanh_margin(tape, logits, labels, nodes)?,
    })
}

/// The nodes an attack is scored on and the labels it scores against
/// (indexed by full-graph node id).
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub nodes: Vec<usize>,
    pub labels: Vec<usize>,
}

impl Targets {
    pub fn new(nodes: Vec<usize>, labels: Vec<usize>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::EmptyNodeSet);
        }
        if let Some(&v) = nodes.iter().find(|&&v| v >= labels.len()) {
            return Err(Error::IndexOutOfRange {
                index: v as u64,
                len: labels.len() as u64,
            });
        }
        Ok(Self { nodes, labels })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub iterations: usize,
    /// Number of node pairs optimized at once; `None` means
    /// `min(250_000, n(n-1)/2)`.
    pub block_size: Option<usize>,
    /// Scale of the step size `base_lr * max(budget, 1) / sqrt(t)`.
    pub base_lr: f64,
    pub evasion_loss: LossKind,
    pub poisoning_loss: LossKind,
    /// Bernoulli realizations drawn at the end of an attack.
    pub final_samples: usize,
    pub keep_threshold: f64,
    pub projection_tol: f64,
    /// Share of the budget spent on poisoning in symbiotic attacks.
    pub alpha: f64,
    /// Inner evasion iterations per poisoning iteration (joint attack).
    pub inner_iterations: usize,
    /// Differentiable surrogate training inside the poisoning attack;
    /// fields left out default to [`TrainConfig::unrolled`].
    #[serde(deserialize_with = "TrainConfig::deserialize_unrolled")]
    pub unrolled: TrainConfig,
    /// Surrogate trained on the poisoned graph for the evasion stage.
    pub surrogate: TrainConfig,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            iterations: 125,
            block_size: None,
            base_lr: 1.0,
            evasion_loss: LossKind::TanhMargin,
            poisoning_loss: LossKind::CrossEntropy,
            final_samples: 100,
            keep_threshold: 1e-7,
            projection_tol: 1e-10,
            alpha: 0.5,
            inner_iterations: 10,
            unrolled: TrainConfig::unrolled(),
            surrogate: TrainConfig::victim(),
        }
    }
}

pub const DEFAULT_BLOCK_SIZE: usize = 250_000;

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.block_size == Some(0) {
            return bad("block size must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("budget split {} outside [0, 1]", self.alpha));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad(format!("base step size {} must be positive", self.base_lr));
        }
        if self.final_samples == 0 {
            return bad("final sample count must be at least 1".into());
        }
        if !(self.keep_threshold >= 0.0 && self.projection_tol > 0.0) {
            return bad("keep threshold and projection tolerance must be non-negative".into());
        }
        self.unrolled.validate()?;
        self.surrogate.validate()
    }

    /// Block size for an `n`-node graph.
    pub fn block_size_for(&self, n: usize) -> usize {
        let total = num_pairs(n).min(usize::MAX as u64) as usize;
        self.block_size.unwrap_or(DEFAULT_BLOCK_SIZE).min(total)
    }

    /// Per-stage budgets `(floor(alpha * budget), rest)`.
    pub fn split_budget(&self, budget: usize) -> (usize, usize) {
        let poison = ((self.alpha * budget as f64) + 1e-9).floor() as usize;
        let poison = poison.min(budget);
        (poison, budget - poison)
    }
}

/// Flips of a symbiotic attack: the poisoning flips relative to the clean
/// graph and the evasion flips relative to the poisoned graph.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbioticFlips {
    pub poison: EdgeFlipSet,
    pub evasion: EdgeFlipSet,
}

/// Seed streams derived from an attack seed.
pub mod stream {
    pub const EVASION_BLOCK: u64 = 1;
    pub const EVASION_FINAL: u64 = 2;
    pub const POISON_BLOCK: u64 = 3;
    pub const POISON_FINAL: u64 = 4;
    pub const POISON_INIT: u64 = 5;
    pub const POISON_RETRAIN: u64 = 6;
    pub const INNER_BLOCK: u64 = 7;
    pub const SURROGATE: u64 = 8;
    pub const EVASION_STAGE: u64 = 9;
}
