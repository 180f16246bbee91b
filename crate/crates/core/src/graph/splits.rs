use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Test nodes are present (unlabeled) while training.
    #[default]
    Transductive,
    /// Test nodes and their edges are removed before training and only
    /// added back for evaluation.
    Inductive,
}

/// Disjoint node sets, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub labeled_train: Vec<usize>,
    pub unlabeled_train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub mode: Mode,
}

impl Splits {
    /// Nodes visible while training: everything but the test set in
    /// inductive mode, all nodes otherwise.
    pub fn training_nodes(&self, num_nodes: usize) -> Vec<usize> {
        match self.mode {
            Mode::Transductive => (0..num_nodes).collect(),
            Mode::Inductive => {
                let mut is_test = vec![false; num_nodes];
                for &v in &self.test {
                    is_test[v] = true;
                }
                (0..num_nodes).filter(|&v| !is_test[v]).collect()
            }
        }
    }
}

/// Draws `labeled_per_class` labeled nodes per class, then
/// `round(test_fraction * n)` test nodes from the rest, then 10% of what
/// remains as validation; the remainder is unlabeled training data.
pub fn make_splits(g: &Graph, labeled_per_class: usize, test_fraction: f64, mode: Mode, seed: u64) -> Result<Splits> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "test fraction {test_fraction} outside (0, 1)"
        )));
    }
    let n = g.num_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class = vec![Vec::new(); g.num_classes()];
    for (v, &c) in g.labels().iter().enumerate() {
        by_class[c].push(v);
    }
    let mut taken = vec![false; n];
    let mut labeled = Vec::with_capacity(labeled_per_class * g.num_classes());
    for (class, members) in by_class.iter_mut().enumerate() {
        if members.len() < labeled_per_class {
            return Err(Error::ClassTooSmall {
                class,
                available: members.len(),
                requested: labeled_per_class,
            });
        }
        members.shuffle(&mut rng);
        for &v in &members[..labeled_per_class] {
            taken[v] = true;
            labeled.push(v);
        }
    }
    let mut rest: Vec<usize> = (0..n).filter(|&v| !taken[v]).collect();
    rest.shuffle(&mut rng);
    let n_test = (test_fraction * n as f64).round() as usize;
    if n_test == 0 || n_test > rest.len() {
        return Err(Error::InvalidConfig(format!(
            "{n_test} test nodes requested, {} unlabeled nodes available",
            rest.len()
        )));
    }
    let after_test = rest.len() - n_test;
    let n_val = (0.1 * after_test as f64).round() as usize;
    let mut test = rest[..n_test].to_vec();
    let mut validation = rest[n_test..n_test + n_val].to_vec();
    let mut unlabeled = rest[n_test + n_val..].to_vec();
    for set in [&mut labeled, &mut test, &mut validation, &mut unlabeled] {
        set.sort_unstable();
    }
    Ok(Splits {
        labeled_train: labeled,
        unlabeled_train: unlabeled,
        validation,
        test,
        mode,
    })
}
