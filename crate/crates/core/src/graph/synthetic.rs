//! Seeded random graphs that look roughly like citation networks: a
//! homophilous stochastic block structure with sparse binary features
//! correlated with the class.

use std::collections::BTreeSet;

use autodiff::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub num_nodes: usize,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub avg_degree: f64,
    /// Fraction of edges joining nodes of the same class.
    pub homophily: f64,
    /// Probability that a feature from the node's own class block is on.
    pub p_in: f64,
    /// Probability that any other feature is on.
    pub p_out: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_nodes: 300,
            num_classes: 3,
            feature_dim: 60,
            avg_degree: 4.0,
            homophily: 0.8,
            p_in: 0.15,
            p_out: 0.04,
        }
    }
}

pub fn citation_like(cfg: &SyntheticConfig, seed: u64) -> Result<Graph> {
    let SyntheticConfig {
        num_nodes: n,
        num_classes: c,
        feature_dim: d,
        ..
    } = *cfg;
    if c == 0 || n < 2 * c || d < c {
        return Err(Error::InvalidConfig(format!(
            "synthetic graph needs n >= 2c and d >= c (n={n}, c={c}, d={d})"
        )));
    }
    for (name, p) in [("homophily", cfg.homophily), ("p_in", cfg.p_in), ("p_out", cfg.p_out)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidConfig(format!("{name} = {p} outside [0, 1]")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = (0..n).map(|v| v % c).collect();
    let members: Vec<Vec<usize>> = (0..c).map(|k| (k..n).step_by(c).collect()).collect();

    let max_edges = n * (n - 1) / 2;
    let target = ((cfg.avg_degree * n as f64 / 2.0).round() as usize).min(max_edges / 2);
    let mut edges = BTreeSet::new();
    while edges.len() < target {
        let i = rng.random_range(0..n);
        let same = c == 1 || rng.random::<f64>() < cfg.homophily;
        let class = if same {
            labels[i]
        } else {
            (labels[i] + rng.random_range(1..c)) % c
        };
        let j = members[class][rng.random_range(0..members[class].len())];
        if i != j {
            edges.insert((i.min(j), i.max(j)));
        }
    }

    let block = d / c;
    let mut x = Matrix::zeros(n, d);
    for v in 0..n {
        let own = labels[v] * block..(labels[v] + 1) * block;
        for k in 0..d {
            let p = if own.contains(&k) { cfg.p_in } else { cfg.p_out };
            if rng.random::<f64>() < p {
                x.set(v, k, 1.0);
            }
        }
        if x.row(v).iter().all(|&f| f == 0.0) {
            x.set(v, own.start + rng.random_range(0..block), 1.0);
        }
    }
    Graph::new(n, edges, x, labels, c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_well_formed() {
        let cfg = SyntheticConfig::default();
        let a = citation_like(&cfg, 7).unwrap();
        assert_eq!(a, citation_like(&cfg, 7).unwrap());
        assert_ne!(a.edges(), citation_like(&cfg, 8).unwrap().edges());
        assert_eq!(a.num_edges(), 600);
        let intra = a
            .edges()
            .iter()
            .filter(|&&(i, j)| a.labels()[i] == a.labels()[j])
            .count();
        assert!(intra as f64 / a.num_edges() as f64 > 0.7);
        assert!((0..a.num_nodes()).all(|v| a.features().row(v).iter().any(|&f| f == 1.0)));
    }
}
