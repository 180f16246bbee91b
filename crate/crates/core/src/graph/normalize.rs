use crate::error::{Error, Result};

/// `D^{-1/2} (W + I) D^{-1/2}` in pair form: one weight per undirected pair
/// plus a self-loop weight per node, with `deg = 1 + weighted degree`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    pub pairs: Vec<(usize, usize)>,
    pub pair_weights: Vec<f64>,
    pub self_weights: Vec<f64>,
}

impl NormalizedAdjacency {
    /// Dense symmetric `n x n` form, for small-graph checks.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.self_weights.len();
        let mut m = vec![vec![0.0; n]; n];
        for (v, &w) in self.self_weights.iter().enumerate() {
            m[v][v] = w;
        }
        for (&(i, j), &w) in self.pairs.iter().zip(&self.pair_weights) {
            m[i][j] += w;
            m[j][i] += w;
        }
        m
    }
}

pub fn normalize_adjacency(pairs: &[(usize, usize)], weights: &[f64], n: usize) -> Result<NormalizedAdjacency> {
    if pairs.len() != weights.len() {
        return Err(Error::InvalidConfig(format!(
            "{} pairs but {} weights",
            pairs.len(),
            weights.len()
        )));
    }
    let mut deg = vec![1.0; n];
    for (&(i, j), &w) in pairs.iter().zip(weights) {
        if i == j || i >= n || j >= n {
            return Err(Error::InvalidPair(i.min(j), i.max(j), n));
        }
        if !(w >= 0.0) {
            return Err(Error::NegativeWeight(w));
        }
        deg[i] += w;
        deg[j] += w;
    }
    let pair_weights = pairs
        .iter()
        .zip(weights)
        .map(|(&(i, j), &w)| w / (deg[i] * deg[j]).sqrt())
        .collect();
    Ok(NormalizedAdjacency {
        pairs: pairs.to_vec(),
        pair_weights,
        self_weights: deg.iter().map(|d| 1.0 / d).collect(),
    })
}
