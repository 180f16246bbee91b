use super::Graph;
use crate::error::{Error, Result};

/// Jaccard similarity of two binary rows; two all-zero rows score 0.
pub fn jaccard_similarity(a: &[f64], b: &[f64]) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x != 0.0, y != 0.0);
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Removes every edge whose endpoints have feature Jaccard similarity at
/// most `tau`.
pub fn jaccard_purify(g: &Graph, tau: f64) -> Result<Graph> {
    if !(tau >= 0.0) {
        return Err(Error::InvalidConfig(format!("jaccard threshold {tau} < 0")));
    }
    let x = g.features();
    for node in 0..g.num_nodes() {
        if let Some(&value) = x.row(node).iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::NonBinaryFeatures { node, value });
        }
    }
    // Sparse supports make this linear in the number of nonzeros per edge.
    let support: Vec<Vec<usize>> = (0..g.num_nodes())
        .map(|v| {
            x.row(v)
                .iter()
                .enumerate()
                .filter_map(|(k, &f)| (f != 0.0).then_some(k))
                .collect()
        })
        .collect();
    let kept = g
        .edges()
        .iter()
        .copied()
        .filter(|&(i, j)| sparse_jaccard(&support[i], &support[j]) > tau)
        .collect();
    Ok(g.with_sorted_edges(kept))
}

fn sparse_jaccard(a: &[usize], b: &[usize]) -> f64 {
    let (mut p, mut q, mut inter) = (0, 0, 0usize);
    while p < a.len() && q < b.len() {
        match a[p].cmp(&b[q]) {
            std::cmp::Ordering::Less => p += 1,
            std::cmp::Ordering::Greater => q += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                p += 1;
                q += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use autodiff::Matrix;

    #[test]
    fn similarity_examples() {
        assert!((jaccard_similarity(&[1.0, 1.0, 0.0], &[0.0, 1.0, 1.0]) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(jaccard_similarity(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]), 0.0);
    }

    #[test]
    fn removes_only_disjoint_pairs() {
        let x = Matrix::from_rows(&[vec![1.0, 1.0, 0.0], vec![0.0, 1.0, 1.0], vec![1.0, 0.0, 0.0]]).unwrap();
        let g = Graph::new(3, [(0, 1), (1, 2), (0, 2)], x, vec![0; 3], 1).unwrap();
        let p = jaccard_purify(&g, 0.0).unwrap();
        assert_eq!(p.edges(), &[(0, 1), (0, 2)]);
        assert_eq!(jaccard_purify(&p, 0.0).unwrap(), p);
    }

    #[test]
    fn non_binary_rejected() {
        let g = Graph::new(2, [(0, 1)], Matrix::filled(2, 2, 0.5), vec![0; 2], 1).unwrap();
        assert!(matches!(
            jaccard_purify(&g, 0.0),
            Err(Error::NonBinaryFeatures { node: 0, .. })
        ));
    }
}
