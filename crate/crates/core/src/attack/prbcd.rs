//! Projected randomized block coordinate descent over edge-flip
//! probabilities.

use std::collections::{HashMap, HashSet};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{num_pairs, tri_decode};

/// Relaxed flip probabilities on a random block of node pairs.
#[derive(Debug, Clone)]
pub struct PerturbationState {
    n: usize,
    budget: usize,
    block_size: usize,
    /// Sorted, distinct upper-triangular linear indices.
    indices: Vec<u64>,
    values: Vec<f64>,
    rng: ChaCha8Rng,
}

impl PerturbationState {
    /// Draws an initial block of `block_size` pairs with all values 0.
    pub fn new(n: usize, block_size: usize, budget: usize, seed: u64) -> Result<Self> {
        if block_size == 0 {
            return Err(Error::InvalidConfig("block size must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let indices = sample_block_with(n, block_size, &HashSet::new(), &mut rng)?;
        Ok(Self {
            n,
            budget,
            block_size,
            values: vec![0.0; indices.len()],
            indices,
            rng,
        })
    }

    /// A state with a given block, e.g. for tests. `indices` must be
    /// distinct; they are sorted together with `values`.
    pub fn from_parts(n: usize, budget: usize, indices: Vec<u64>, values: Vec<f64>, seed: u64) -> Result<Self> {
        if indices.len() != values.len() || indices.is_empty() {
            return Err(Error::InvalidConfig(
                "block needs matching, non-empty indices and values".into(),
            ));
        }
        let total = num_pairs(n);
        let mut entries: Vec<(u64, f64)> = indices.into_iter().zip(values).collect();
        entries.sort_unstable_by_key(|e| e.0);
        for w in entries.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::InvalidConfig(format!("block index {} repeated", w[0].0)));
            }
        }
        if let Some(&(k, _)) = entries.iter().find(|e| e.0 >= total) {
            return Err(Error::IndexOutOfRange { index: k, len: total });
        }
        Ok(Self {
            n,
            budget,
            block_size: entries.len(),
            indices: entries.iter().map(|e| e.0).collect(),
            values: entries.iter().map(|e| e.1).collect(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn indices(&self) -> &[u64] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Node pairs of the block, in index order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.indices
            .iter()
            .map(|&k| tri_decode(k, self.n).expect("block indices are in range"))
            .collect()
    }
}

/// `b` distinct linear indices drawn uniformly from the pairs of an
/// `n`-node graph that are not in `exclude`, sorted ascending.
pub fn sample_block(n: usize, b: usize, exclude: &HashSet<u64>, seed: u64) -> Result<Vec<u64>> {
    sample_block_with(n, b, exclude, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn sample_block_with(n: usize, b: usize, exclude: &HashSet<u64>, rng: &mut impl Rng) -> Result<Vec<u64>> {
    let total = num_pairs(n);
    let excluded = exclude.iter().filter(|&&k| k < total).count() as u64;
    let available = total - excluded;
    if b as u64 > available {
        return Err(Error::InfeasibleBlock {
            requested: b as u64,
            available,
        });
    }
    let mut out: Vec<u64> = if exclude.is_empty() && total <= usize::MAX as u64 {
        index::sample(rng, total as usize, b)
            .into_iter()
            .map(|k| k as u64)
            .collect()
    } else if 2 * (b as u64) >= available {
        // Dense regime: enumerate the free indices and pick a subset.
        let free: Vec<u64> = (0..total).filter(|k| !exclude.contains(k)).collect();
        index::sample(rng, free.len(), b).into_iter().map(|p| free[p]).collect()
    } else {
        // Sparse regime: rejection sampling terminates quickly because at
        // least half of the free indices remain unpicked.
        let mut picked = HashSet::with_capacity(b);
        let mut order = Vec::with_capacity(b);
        while order.len() < b {
            let k = rng.random_range(0..total);
            if !exclude.contains(&k) && picked.insert(k) {
                order.push(k);
            }
        }
        order
    };
    out.sort_unstable();
    Ok(out)
}

/// Euclidean projection onto `{p in [0,1]^b : sum p <= budget}`.
///
/// Returns the clamp when that already satisfies the budget; otherwise
/// `clamp(v - mu, 0, 1)` with `mu >= 0` found by bisection so the sum
/// matches the budget within `tol` (at most 100 halvings). The result
/// never exceeds the budget by more than `tol`.
pub fn project(values: &[f64], budget: f64, tol: f64) -> Vec<f64> {
    let clamp = |mu: f64| -> Vec<f64> { values.iter().map(|v| (v - mu).clamp(0.0, 1.0)).collect() };
    let mass = |mu: f64| -> f64 { values.iter().map(|v| (v - mu).clamp(0.0, 1.0)).sum() };
    let budget = budget.max(0.0);
    if mass(0.0) <= budget {
        return clamp(0.0);
    }
    if budget == 0.0 {
        return vec![0.0; values.len()];
    }
    // mass(lo) > budget >= mass(hi); mass is non-increasing in mu.
    let mut lo = 0.0;
    let mut hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        let m = mass(mid);
        if (m - budget).abs() <= tol {
            return clamp(mid);
        }
        if m > budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    clamp(hi)
}

/// `base_lr * max(budget, 1) / sqrt(t)` for iterations `t >= 1`.
pub fn step_size(base_lr: f64, budget: usize, t: usize) -> f64 {
    base_lr * (budget.max(1) as f64) / (t.max(1) as f64).sqrt()
}

/// Gradient ascent step, projection onto the budget, then eviction of
/// entries below `keep_threshold`, whose slots are refilled with fresh
/// pairs (not currently in the block) at value 0.
pub fn resample_step(
    state: &mut PerturbationState,
    gradient: &[f64],
    step: f64,
    keep_threshold: f64,
    tol: f64,
) -> Result<()> {
    if gradient.len() != state.values.len() {
        return Err(Error::InvalidConfig(format!(
            "{} gradient entries for a block of {}",
            gradient.len(),
            state.values.len()
        )));
    }
    let moved: Vec<f64> = state.values.iter().zip(gradient).map(|(v, g)| v + step * g).collect();
    let projected = project(&moved, state.budget as f64, tol);
    debug_assert!(projected.iter().all(|v| (0.0..=1.0).contains(v)));
    debug_assert!(projected.iter().sum::<f64>() <= state.budget as f64 + 1e-9);

    let mut entries: Vec<(u64, f64)> = state
        .indices
        .iter()
        .zip(&projected)
        .filter(|&(_, &v)| v >= keep_threshold)
        .map(|(&k, &v)| (k, v))
        .collect();
    let missing = state.block_size - entries.len();
    if missing > 0 {
        let survivors: HashSet<u64> = entries.iter().map(|e| e.0).collect();
        let fresh = sample_block_with(state.n, missing, &survivors, &mut state.rng)?;
        entries.extend(fresh.into_iter().map(|k| (k, 0.0)));
        entries.sort_unstable_by_key(|e| e.0);
    }
    state.indices = entries.iter().map(|e| e.0).collect();
    state.values = entries.iter().map(|e| e.1).collect();
    Ok(())
}

/// Draws `samples` Bernoulli realizations of the block, drops those with
/// more than `budget` flips, and returns the one maximizing `loss_eval`
/// (earliest draw on ties). Identical realizations are evaluated once. If
/// every draw is over budget, the `budget` largest positive entries are
/// returned (lowest index first on equal values).
pub fn sample_final<F>(
    state: &PerturbationState,
    budget: usize,
    samples: usize,
    mut loss_eval: F,
    rng: &mut impl Rng,
) -> Result<Vec<(usize, usize)>>
where
    F: FnMut(&[(usize, usize)]) -> Result<f64>,
{
    if samples == 0 {
        return Err(Error::InvalidConfig("final sample count must be at least 1".into()));
    }
    if budget == 0 {
        return Ok(Vec::new());
    }
    let pairs = state.pairs();
    let mut cache: HashMap<Vec<usize>, f64> = HashMap::new();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..samples {
        let chosen: Vec<usize> = state
            .values
            .iter()
            .enumerate()
            .filter_map(|(k, &p)| (rng.random::<f64>() < p).then_some(k))
            .collect();
        if chosen.len() > budget {
            continue;
        }
        let loss = match cache.get(&chosen) {
            Some(&l) => l,
            None => {
                let flips: Vec<_> = chosen.iter().map(|&k| pairs[k]).collect();
                let l = loss_eval(&flips)?;
                cache.insert(chosen.clone(), l);
                l
            }
        };
        if best.as_ref().is_none_or(|(b, _)| loss > *b) {
            best = Some((loss, chosen));
        }
    }
    let chosen = match best {
        Some((_, chosen)) => chosen,
        None => {
            let mut order: Vec<usize> = (0..pairs.len()).filter(|&k| state.values[k] > 0.0).collect();
            order.sort_by(|&a, &b| state.values[b].total_cmp(&state.values[a]).then(a.cmp(&b)));
            order.truncate(budget);
            order.sort_unstable();
            order
        }
    };
    Ok(chosen.into_iter().map(|k| pairs[k]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-9)
    }

    #[test]
    fn projection_examples() {
        assert!(close(&project(&[0.5, 0.7], 1.0, 1e-10), &[0.4, 0.6]));
        assert!(close(&project(&[0.9, 0.8, 0.5], 1.0, 1e-10), &[0.5, 0.4, 0.1]));
        assert_eq!(project(&[0.2, 0.3], 5.0, 1e-10), vec![0.2, 0.3]);
        assert_eq!(project(&[1.7, -0.2], 5.0, 1e-10), vec![1.0, 0.0]);
        assert_eq!(project(&[0.7, 0.4], 0.0, 1e-10), vec![0.0, 0.0]);
    }

    #[test]
    fn step_sizes() {
        assert_eq!(step_size(0.5, 10, 1), 5.0);
        assert_eq!(step_size(0.5, 10, 4), 2.5);
        assert_eq!(step_size(0.5, 0, 4), 0.25);
    }

    #[test]
    fn block_examples() {
        assert_eq!(sample_block(4, 6, &HashSet::new(), 1).unwrap(), vec![0, 1, 2, 3, 4, 5]);
        let ex: HashSet<u64> = [0, 1, 2].into();
        assert_eq!(sample_block(4, 3, &ex, 1).unwrap(), vec![3, 4, 5]);
        assert!(matches!(
            sample_block(4, 4, &ex, 1),
            Err(Error::InfeasibleBlock {
                requested: 4,
                available: 3
            })
        ));
        let a = sample_block(1000, 50, &HashSet::new(), 3).unwrap();
        assert_eq!(a, sample_block(1000, 50, &HashSet::new(), 3).unwrap());
    }

    #[test]
    fn zero_gradient_resamples_everything() {
        let mut s = PerturbationState::new(30, 10, 3, 5).unwrap();
        let before = s.indices().to_vec();
        resample_step(&mut s, &[0.0; 10], 1.0, 1e-7, 1e-10).unwrap();
        assert_eq!(s.indices().len(), 10);
        assert!(s.values().iter().all(|&v| v == 0.0));
        assert_ne!(s.indices(), &before[..]);
    }

    #[test]
    fn large_entry_survives() {
        let mut s = PerturbationState::from_parts(10, 2, vec![3, 7, 20], vec![0.0, 0.0, 0.0], 0).unwrap();
        resample_step(&mut s, &[0.0, 0.9, 0.0], 1.0, 1e-7, 1e-10).unwrap();
        let pos = s.indices().iter().position(|&k| k == 7).unwrap();
        assert!((s.values()[pos] - 0.9).abs() < 1e-15);
        assert_eq!(s.indices().len(), 3);
    }

    #[test]
    fn final_sampling_contracts() {
        let s = PerturbationState::from_parts(5, 2, vec![0, 4, 9], vec![1.0, 0.0, 1.0], 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let flips = sample_final(&s, 2, 10, |_| Ok(1.0), &mut rng).unwrap();
        assert_eq!(flips, vec![(0, 1), (3, 4)]);
        assert!(sample_final(&s, 0, 10, |_| Ok(1.0), &mut rng).unwrap().is_empty());
        assert!(sample_final(&s, 2, 0, |_| Ok(1.0), &mut rng).is_err());
        // Every draw has two flips; with budget 1 the top entry is used.
        let flips = sample_final(&s, 1, 5, |_| Ok(1.0), &mut rng).unwrap();
        assert_eq!(flips, vec![(0, 1)]);
    }
}
