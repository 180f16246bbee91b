//! Row-major linear indexing of the strictly upper triangle of an `n x n`
//! matrix: `(0,1), (0,2), ..., (0,n-1), (1,2), ...`.

use crate::error::{Error, Result};

/// Number of unordered node pairs, `n(n-1)/2`.
pub fn num_pairs(n: usize) -> u64 {
    let n = n as u64;
    n * n.saturating_sub(1) / 2
}

fn row_start(i: u64, n: u64) -> u64 {
    i * n - i * (i + 1) / 2
}

pub fn tri_encode(i: usize, j: usize, n: usize) -> Result<u64> {
    if !(i < j && j < n) {
        return Err(Error::InvalidPair(i, j, n));
    }
    let (i, j, n) = (i as u64, j as u64, n as u64);
    Ok(row_start(i, n) + (j - i - 1))
}

pub fn tri_decode(k: u64, n: usize) -> Result<(usize, usize)> {
    let total = num_pairs(n);
    if k >= total {
        return Err(Error::IndexOutOfRange { index: k, len: total });
    }
    let nn = n as u64;
    // Closed-form row estimate, then exact correction for rounding.
    let b = 2.0 * nn as f64 - 1.0;
    let disc = (b * b - 8.0 * k as f64).max(0.0);
    let mut i = ((b - disc.sqrt()) / 2.0).floor().max(0.0) as u64;
    i = i.min(nn - 2);
    while i > 0 && row_start(i, nn) > k {
        i -= 1;
    }
    while i + 1 < nn - 1 && row_start(i + 1, nn) <= k {
        i += 1;
    }
    let j = k - row_start(i, nn) + i + 1;
    Ok((i as usize, j as usize))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_examples() {
        assert_eq!(tri_encode(0, 1, 4).unwrap(), 0);
        assert_eq!(tri_encode(1, 2, 4).unwrap(), 3);
        assert_eq!(tri_encode(2, 3, 4).unwrap(), 5);
        assert_eq!(tri_decode(4, 4).unwrap(), (1, 3));
    }

    #[test]
    fn out_of_range() {
        assert!(tri_encode(1, 1, 4).is_err());
        assert!(tri_encode(2, 1, 4).is_err());
        assert!(tri_encode(0, 4, 4).is_err());
        assert!(tri_decode(6, 4).is_err());
        assert!(tri_decode(0, 1).is_err());
    }

    #[test]
    fn large_n_round_trip() {
        let n = 19_717;
        let last = num_pairs(n) - 1;
        assert_eq!(tri_decode(last, n).unwrap(), (n - 2, n - 1));
        for &(i, j) in &[(0, 1), (0, n - 1), (1, 2), (9_000, 9_001), (n - 3, n - 1)] {
            let k = tri_encode(i, j, n).unwrap();
            assert_eq!(tri_decode(k, n).unwrap(), (i, j));
        }
    }
}
