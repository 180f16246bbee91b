//! Edge-flip sets and their CSV form.
//!
//! A flip file holds one or more sections. Each section starts with a
//! header comment followed by `i,j` lines:
//!
//! ```text
//! # base=3f2a9c0d11e4b7a2 stage=poisoning budget=13 seed=2
//! 4,17
//! 9,120
//! # base=8c01d2e3f4a5b6c7 stage=evasion budget=13 seed=2
//! 0,5
//! ```

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{self, Graph};

/// Undirected pairs to toggle, tied to the graph they were computed against.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeFlipSet {
    flips: Vec<(usize, usize)>,
    relative_to: String,
}

impl EdgeFlipSet {
    /// Sorts the pairs; rejects `i >= j` and duplicates.
    pub fn new(mut flips: Vec<(usize, usize)>, relative_to: impl Into<String>) -> Result<Self> {
        flips.sort_unstable();
        for w in flips.windows(2) {
            if w[0] == w[1] {
                return Err(Error::DuplicatePair(w[0].0, w[0].1));
            }
        }
        if let Some(&(i, j)) = flips.iter().find(|&&(i, j)| i >= j) {
            return Err(Error::InvalidPair(i, j, j.max(i) + 1));
        }
        Ok(Self {
            flips,
            relative_to: relative_to.into(),
        })
    }

    pub fn empty(relative_to: impl Into<String>) -> Self {
        Self {
            flips: Vec::new(),
            relative_to: relative_to.into(),
        }
    }

    pub fn flips(&self) -> &[(usize, usize)] {
        &self.flips
    }

    pub fn relative_to(&self) -> &str {
        &self.relative_to
    }

    pub fn len(&self) -> usize {
        self.flips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flips.is_empty()
    }

    /// Toggles every pair in `g`, which must be the graph the set was
    /// computed against.
    pub fn apply(&self, g: &Graph) -> Result<Graph> {
        let found = g.id();
        if found != self.relative_to {
            return Err(Error::BaseMismatch {
                expected: self.relative_to.clone(),
                found,
            });
        }
        graph::apply_flips(g, &self.flips)
    }

    /// Pairs of `self` that are not in `other` and vice versa.
    pub fn symmetric_difference(&self, other: &EdgeFlipSet) -> Vec<(usize, usize)> {
        let a: BTreeSet<_> = self.flips.iter().collect();
        let b: BTreeSet<_> = other.flips.iter().collect();
        a.symmetric_difference(&b).map(|&&p| p).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Poisoning,
    Evasion,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Poisoning => "poisoning",
            Stage::Evasion => "evasion",
        })
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "poisoning" => Ok(Stage::Poisoning),
            "evasion" => Ok(Stage::Evasion),
            other => Err(format!("unknown stage {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlipSection {
    pub stage: Stage,
    pub budget: usize,
    pub seed: u64,
    pub set: EdgeFlipSet,
}

pub fn format_sections(sections: &[FlipSection]) -> String {
    let mut out = String::new();
    for s in sections {
        out.push_str(&format!(
            "# base={} stage={} budget={} seed={}\n",
            s.set.relative_to, s.stage, s.budget, s.seed
        ));
        for (i, j) in &s.set.flips {
            out.push_str(&format!("{i},{j}\n"));
        }
    }
    out
}

pub fn parse_sections(text: &str, path: &Path) -> Result<Vec<FlipSection>> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut out: Vec<(FlipSection, Vec<(usize, usize)>)> = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        if let Some(header) = raw.strip_prefix('#') {
            let (mut base, mut stage, mut budget, mut seed) = (None, None, None, None);
            for field in header.split_whitespace() {
                let (key, value) = field
                    .split_once('=')
                    .ok_or_else(|| err(line, format!("bad header field {field:?}")))?;
                match key {
                    "base" => base = Some(value.to_owned()),
                    "stage" => stage = Some(value.parse().map_err(|e| err(line, e))?),
                    "budget" => budget = Some(value.parse().map_err(|_| err(line, format!("bad budget {value:?}")))?),
                    "seed" => seed = Some(value.parse().map_err(|_| err(line, format!("bad seed {value:?}")))?),
                    _ => return Err(err(line, format!("unknown header field {key:?}"))),
                }
            }
            let (Some(base), Some(stage), Some(budget), Some(seed)) = (base, stage, budget, seed) else {
                return Err(err(line, "header needs base, stage, budget and seed".into()));
            };
            out.push((
                FlipSection {
                    stage,
                    budget,
                    seed,
                    set: EdgeFlipSet::empty(base),
                },
                Vec::new(),
            ));
            continue;
        }
        let Some((_, pairs)) = out.last_mut() else {
            return Err(err(line, "pair before any section header".into()));
        };
        let (a, b) = raw
            .split_once(',')
            .ok_or_else(|| err(line, format!("expected `i,j`, got {raw:?}")))?;
        let parse = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| err(line, format!("bad index {s:?}")))
        };
        pairs.push((parse(a)?, parse(b)?));
    }
    out.into_iter()
        .map(|(mut section, pairs)| {
            section.set = EdgeFlipSet::new(pairs, section.set.relative_to)?;
            Ok(section)
        })
        .collect()
}

pub fn read_sections(path: impl AsRef<Path>) -> Result<Vec<FlipSection>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_sections(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_validates() {
        assert!(matches!(
            EdgeFlipSet::new(vec![(1, 2), (0, 3), (1, 2)], "x"),
            Err(Error::DuplicatePair(1, 2))
        ));
        assert!(EdgeFlipSet::new(vec![(2, 2)], "x").is_err());
        let s = EdgeFlipSet::new(vec![(1, 2), (0, 3)], "x").unwrap();
        assert_eq!(s.flips(), &[(0, 3), (1, 2)]);
    }

    #[test]
    fn sections_round_trip() {
        let sections = vec![
            FlipSection {
                stage: Stage::Poisoning,
                budget: 3,
                seed: 9,
                set: EdgeFlipSet::new(vec![(0, 4), (2, 3)], "abc").unwrap(),
            },
            FlipSection {
                stage: Stage::Evasion,
                budget: 2,
                seed: 9,
                set: EdgeFlipSet::empty("def"),
            },
        ];
        let text = format_sections(&sections);
        assert_eq!(parse_sections(&text, Path::new("t")).unwrap(), sections);
    }

    #[test]
    fn base_mismatch_rejected() {
        let g = Graph::new(3, [(0, 1)], autodiff::Matrix::zeros(3, 1), vec![0; 3], 1).unwrap();
        let s = EdgeFlipSet::new(vec![(1, 2)], "not-this-graph").unwrap();
        assert!(matches!(s.apply(&g), Err(Error::BaseMismatch { .. })));
        let s = EdgeFlipSet::new(vec![(1, 2)], g.id()).unwrap();
        assert_eq!(s.apply(&g).unwrap().edges(), &[(0, 1), (1, 2)]);
    }
}
