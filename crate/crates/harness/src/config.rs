use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use symbiosis::attack::AttackConfig;
use symbiosis::graph::load_dataset;
use symbiosis::graph::synthetic::{citation_like, SyntheticConfig};
use symbiosis::models::ModelConfig;
use symbiosis::training::TrainConfig;
use symbiosis::{Graph, Mode};

use crate::error::{Error, Result};

/// Attack pipeline run against each seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Clean,
    Evasion,
    Poisoning,
    Sequential,
    Joint,
}

impl AttackKind {
    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Clean => "clean",
            AttackKind::Evasion => "evasion",
            AttackKind::Poisoning => "poisoning",
            AttackKind::Sequential => "sequential",
            AttackKind::Joint => "joint",
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Labels the attack objective is scored against on test nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    #[default]
    True,
    /// Predictions of the attacker's surrogate.
    SelfTrain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Defense {
    #[default]
    None,
    Jaccard {
        /// Edges with feature similarity at most this value are removed.
        #[serde(default = "default_jaccard_threshold")]
        threshold: f64,
        /// Also purify the clean graph before the attacker sees it.
        #[serde(default)]
        purify_input: bool,
    },
}

fn default_jaccard_threshold() -> f64 {
    0.01
}

impl Defense {
    pub fn name(&self) -> &'static str {
        match self {
            Defense::None => "none",
            Defense::Jaccard { .. } => "jaccard",
        }
    }

    /// The graph the defender trains and evaluates on.
    pub fn apply(&self, g: &Graph) -> Result<Graph> {
        Ok(match self {
            Defense::None => g.clone(),
            Defense::Jaccard { threshold, .. } => symbiosis::graph::jaccard_purify(g, *threshold)?,
        })
    }
}

/// A dataset directory in the canonical on-disk layout, or a seeded
/// synthetic graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DatasetSource {
    Path(PathBuf),
    Synthetic(SyntheticSource),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSource {
    pub synthetic: SyntheticConfig,
    #[serde(default)]
    pub seed: u64,
}

impl DatasetSource {
    pub fn name(&self) -> String {
        match self {
            DatasetSource::Path(p) => p
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| p.display().to_string()),
            DatasetSource::Synthetic(s) => format!("synthetic-{}", s.synthetic.num_nodes),
        }
    }

    pub fn load(&self) -> Result<Graph> {
        Ok(match self {
            DatasetSource::Path(p) => load_dataset(p)?,
            DatasetSource::Synthetic(s) => citation_like(&s.synthetic, s.seed)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub defense: Defense,
    #[serde(default)]
    pub mode: Mode,
    pub attack: AttackKind,
    /// Budget as a fraction of the clean edge count.
    #[serde(default = "default_budget_fraction")]
    pub budget_fraction: f64,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub label_source: LabelSource,
    #[serde(default = "default_labels_per_class")]
    pub labels_per_class: usize,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    /// Evasion against the victim itself instead of a surrogate.
    #[serde(default)]
    pub white_box: bool,
    /// Record wall-clock times; off by default so reports are reproducible
    /// byte for byte.
    #[serde(default)]
    pub record_wall_clock: bool,
    #[serde(default)]
    pub victim: TrainConfig,
    /// Attack hyperparameters: iterations, block size, budget split,
    /// inner iterations, losses and surrogate training.
    #[serde(default)]
    pub attack_config: AttackConfig,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_budget_fraction() -> f64 {
    0.05
}

fn default_labels_per_class() -> usize {
    20
}

fn default_test_fraction() -> f64 {
    0.1
}

impl ExperimentConfig {
    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if !(self.budget_fraction >= 0.0 && self.budget_fraction.is_finite()) {
            return bad(format!(
                "budget fraction {} must be finite and >= 0",
                self.budget_fraction
            ));
        }
        if self.labels_per_class == 0 {
            return bad("labels per class must be positive".into());
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad(format!("test fraction {} outside (0, 1)", self.test_fraction));
        }
        if let Defense::Jaccard { threshold, .. } = self.defense {
            if !(threshold >= 0.0 && threshold.is_finite()) {
                return bad(format!("jaccard threshold {threshold} must be finite and >= 0"));
            }
        }
        self.model.validate()?;
        self.victim.validate()?;
        self.attack_config.validate()?;
        Ok(())
    }
}

/// Parameters a sweep can vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    BudgetFraction,
    BlockSize,
    TestFraction,
    InnerIterations,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::BudgetFraction => "budget_fraction",
            SweepParam::BlockSize => "block_size",
            SweepParam::TestFraction => "test_fraction",
            SweepParam::InnerIterations => "inner_iterations",
        }
    }

    /// A copy of `cfg` with the parameter set to `value`.
    pub fn apply(self, cfg: &ExperimentConfig, value: f64) -> Result<ExperimentConfig> {
        let applicable = match self {
            SweepParam::BudgetFraction | SweepParam::BlockSize => cfg.attack != AttackKind::Clean,
            SweepParam::TestFraction => true,
            SweepParam::InnerIterations => cfg.attack == AttackKind::Joint,
        };
        if !applicable {
            return Err(Error::InvalidConfig(format!(
                "{} has no effect on a {} attack",
                self.name(),
                cfg.attack
            )));
        }
        let count = || {
            if value >= 0.0 && value.fract() == 0.0 && value <= u32::MAX as f64 {
                Ok(value as usize)
            } else {
                Err(Error::InvalidConfig(format!(
                    "{} needs an integer, got {value}",
                    self.name()
                )))
            }
        };
        let mut out = cfg.clone();
        match self {
            SweepParam::BudgetFraction => out.budget_fraction = value,
            SweepParam::BlockSize => out.attack_config.block_size = Some(count()?),
            SweepParam::TestFraction => out.test_fraction = value,
            SweepParam::InnerIterations => out.attack_config.inner_iterations = count()?,
        }
        out.validate()?;
        Ok(out)
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            SweepParam::BudgetFraction,
            SweepParam::BlockSize,
            SweepParam::TestFraction,
            SweepParam::InnerIterations,
        ]
        .into_iter()
        .find(|p| p.name() == s)
        .ok_or_else(|| Error::InvalidConfig(format!("unknown sweep parameter {s:?}")))
    }
}
