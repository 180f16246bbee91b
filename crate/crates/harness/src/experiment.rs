use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use symbiosis::attack::{evasion_attack, joint_attack, poison_attack, sequential_attack, SymbioticFlips, Targets};
use symbiosis::flips::{FlipSection, Stage};
use symbiosis::graph::{budget_from_fraction, make_splits};
use symbiosis::models::{predict, ModelParams};
use symbiosis::seeds::derive_seed;
use symbiosis::training::train_victim;
use symbiosis::{EdgeFlipSet, Graph, Mode, Splits};

use crate::config::{AttackKind, Defense, ExperimentConfig, LabelSource, SweepParam};
use crate::error::{Error, Result};

/// Environment variable holding the number of seeds run concurrently.
pub const WORKERS_ENV: &str = "ATTACK_WORKERS";

/// Streams derived from each experiment seed.
pub mod stream {
    pub const SPLIT: u64 = 101;
    pub const VICTIM: u64 = 102;
    pub const SURROGATE: u64 = 103;
    pub const ATTACK: u64 = 104;
    pub const RETRAIN: u64 = 105;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub clean_acc: f64,
    pub perturbed_acc: f64,
    pub poison_flips: usize,
    pub evasion_flips: usize,
    /// Path of the flip file relative to the output directory.
    pub flips_file: String,
    pub runtime_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub param: SweepParam,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub model: String,
    pub dataset: String,
    pub defense: String,
    pub mode: Mode,
    pub attack: AttackKind,
    /// Total budget in undirected flips.
    pub budget: usize,
    pub budget_fraction: f64,
    pub mean_acc: f64,
    pub se_acc: f64,
    pub mean_clean_acc: f64,
    pub se_clean_acc: f64,
    pub runs: Vec<SeedResult>,
    pub runtime_s: Option<f64>,
    pub sweep: Option<SweepPoint>,
    /// Set when some seed failed; `runs` then holds the seeds that finished.
    pub failure: Option<String>,
    pub config: ExperimentConfig,
}

/// A report together with the flip sets of each finished seed.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub report: AttackReport,
    pub flips: Vec<(u64, Vec<FlipSection>)>,
}

/// Sample mean and standard error (sample standard deviation over
/// `sqrt(k)`); the error is 0 for a single value.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let k = xs.len();
    if k == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / k as f64;
    if k == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
    (mean, (var / k as f64).sqrt())
}

pub fn workers_from_env() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&w| w > 0)
        .unwrap_or(1)
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Experiment> {
    run_experiment_with(cfg, workers_from_env())
}

/// Runs every seed of `cfg` with up to `workers` seeds in flight. Results
/// are gathered in seed order, so the report does not depend on `workers`.
pub fn run_experiment_with(cfg: &ExperimentConfig, workers: usize) -> Result<Experiment> {
    cfg.validate()?;
    let started = Instant::now();
    let mut graph = cfg.dataset.load()?;
    if let Defense::Jaccard { purify_input: true, .. } = cfg.defense {
        graph = cfg.defense.apply(&graph)?;
    }
    let budget = match cfg.attack {
        AttackKind::Clean => 0,
        _ => budget_from_fraction(&graph, cfg.budget_fraction),
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build()?;
    let outcomes: Vec<Result<(SeedResult, Vec<FlipSection>)>> = pool.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&seed| run_seed(cfg, &graph, budget, seed))
            .collect()
    });

    let mut runs = Vec::new();
    let mut flips = Vec::new();
    let mut failures = Vec::new();
    for (seed, outcome) in cfg.seeds.iter().zip(outcomes) {
        match outcome {
            Ok((run, sections)) => {
                flips.push((*seed, sections));
                runs.push(run);
            }
            Err(e) => failures.push(format!("seed {seed}: {e}")),
        }
    }
    let perturbed: Vec<f64> = runs.iter().map(|r| r.perturbed_acc).collect();
    let clean: Vec<f64> = runs.iter().map(|r| r.clean_acc).collect();
    let (mean_acc, se_acc) = mean_se(&perturbed);
    let (mean_clean_acc, se_clean_acc) = mean_se(&clean);
    let report = AttackReport {
        model: cfg.model.arch.name().to_string(),
        dataset: cfg.dataset.name(),
        defense: cfg.defense.name().to_string(),
        mode: cfg.mode,
        attack: cfg.attack,
        budget,
        budget_fraction: cfg.budget_fraction,
        mean_acc,
        se_acc,
        mean_clean_acc,
        se_clean_acc,
        runs,
        runtime_s: cfg.record_wall_clock.then(|| started.elapsed().as_secs_f64()),
        sweep: None,
        failure: (!failures.is_empty()).then(|| failures.join("; ")),
        config: cfg.clone(),
    };
    Ok(Experiment { report, flips })
}

/// One report per value, all sharing the seeds of `cfg`.
pub fn run_sweep(cfg: &ExperimentConfig, param: SweepParam, values: &[f64]) -> Result<Vec<Experiment>> {
    if values.is_empty() {
        return Err(Error::InvalidConfig("sweep needs at least one value".into()));
    }
    let configs = values
        .iter()
        .map(|&v| param.apply(cfg, v))
        .collect::<Result<Vec<_>>>()?;
    let workers = workers_from_env();
    let mut out = Vec::with_capacity(values.len());
    for (c, &value) in configs.iter().zip(values) {
        let mut e = run_experiment_with(c, workers)?;
        let dir = format!("{}_{}", param.name(), value);
        for r in &mut e.report.runs {
            r.flips_file = format!("flips/{dir}/{}.csv", r.seed);
        }
        e.report.sweep = Some(SweepPoint { param, value });
        out.push(e);
    }
    Ok(out)
}

fn attack_targets(
    cfg: &ExperimentConfig,
    graph: &Graph,
    splits: &Splits,
    attacker: Option<&ModelParams>,
) -> Result<Targets> {
    let mut labels = graph.labels().to_vec();
    if cfg.label_source == LabelSource::SelfTrain {
        let model =
            attacker.ok_or_else(|| Error::InvalidConfig("self-training labels need an attacker model".into()))?;
        let predicted = predict(&model.logits_on(graph)?);
        for &v in &splits.test {
            labels[v] = predicted[v];
        }
    }
    Ok(Targets::new(splits.test.clone(), labels)?)
}

fn run_seed(cfg: &ExperimentConfig, graph: &Graph, budget: usize, seed: u64) -> Result<(SeedResult, Vec<FlipSection>)> {
    let started = Instant::now();
    let splits = make_splits(
        graph,
        cfg.labels_per_class,
        cfg.test_fraction,
        cfg.mode,
        derive_seed(seed, stream::SPLIT),
    )?;
    let defended = cfg.defense.apply(graph)?;
    let victim = train_victim(
        &cfg.model,
        &defended,
        &splits,
        &cfg.victim,
        derive_seed(seed, stream::VICTIM),
    )?;
    let clean_acc = victim.accuracy(&defended, &splits.test)?;
    let attack_seed = derive_seed(seed, stream::ATTACK);
    let acfg = &cfg.attack_config;

    // The attacker never queries the victim's weights in black-box mode; it
    // trains its own surrogate on the graph it sees.
    let needs_surrogate = cfg.attack == AttackKind::Evasion || cfg.label_source == LabelSource::SelfTrain;
    let surrogate = if cfg.attack == AttackKind::Clean {
        None
    } else if cfg.white_box {
        Some(victim.clone())
    } else if needs_surrogate {
        Some(train_victim(
            &cfg.model,
            graph,
            &splits,
            &acfg.surrogate,
            derive_seed(seed, stream::SURROGATE),
        )?)
    } else {
        None
    };

    let retrain = |g: &Graph| -> Result<ModelParams> {
        Ok(train_victim(
            &cfg.model,
            g,
            &splits,
            &cfg.victim,
            derive_seed(seed, stream::RETRAIN),
        )?)
    };
    let section = |stage, budget, set: EdgeFlipSet| FlipSection {
        stage,
        budget,
        seed: attack_seed,
        set,
    };

    let (perturbed_acc, sections) = match cfg.attack {
        AttackKind::Clean => (clean_acc, Vec::new()),
        AttackKind::Evasion => {
            let targets = attack_targets(cfg, graph, &splits, surrogate.as_ref())?;
            let model = surrogate.as_ref().expect("evasion always has an attacker model");
            let flips = evasion_attack(model, graph, &targets, budget, acfg, attack_seed)?;
            let attacked = cfg.defense.apply(&flips.apply(graph)?)?;
            let acc = victim.accuracy(&attacked, &splits.test)?;
            (acc, vec![section(Stage::Evasion, budget, flips)])
        }
        AttackKind::Poisoning => {
            let targets = attack_targets(cfg, graph, &splits, surrogate.as_ref())?;
            let flips = poison_attack(&cfg.model, graph, &splits, &targets, budget, acfg, attack_seed)?;
            let poisoned = cfg.defense.apply(&flips.apply(graph)?)?;
            let acc = retrain(&poisoned)?.accuracy(&poisoned, &splits.test)?;
            (acc, vec![section(Stage::Poisoning, budget, flips)])
        }
        AttackKind::Sequential | AttackKind::Joint => {
            let targets = attack_targets(cfg, graph, &splits, surrogate.as_ref())?;
            let attack = if cfg.attack == AttackKind::Joint {
                joint_attack
            } else {
                sequential_attack
            };
            let SymbioticFlips { poison, evasion } =
                attack(&cfg.model, graph, &splits, &targets, budget, acfg, attack_seed)?;
            let poisoned_raw = poison.apply(graph)?;
            let poisoned = cfg.defense.apply(&poisoned_raw)?;
            let attacked = cfg.defense.apply(&evasion.apply(&poisoned_raw)?)?;
            let acc = retrain(&poisoned)?.accuracy(&attacked, &splits.test)?;
            let (pb, eb) = acfg.split_budget(budget);
            (
                acc,
                vec![
                    section(Stage::Poisoning, pb, poison),
                    section(Stage::Evasion, eb, evasion),
                ],
            )
        }
    };
    let count = |stage| {
        sections
            .iter()
            .filter(|s: &&FlipSection| s.stage == stage)
            .map(|s| s.set.len())
            .sum()
    };
    let result = SeedResult {
        seed,
        clean_acc,
        perturbed_acc,
        poison_flips: count(Stage::Poisoning),
        evasion_flips: count(Stage::Evasion),
        flips_file: format!("flips/{seed}.csv"),
        runtime_s: cfg.record_wall_clock.then(|| started.elapsed().as_secs_f64()),
    };
    Ok((result, sections))
}
