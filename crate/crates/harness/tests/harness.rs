use std::path::Path;
use std::process::Command;

use harness::config::SyntheticSource;
use harness::experiment::{mean_se, stream};
use harness::report::{from_json, to_csv, to_json, write_outputs, CSV_COLUMNS};
use harness::{run_experiment_with, run_sweep, AttackKind, DatasetSource, Defense, ExperimentConfig, SweepParam};
use symbiosis::flips::{read_sections, Stage};
use symbiosis::graph::make_splits;
use symbiosis::graph::synthetic::SyntheticConfig;
use symbiosis::seeds::derive_seed;
use symbiosis::Mode;

fn synthetic() -> DatasetSource {
    DatasetSource::Synthetic(SyntheticSource {
        synthetic: SyntheticConfig {
            num_nodes: 90,
            num_classes: 3,
            feature_dim: 30,
            avg_degree: 4.0,
            p_in: 0.3,
            p_out: 0.05,
            ..SyntheticConfig::default()
        },
        seed: 3,
    })
}

fn quick(attack: AttackKind) -> ExperimentConfig {
    let mut cfg: ExperimentConfig = serde_json::from_value(serde_json::json!({
        "dataset": serde_json::to_value(synthetic()).unwrap(),
        "model": { "arch": "gcn", "hidden": 8 },
        "attack": attack,
        "budget_fraction": 0.1,
        "seeds": [0, 1, 2],
        "labels_per_class": 5,
        "test_fraction": 0.2,
        "victim": { "epochs": 60, "patience": 30 },
        "attack_config": {
            "iterations": 6,
            "final_samples": 5,
            "inner_iterations": 2,
            "unrolled": { "epochs": 10 },
            "surrogate": { "epochs": 60, "patience": 30 }
        }
    }))
    .unwrap();
    cfg.validate().unwrap();
    cfg.attack_config.unrolled.memory_cap_bytes = None;
    cfg
}

#[test]
fn config_defaults_and_validation() {
    let text = r#"{ "dataset": "data/cora", "attack": "joint", "seeds": [0] }"#;
    let cfg = ExperimentConfig::from_json(text, Path::new("c.json")).unwrap();
    assert_eq!(cfg.dataset, DatasetSource::Path("data/cora".into()));
    assert_eq!(cfg.dataset.name(), "cora");
    assert_eq!(cfg.budget_fraction, 0.05);
    assert_eq!(cfg.labels_per_class, 20);
    assert_eq!(cfg.test_fraction, 0.1);
    assert_eq!(cfg.defense, Defense::None);
    assert_eq!(cfg.mode, Mode::Transductive);
    assert_eq!(cfg.attack_config.iterations, 125);
    assert_eq!(cfg.attack_config.alpha, 0.5);
    assert!(!cfg.white_box && !cfg.record_wall_clock);

    let jaccard = r#"{ "dataset": "d", "attack": "clean", "seeds": [1], "defense": { "jaccard": {} } }"#;
    let cfg = ExperimentConfig::from_json(jaccard, Path::new("c.json")).unwrap();
    assert_eq!(
        cfg.defense,
        Defense::Jaccard {
            threshold: 0.01,
            purify_input: false
        }
    );

    for bad in [
        r#"{ "dataset": "d", "attack": "joint", "seeds": [] }"#,
        r#"{ "dataset": "d", "attack": "joint", "seeds": [0], "budget_fraction": -0.1 }"#,
        r#"{ "dataset": "d", "attack": "joint", "seeds": [0], "test_fraction": 1.0 }"#,
        r#"{ "dataset": "d", "attack": "mystery", "seeds": [0] }"#,
        r#"{ "dataset": "d", "attack": "joint", "seeds": [0], "budget": 3 }"#,
        r#"{ "dataset": "d", "attack": "joint", "seeds": [0], "attack_config": { "alpha": 2.0 } }"#,
        r#"{ "dataset": "d", "attack": "joint", "seeds": [0], "model": { "arch": "mlp" } }"#,
    ] {
        assert!(ExperimentConfig::from_json(bad, Path::new("c.json")).is_err(), "{bad}");
    }
}

#[test]
fn mean_and_standard_error() {
    let (m, se) = mean_se(&[0.5, 0.7, 0.6, 0.8]);
    // Sample variance of {0.5, 0.6, 0.7, 0.8} is 0.05 / 3.
    assert!((m - 0.65).abs() < 1e-15);
    assert!((se - (0.05f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
    assert_eq!(mean_se(&[0.3]), (0.3, 0.0));
}

#[test]
fn clean_run_ignores_attack_parameters() {
    let a = run_experiment_with(&quick(AttackKind::Clean), 1).unwrap().report;
    let mut cfg = quick(AttackKind::Clean);
    cfg.budget_fraction = 0.3;
    cfg.attack_config.alpha = 0.9;
    cfg.attack_config.inner_iterations = 7;
    let b = run_experiment_with(&cfg, 1).unwrap().report;
    assert_eq!(a.budget, 0);
    for (x, y) in a.runs.iter().zip(&b.runs) {
        assert_eq!(x.perturbed_acc, x.clean_acc);
        assert_eq!(x.clean_acc, y.clean_acc);
        assert_eq!(x.perturbed_acc, y.perturbed_acc);
    }
    assert!(a.mean_clean_acc > 0.6, "clean accuracy {}", a.mean_clean_acc);
}

#[test]
fn reports_are_deterministic_and_independent_of_workers() {
    let cfg = quick(AttackKind::Sequential);
    let a = run_experiment_with(&cfg, 1).unwrap();
    let b = run_experiment_with(&cfg, 1).unwrap();
    let c = run_experiment_with(&cfg, 3).unwrap();
    let csv = |e: &harness::Experiment| to_csv(std::slice::from_ref(&e.report)).unwrap();
    let json = |e: &harness::Experiment| to_json(std::slice::from_ref(&e.report)).unwrap();
    assert_eq!(csv(&a), csv(&b));
    assert_eq!(json(&a), json(&b));
    assert_eq!(csv(&a), csv(&c));
    for ((_, x), (_, y)) in a.flips.iter().zip(&c.flips) {
        assert_eq!(x, y);
    }

    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    write_outputs(dir_a.path(), &[a]).unwrap();
    write_outputs(dir_b.path(), &[b]).unwrap();
    for f in ["report.csv", "report.json", "flips/0.csv", "flips/2.csv"] {
        let x = std::fs::read(dir_a.path().join(f)).unwrap();
        let y = std::fs::read(dir_b.path().join(f)).unwrap();
        assert_eq!(x, y, "{f}");
    }
}

#[test]
fn report_schema_and_json_round_trip() {
    let mut cfg = quick(AttackKind::Evasion);
    cfg.seeds = (10..15).collect();
    let report = run_experiment_with(&cfg, 1).unwrap().report;
    assert_eq!(report.runs.len(), 5);
    assert!((0.0..=1.0).contains(&report.mean_acc) && report.se_acc >= 0.0);
    assert!(report.runtime_s.is_none() && report.failure.is_none());

    let csv = String::from_utf8(to_csv(std::slice::from_ref(&report)).unwrap()).unwrap();
    let mut rows = csv::Reader::from_reader(csv.as_bytes());
    let header: Vec<String> = rows.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, CSV_COLUMNS);
    assert_eq!(
        &header[..10],
        [
            "model",
            "dataset",
            "defense",
            "mode",
            "attack",
            "budget",
            "mean_acc",
            "se_acc",
            "seeds",
            "runtime_s"
        ]
    );
    let records: Vec<csv::StringRecord> = rows.records().map(Result::unwrap).collect();
    assert_eq!(records.len(), 6);
    assert_eq!(&records[0][10], "summary");
    assert_eq!(&records[0][8], "5");
    assert_eq!(records[0][6].parse::<f64>().unwrap(), report.mean_acc);
    for (r, run) in records[1..].iter().zip(&report.runs) {
        assert_eq!(&r[10], "seed");
        assert_eq!(r[11].parse::<u64>().unwrap(), run.seed);
        assert_eq!(r[13].parse::<f64>().unwrap(), run.perturbed_acc);
    }

    let json = String::from_utf8(to_json(std::slice::from_ref(&report)).unwrap()).unwrap();
    let back = from_json(&json, Path::new("report.json")).unwrap();
    assert_eq!(back, vec![report]);
}

#[test]
fn evasion_lowers_accuracy() {
    let mut cfg = quick(AttackKind::Evasion);
    cfg.budget_fraction = 0.2;
    cfg.attack_config.iterations = 20;
    let r = run_experiment_with(&cfg, 1).unwrap().report;
    assert!(
        r.mean_acc < r.mean_clean_acc - 0.05,
        "{} vs {}",
        r.mean_acc,
        r.mean_clean_acc
    );
    for run in &r.runs {
        assert!(run.evasion_flips <= r.budget && run.poison_flips == 0);
    }
}

#[test]
fn flip_files_match_the_report() {
    let cfg = quick(AttackKind::Joint);
    let e = run_experiment_with(&cfg, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_outputs(dir.path(), std::slice::from_ref(&e)).unwrap();
    let (pb, eb) = cfg.attack_config.split_budget(e.report.budget);
    for run in &e.report.runs {
        let sections = read_sections(dir.path().join(&run.flips_file)).unwrap();
        assert_eq!(sections.len(), 2);
        assert_eq!((sections[0].stage, sections[0].budget), (Stage::Poisoning, pb));
        assert_eq!((sections[1].stage, sections[1].budget), (Stage::Evasion, eb));
        assert_eq!(sections[0].set.len(), run.poison_flips);
        assert_eq!(sections[1].set.len(), run.evasion_flips);
        assert!(run.poison_flips <= pb && run.evasion_flips <= eb);
        assert_eq!(sections[0].seed, derive_seed(run.seed, stream::ATTACK));
    }
}

#[test]
fn inductive_poisoning_spares_test_nodes() {
    let mut cfg = quick(AttackKind::Poisoning);
    cfg.mode = Mode::Inductive;
    cfg.seeds = vec![4, 5];
    let e = run_experiment_with(&cfg, 1).unwrap();
    let graph = cfg.dataset.load().unwrap();
    for (seed, sections) in &e.flips {
        let splits = make_splits(
            &graph,
            cfg.labels_per_class,
            cfg.test_fraction,
            Mode::Inductive,
            derive_seed(*seed, stream::SPLIT),
        )
        .unwrap();
        let flips = sections[0].set.flips();
        assert!(!flips.is_empty());
        for &(i, j) in flips {
            assert!(!splits.test.contains(&i) && !splits.test.contains(&j), "({i}, {j})");
        }
    }
}

#[test]
fn jaccard_defense_runs_on_received_graphs() {
    let mut cfg = quick(AttackKind::Sequential);
    cfg.seeds = vec![0];
    cfg.defense = Defense::Jaccard {
        threshold: 0.01,
        purify_input: false,
    };
    let r = run_experiment_with(&cfg, 1).unwrap().report;
    assert_eq!(r.defense, "jaccard");
    assert!((0.0..=1.0).contains(&r.mean_acc));
    cfg.defense = Defense::Jaccard {
        threshold: 0.01,
        purify_input: true,
    };
    let purified = run_experiment_with(&cfg, 1).unwrap().report;
    assert!(purified.budget <= r.budget);
}

#[test]
fn sweeps() {
    let cfg = quick(AttackKind::Evasion);
    let single = run_sweep(&cfg, SweepParam::BudgetFraction, &[cfg.budget_fraction]).unwrap();
    let direct = run_experiment_with(&cfg, 1).unwrap().report;
    assert_eq!(single.len(), 1);
    let mut swept = single[0].report.clone();
    assert_eq!(swept.sweep.as_ref().unwrap().param, SweepParam::BudgetFraction);
    swept.sweep = None;
    for r in &mut swept.runs {
        assert_eq!(r.flips_file, format!("flips/budget_fraction_0.1/{}.csv", r.seed));
        r.flips_file = format!("flips/{}.csv", r.seed);
    }
    assert_eq!(swept, direct);

    let budgets = run_sweep(&cfg, SweepParam::BudgetFraction, &[0.0, 0.2]).unwrap();
    assert_eq!(budgets[0].report.budget, 0);
    assert_eq!(budgets[0].report.mean_acc, budgets[0].report.mean_clean_acc);
    assert!(budgets[1].report.mean_acc <= budgets[0].report.mean_acc);

    let blocks = run_sweep(&cfg, SweepParam::BlockSize, &[50.0]).unwrap();
    assert_eq!(blocks[0].report.config.attack_config.block_size, Some(50));

    assert!(run_sweep(&cfg, SweepParam::BudgetFraction, &[]).is_err());
    assert!(run_sweep(&cfg, SweepParam::InnerIterations, &[1.0]).is_err());
    assert!(run_sweep(&cfg, SweepParam::BlockSize, &[2.5]).is_err());
    assert!(run_sweep(&quick(AttackKind::Clean), SweepParam::BudgetFraction, &[0.1]).is_err());
}

#[test]
fn failing_seeds_are_marked() {
    let mut cfg = quick(AttackKind::Clean);
    cfg.labels_per_class = 1000;
    let e = run_experiment_with(&cfg, 1).unwrap();
    assert!(e.report.runs.is_empty());
    let failure = e.report.failure.unwrap();
    assert!(failure.contains("seed 0") && failure.contains("seed 2"), "{failure}");
}

#[test]
fn cli_run_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick(AttackKind::Evasion);
    cfg.seeds = vec![0, 1];
    let config = dir.path().join("config.json");
    std::fs::write(&config, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();

    let out = dir.path().join("run");
    let status = Command::new(env!("CARGO_BIN_EXE_attack"))
        .args(["run", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .env("ATTACK_WORKERS", "2")
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    for f in ["report.csv", "report.json", "flips/0.csv", "flips/1.csv"] {
        assert!(out.join(f).is_file(), "{f}");
    }

    let out = dir.path().join("sweep");
    let status = Command::new(env!("CARGO_BIN_EXE_attack"))
        .args(["sweep", "--param", "test_fraction", "--values", "0.1,0.3", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 3);
    assert!(out.join("flips/test_fraction_0.3/1.csv").is_file());

    let status = Command::new(env!("CARGO_BIN_EXE_attack"))
        .args(["sweep", "--param", "budget", "--values", "0.1", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(!status.status.success());
}
