use autodiff::functional::masked_cross_entropy;
use autodiff::gradcheck::{numeric_gradient, relative_error};
use autodiff::{Matrix, Tape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use symbiosis::graph::{make_splits, synthetic, Graph, Mode, Splits};
use symbiosis::models::{forward, init_model, Architecture, Dims, GraphInput, ModelConfig, Phase, Structure};
use symbiosis::training::{
    fit, params_from_tape, train_victim, unrolled_meta_gradient, unrolled_train, TrainConfig, TrainingData,
};
use symbiosis::Error;

fn tiny_gcn() -> ModelConfig {
    ModelConfig {
        hidden: 4,
        ..ModelConfig::new(Architecture::Gcn)
    }
}

struct Toy {
    x: Matrix,
    pairs: Vec<(usize, usize)>,
    labels: Vec<usize>,
}

fn toy() -> Toy {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    Toy {
        x: Matrix::from_vec(6, 3, (0..18).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap(),
        pairs: vec![(0, 1), (0, 2), (1, 2), (2, 3), (3, 4), (3, 5), (4, 5)],
        labels: vec![0, 0, 0, 1, 1, 1],
    }
}

fn sgd(steps: usize) -> TrainConfig {
    TrainConfig {
        epochs: steps,
        ..TrainConfig::unrolled()
    }
}

#[test]
fn zero_steps_returns_init() {
    let t = toy();
    let init = init_model(
        &tiny_gcn(),
        Dims {
            features: 3,
            classes: 2,
        },
        0,
    )
    .unwrap();
    let input = GraphInput::from_features(&t.x);
    let s = Structure::new(6, &t.pairs).unwrap();
    let mut tape = Tape::new();
    let w = tape.param(Matrix::filled(t.pairs.len(), 1, 1.0)).unwrap();
    let theta = unrolled_train(&mut tape, &init, &input, &s, w, &t.labels, &[0, 5], &sgd(0)).unwrap();
    assert_eq!(params_from_tape(&tape, &init, &theta).unwrap(), init);
}

/// Post-training cross-entropy on nodes {1, 4} as a function of the pair
/// weights, after `steps` unrolled SGD steps on labeled nodes {0, 5}.
fn meta_loss(tape: &mut Tape, w: autodiff::Var, steps: usize) -> symbiosis::Result<autodiff::Var> {
    let t = toy();
    let init = init_model(
        &tiny_gcn(),
        Dims {
            features: 3,
            classes: 2,
        },
        3,
    )?;
    let input = GraphInput::from_features(&t.x);
    let s = Structure::new(6, &t.pairs)?;
    let theta = unrolled_train(tape, &init, &input, &s, w, &t.labels, &[0, 5], &sgd(steps))?;
    let logits = forward(tape, init.config(), &theta, &input, &s, w, Phase::Eval)?;
    Ok(masked_cross_entropy(tape, logits, &t.labels, &[1, 4])?)
}

#[test]
fn meta_gradient_matches_finite_differences() {
    let w0 = Matrix::column(vec![0.9, 0.7, 0.8, 0.3, 0.6, 0.75, 0.85]);
    let mut tape = Tape::new();
    let w = tape.param(w0.clone()).unwrap();
    let loss = meta_loss(&mut tape, w, 5).unwrap();
    let analytic = tape.backward(loss).unwrap().wrt(&tape, w).unwrap();
    let numeric = numeric_gradient(
        |p| {
            let mut t = Tape::new();
            let w = t.constant(p.clone())?;
            let l = meta_loss(&mut t, w, 5).unwrap();
            Ok(t.value(l).item())
        },
        &w0,
        1e-4,
    )
    .unwrap();
    for (a, n) in analytic.as_slice().iter().zip(numeric.as_slice()) {
        assert!(relative_error(*a, *n) <= 1e-3, "analytic {a} numeric {n}");
    }
    assert!(analytic.as_slice().iter().any(|g| g.abs() > 1e-6));
}

#[test]
fn replayed_meta_gradient_matches_single_tape() {
    let t = toy();
    let w0 = vec![0.9, 0.7, 0.8, 0.3, 0.6, 0.75, 0.85];
    let input = GraphInput::from_features(&t.x);
    let s = Structure::new(6, &t.pairs).unwrap();
    for arch in Architecture::ALL {
        let model = ModelConfig {
            hidden: 4,
            heads: 2,
            hops: 3,
            ..ModelConfig::new(arch)
        };
        let init = init_model(
            &model,
            Dims {
                features: 3,
                classes: 2,
            },
            5,
        )
        .unwrap();
        let cfg = sgd(12);
        let outer = |tape: &mut Tape, theta: &[autodiff::Var], w: autodiff::Var| {
            let logits = forward(tape, &model, theta, &input, &s, w, Phase::Eval)?;
            Ok(masked_cross_entropy(tape, logits, &t.labels, &[1, 2, 4])?)
        };

        let mut tape = Tape::new();
        let w = tape.param(Matrix::column(w0.clone())).unwrap();
        let theta = unrolled_train(&mut tape, &init, &input, &s, w, &t.labels, &[0, 5], &cfg).unwrap();
        let loss = outer(&mut tape, &theta, w).unwrap();
        let expected = tape.backward(loss).unwrap().wrt(&tape, w).unwrap();
        let trained = params_from_tape(&tape, &init, &theta).unwrap();

        let meta = unrolled_meta_gradient(&init, &input, &s, &w0, &t.labels, &[0, 5], &cfg, outer).unwrap();
        assert!((meta.loss - tape.value(loss).item()).abs() <= 1e-12, "{arch}");
        for (a, b) in meta.trained.tensors().iter().zip(trained.tensors()) {
            assert!(a.max_abs_diff(b) <= 1e-12, "{arch}");
        }
        let scale = expected.as_slice().iter().fold(0.0f64, |m, g| m.max(g.abs()));
        assert!(scale > 1e-6, "{arch}");
        for (a, b) in meta.weights.iter().zip(expected.as_slice()) {
            assert!((a - b).abs() <= 1e-9 * scale, "{arch}: {a} vs {b}");
        }
    }
}

#[test]
fn unrolled_matches_eager_sgd() {
    let t = toy();
    let init = init_model(
        &tiny_gcn(),
        Dims {
            features: 3,
            classes: 2,
        },
        8,
    )
    .unwrap();
    let input = GraphInput::from_features(&t.x);
    let s = Structure::new(6, &t.pairs).unwrap();
    let weights = vec![1.0; t.pairs.len()];
    let cfg = sgd(30);
    let eager = fit(
        init.clone(),
        &TrainingData {
            input: &input,
            structure: &s,
            weights: &weights,
            labels: &t.labels,
            train_nodes: &[0, 1, 5],
            val_nodes: &[],
        },
        &cfg,
        8,
    )
    .unwrap()
    .params;
    let mut tape = Tape::new();
    let w = tape.param(Matrix::column(weights.clone())).unwrap();
    let theta = unrolled_train(&mut tape, &init, &input, &s, w, &t.labels, &[0, 1, 5], &cfg).unwrap();
    let unrolled = params_from_tape(&tape, &init, &theta).unwrap();
    for (a, b) in eager.tensors().iter().zip(unrolled.tensors()) {
        assert!(a.max_abs_diff(b) <= 1e-10);
    }
    assert_ne!(eager, init);
}

#[test]
fn unrolled_is_pure_and_memory_linear() {
    let run = |steps: usize| {
        let mut tape = Tape::new();
        let w = tape.param(Matrix::filled(7, 1, 0.5)).unwrap();
        let loss = meta_loss(&mut tape, w, steps).unwrap();
        let g = tape.backward(loss).unwrap().wrt(&tape, w).unwrap();
        (tape.value(loss).item(), g, tape.memory_bytes())
    };
    let (l1, g1, _) = run(6);
    let (l2, g2, _) = run(6);
    assert_eq!(l1.to_bits(), l2.to_bits());
    assert_eq!(g1, g2);

    let (_, _, m5) = run(5);
    let (_, _, m10) = run(10);
    let (_, _, m20) = run(20);
    let per_step_a = (m10 - m5) as f64 / 5.0;
    let per_step_b = (m20 - m10) as f64 / 10.0;
    assert!(
        (per_step_a - per_step_b).abs() <= 0.02 * per_step_a,
        "{per_step_a} vs {per_step_b}"
    );
}

#[test]
fn memory_cap_is_enforced() {
    let t = toy();
    let init = init_model(
        &tiny_gcn(),
        Dims {
            features: 3,
            classes: 2,
        },
        0,
    )
    .unwrap();
    let input = GraphInput::from_features(&t.x);
    let s = Structure::new(6, &t.pairs).unwrap();
    let mut tape = Tape::new();
    let w = tape.param(Matrix::filled(t.pairs.len(), 1, 1.0)).unwrap();
    let cfg = TrainConfig {
        memory_cap_bytes: Some(200_000),
        ..sgd(100)
    };
    let err = unrolled_train(&mut tape, &init, &input, &s, w, &t.labels, &[0, 5], &cfg).unwrap_err();
    assert!(matches!(err, Error::MemoryCap { cap: 200_000, .. }));
}

#[test]
fn unrolled_rejects_adam_and_dropout() {
    let t = toy();
    let init = init_model(
        &tiny_gcn(),
        Dims {
            features: 3,
            classes: 2,
        },
        0,
    )
    .unwrap();
    let input = GraphInput::from_features(&t.x);
    let s = Structure::new(6, &t.pairs).unwrap();
    let mut tape = Tape::new();
    let w = tape.param(Matrix::filled(t.pairs.len(), 1, 1.0)).unwrap();
    for cfg in [TrainConfig::victim(), TrainConfig { dropout: 0.5, ..sgd(3) }] {
        assert!(unrolled_train(&mut tape, &init, &input, &s, w, &t.labels, &[0], &cfg).is_err());
    }
}

/// Two triangles joined by one edge; features identify the cluster and
/// the two bridge nodes are the labeled ones.
fn two_clusters() -> (Graph, Splits) {
    let x = Matrix::from_rows(&[
        vec![1.0, 0.0],
        vec![1.0, 0.0],
        vec![1.0, 0.0],
        vec![0.0, 1.0],
        vec![0.0, 1.0],
        vec![0.0, 1.0],
    ])
    .unwrap();
    let g = Graph::new(
        6,
        [(0, 1), (0, 2), (1, 2), (2, 3), (3, 4), (3, 5), (4, 5)],
        x,
        vec![0, 0, 0, 1, 1, 1],
        2,
    )
    .unwrap();
    let splits = Splits {
        labeled_train: vec![2, 3],
        unlabeled_train: vec![],
        validation: vec![1, 4],
        test: vec![0, 5],
        mode: Mode::Transductive,
    };
    (g, splits)
}

#[test]
fn separable_toy_is_learned_by_every_architecture() {
    let (g, splits) = two_clusters();
    for arch in Architecture::ALL {
        let cfg = ModelConfig::new(arch);
        let p = train_victim(&cfg, &g, &splits, &TrainConfig::victim(), 1).unwrap();
        assert_eq!(p.accuracy(&g, &[0, 1, 2, 3, 4, 5]).unwrap(), 1.0, "{arch}");
        let ind = Splits {
            mode: Mode::Inductive,
            ..splits.clone()
        };
        let p = train_victim(&cfg, &g, &ind, &TrainConfig::victim(), 1).unwrap();
        assert_eq!(p.accuracy(&g, &[0, 5]).unwrap(), 1.0, "{arch} inductive");
    }
}

#[test]
fn victim_training_is_deterministic_and_learns_synthetic_graph() {
    let g = synthetic::citation_like(&synthetic::SyntheticConfig::default(), 4).unwrap();
    let splits = make_splits(&g, 20, 0.1, Mode::Transductive, 4).unwrap();
    let cfg = ModelConfig::new(Architecture::Gcn);
    let a = train_victim(&cfg, &g, &splits, &TrainConfig::victim(), 9).unwrap();
    let b = train_victim(&cfg, &g, &splits, &TrainConfig::victim(), 9).unwrap();
    assert_eq!(a, b);
    let acc = a.accuracy(&g, &splits.test).unwrap();
    assert!(acc > 0.8, "accuracy {acc}");
}

#[test]
fn divergence_is_reported() {
    let (g, splits) = two_clusters();
    let cfg = TrainConfig {
        optimizer: symbiosis::training::Optimizer::SgdMomentum,
        lr: 1e200,
        patience: None,
        ..TrainConfig::victim()
    };
    let err = train_victim(&ModelConfig::new(Architecture::Gcn), &g, &splits, &cfg, 0).unwrap_err();
    assert!(matches!(err, Error::Diverged { .. } | Error::Autodiff(_)), "{err}");
}
