use std::sync::Arc;

use jobshop_core::instance::{generate_taillard, stochasticize};
use jobshop_core::rewire::{features, Edge};
use jobshop_core::{seed, Instance, RewireOptions, RewiredGraph, State};
use jobshop_gnn::{forward, ActMode, GnnError, GraphBatch, NetworkConfig, Params, Policy, Pooling};
use rand::seq::SliceRandom;
use rand::Rng;

fn random_state(n: usize, m: usize, k: u64) -> State {
    let inst = stochasticize(&generate_taillard(n, m, k).unwrap(), k, 0.95, 1.1).unwrap();
    let mut rng = seed::rng(k ^ 0xabc);
    let mut state = State::reset(Arc::new(inst));
    let steps = rng.random_range(0..n * m);
    for _ in 0..steps {
        let legal = state.legal_ops();
        state.step(legal[rng.random_range(0..legal.len())]).unwrap();
    }
    state
}

/// Moves operation node `i` to `perm[i]`; the global node stays last.
fn relabel(g: &RewiredGraph, perm: &[usize]) -> RewiredGraph {
    let map = |v: usize| if v < g.n_ops { perm[v] } else { v };
    let mut features = g.features.clone();
    let mut mask = g.mask.clone();
    for i in 0..g.n_ops {
        features[perm[i]] = g.features[i];
        mask[perm[i]] = g.mask[i];
    }
    RewiredGraph {
        n_nodes: g.n_nodes,
        n_ops: g.n_ops,
        edges: g
            .edges
            .iter()
            .map(|e| Edge {
                src: map(e.src),
                dst: map(e.dst),
                ty: e.ty,
            })
            .collect(),
        features,
        mask,
    }
}

fn check_equivariance<S: jobshop_gnn::Scalar>(pooling: Pooling, tol: f64) {
    let cfg = NetworkConfig {
        pooling,
        ..Default::default()
    };
    let p = Params::<S>::init(&cfg, 5).unwrap();
    let mut rng = seed::rng(77);
    for k in 0..20 {
        let (n, m) = (rng.random_range(1..6), rng.random_range(1..6));
        let g = features(&random_state(n, m, k), cfg.rewire_options());
        let mut perm: Vec<usize> = (0..g.n_ops).collect();
        perm.shuffle(&mut rng);
        let h = relabel(&g, &perm);
        let a = forward(&p, &GraphBatch::new(&[&g]).unwrap(), false).unwrap();
        let b = forward(&p, &GraphBatch::new(&[&h]).unwrap(), false).unwrap();
        for i in 0..g.n_ops {
            let (x, y) = (a.logits[i].as_f64(), b.logits[perm[i]].as_f64());
            assert!((x - y).abs() <= tol, "graph {k} node {i}: {x} vs {y}");
        }
        let (x, y) = (a.values[0].as_f64(), b.values[0].as_f64());
        assert!((x - y).abs() <= tol, "graph {k} value: {x} vs {y}");
    }
}

#[test]
fn relabeling_permutes_logits() {
    check_equivariance::<f32>(Pooling::MeanMax, 1e-6);
    check_equivariance::<f64>(Pooling::MeanMax, 1e-12);
    check_equivariance::<f64>(Pooling::LearnedNode, 1e-12);
}

#[test]
fn single_node_has_probability_one() {
    let inst = Arc::new(Instance::deterministic(vec![vec![7.0]], vec![vec![0]]).unwrap());
    for pooling in [Pooling::MeanMax, Pooling::LearnedNode] {
        let policy = Policy::<f32>::init(
            &NetworkConfig {
                pooling,
                ..Default::default()
            },
            11,
        )
        .unwrap();
        let out = policy.evaluate(&[&policy.observe(&State::reset(inst.clone()))]).unwrap();
        assert_eq!(out[0].probs(), vec![1.0]);
        assert_eq!(out[0].entropy, 0.0);
    }
}

#[test]
fn masked_mass_and_sizes() {
    let policy = Policy::<f32>::init(&NetworkConfig::default(), 3).unwrap();
    for (n, m) in [(6, 6), (20, 20)] {
        let state = random_state(n, m, 4);
        let out = policy.evaluate(&[&policy.observe(&state)]).unwrap().remove(0);
        assert_eq!(out.logits.len(), n * m);
        let probs = out.probs();
        let legal = state.legal_actions();
        let total: f64 = probs.iter().zip(&legal).filter(|(_, &l)| l).map(|(p, _)| p).sum();
        assert!((total - 1.0).abs() < 1e-6);
        assert!(probs.iter().zip(&legal).all(|(&p, &l)| l || p == 0.0));
    }
}

#[test]
fn argmax_rollout_is_legal_and_repeatable() {
    let policy = Policy::<f32>::init(&NetworkConfig::default(), 8).unwrap();
    let inst = Arc::new(generate_taillard(4, 3, 2).unwrap());
    let a = policy.rollout_argmax(State::reset(inst.clone())).unwrap();
    let b = policy.rollout_argmax(State::reset(inst)).unwrap();
    assert!(a.is_terminal());
    assert_eq!(a.dispatch_order(), b.dispatch_order());
    let mut rng = seed::rng(0);
    let g = policy.observe(&random_state(3, 3, 1));
    let act = policy.act(&g, ActMode::Sample, &mut rng).unwrap();
    assert!(g.mask[act.op]);
    assert!(act.log_prob <= 0.0);
}

#[test]
fn errors_are_reported() {
    let mut p = Params::<f32>::init(&NetworkConfig::default(), 0).unwrap();
    let g = features(&random_state(3, 3, 0), RewireOptions::default());
    let batch = GraphBatch::new(&[&g]).unwrap();
    let w = p.tensors.iter().position(|t| t.name == "layer.3.ffn.b2").unwrap();
    p.tensors[w].data[0] = f32::NAN;
    assert!(matches!(forward(&p, &batch, false), Err(GnnError::NonFinite { layer: 4 })));

    let tiny = Params::<f32>::init(
        &NetworkConfig {
            max_machines: 2,
            ..Default::default()
        },
        0,
    )
    .unwrap();
    assert!(matches!(
        forward(&tiny, &batch, false),
        Err(GnnError::MachineOutOfRange { machine: 2, max: 2 })
    ));

    let learned = Params::<f32>::init(
        &NetworkConfig {
            pooling: Pooling::LearnedNode,
            ..Default::default()
        },
        0,
    )
    .unwrap();
    assert!(matches!(forward(&learned, &batch, false), Err(GnnError::BadGraph(_))));

    let mut dead = g.clone();
    dead.mask = vec![false; dead.n_ops];
    let policy = Policy::new(p.clone());
    assert!(policy.evaluate(&[&dead]).is_err());
}

/// Logits of a fixed 2x2 state, recorded once as raw bit patterns. Set
/// `JOBSHOP_BLESS=1` to rewrite the file.
#[test]
fn golden_logits_2x2() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/logits_2x2.txt");
    let inst = Arc::new(
        jobshop_core::format::parse_instance("2 2 stochastic\n1.9 2 2.2 2.85 3 3.3\n1.9 2 2.2 3.8 4 4.4\n0 1\n1 0\n")
            .unwrap(),
    );
    let state = State::from_order(inst, &[0]).unwrap();
    let p = Params::<f64>::init(&NetworkConfig::default(), 2024).unwrap();
    let g = features(&state, RewireOptions::default());
    let out = forward(&p, &GraphBatch::new(&[&g]).unwrap(), false).unwrap();
    let text: String = out
        .logits
        .iter()
        .chain(&out.values)
        .map(|v| format!("{:016x}\n", v.to_bits()))
        .collect();
    if std::env::var_os("JOBSHOP_BLESS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, &text).unwrap();
    }
    let golden = std::fs::read_to_string(&path).expect("golden file missing; run with JOBSHOP_BLESS=1");
    assert_eq!(text, golden);
}

#[test]
fn batched_greedy_schedules_match_single_rollouts() {
    let policy = Policy::<f32>::init(&NetworkConfig::default(), 12).unwrap();
    let instances: Vec<Arc<Instance>> = (0..7)
        .map(|k| Arc::new(generate_taillard(3 + k as usize % 2, 3, k).unwrap()))
        .collect();
    let batched = policy.schedule_argmax(&instances, 3).unwrap();
    for (inst, s) in instances.iter().zip(&batched) {
        let single = policy.rollout_argmax(State::reset(inst.clone())).unwrap();
        assert_eq!(single.dispatch_order(), s.dispatch_order());
    }
}
