use std::sync::Arc;

use jobshop_core::instance::{generate_taillard, stochasticize};
use jobshop_core::rewire::features;
use jobshop_core::{seed, RewiredGraph, State};
use jobshop_gnn::{backward, forward, GraphBatch, NetworkConfig, Params, Pooling};
use rand::Rng;

fn random_graph(n: usize, k: u64, global: bool) -> RewiredGraph {
    let inst = stochasticize(&generate_taillard(n, n, k).unwrap(), k, 0.95, 1.1).unwrap();
    let mut rng = seed::rng(k);
    let mut state = State::reset(Arc::new(inst));
    let steps = rng.random_range(0..n * n);
    for _ in 0..steps {
        let legal = state.legal_ops();
        state.step(legal[rng.random_range(0..legal.len())]).unwrap();
    }
    features(&state, jobshop_core::RewireOptions { global_node: global })
}

fn small(pooling: Pooling) -> NetworkConfig {
    NetworkConfig {
        hidden_dim: 6,
        n_layers: 2,
        n_heads: 2,
        pooling,
        residual: true,
        embedder_depth: 2,
        max_machines: 4,
        machine_dim: 3,
    }
}

fn objective(p: &Params<f64>, batch: &GraphBatch, cl: &[f64], cv: &[f64]) -> f64 {
    let out = forward(p, batch, false).unwrap();
    out.logits.iter().zip(cl).map(|(a, b)| a * b).sum::<f64>()
        + out.values.iter().zip(cv).map(|(a, b)| a * b).sum::<f64>()
}

/// Largest relative error between the hand-written gradient and central
/// differences, over every parameter.
fn max_rel_error(p: &Params<f64>, graphs: &[&RewiredGraph], coef_seed: u64) -> (f64, String) {
    let batch = GraphBatch::new(graphs).unwrap();
    let mut rng = seed::rng(coef_seed);
    let cl: Vec<f64> = (0..batch.n_logits()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let cv: Vec<f64> = (0..batch.n_graphs()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let fwd = forward(p, &batch, true).unwrap();
    let grad = backward(p, &batch, &fwd, &cl, &cv);
    let h = 1e-5;
    let mut worst = (0.0, String::new());
    let mut q = p.clone();
    for (ti, t) in p.tensors.iter().enumerate() {
        for k in 0..t.data.len() {
            let orig = t.data[k];
            q.tensors[ti].data[k] = orig + h;
            let up = objective(&q, &batch, &cl, &cv);
            q.tensors[ti].data[k] = orig - h;
            let down = objective(&q, &batch, &cl, &cv);
            q.tensors[ti].data[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grad.tensors[ti].data[k];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            if rel > worst.0 {
                worst = (rel, format!("{}[{k}]: analytic {analytic} numeric {numeric}", t.name));
            }
        }
    }
    worst
}

#[test]
fn finite_differences_mean_max() {
    let p = Params::<f64>::init(&small(Pooling::MeanMax), 1).unwrap();
    for (k, n) in [(0, 2), (1, 3), (2, 2), (3, 3), (4, 3)] {
        let g = random_graph(n, k, false);
        let (err, at) = max_rel_error(&p, &[&g], k);
        eprintln!("graph {k}: worst relative error {err:.2e} at {at}");
        assert!(err <= 1e-4, "graph {k}: {err} at {at}");
    }
}

#[test]
fn finite_differences_learned_node_batched() {
    let p = Params::<f64>::init(&small(Pooling::LearnedNode), 2).unwrap();
    let gs: Vec<RewiredGraph> = (10..13).map(|k| random_graph(2 + (k as usize % 2), k, true)).collect();
    let refs: Vec<&RewiredGraph> = gs.iter().collect();
    let (err, at) = max_rel_error(&p, &refs, 99);
    assert!(err <= 1e-4, "{err} at {at}");
}

#[test]
fn finite_differences_without_residual() {
    let cfg = NetworkConfig {
        residual: false,
        embedder_depth: 1,
        ..small(Pooling::MeanMax)
    };
    let p = Params::<f64>::init(&cfg, 3).unwrap();
    let g = random_graph(3, 21, false);
    let (err, at) = max_rel_error(&p, &[&g], 5);
    assert!(err <= 1e-4, "{err} at {at}");
}

#[test]
fn zero_upstream_gives_zero_gradient() {
    let p = Params::<f32>::init(&NetworkConfig::default(), 0).unwrap();
    let g = random_graph(3, 1, false);
    let batch = GraphBatch::new(&[&g]).unwrap();
    let fwd = forward(&p, &batch, true).unwrap();
    let grad = backward(&p, &batch, &fwd, &vec![0.0; batch.n_logits()], &[0.0]);
    assert!(grad.iter().all(|&v| v == 0.0));
}

#[test]
fn batching_matches_separate_graphs() {
    let p = Params::<f64>::init(&small(Pooling::MeanMax), 4).unwrap();
    let a = random_graph(2, 30, false);
    let b = random_graph(3, 31, false);
    let joint = forward(&p, &GraphBatch::new(&[&a, &b]).unwrap(), false).unwrap();
    let fa = forward(&p, &GraphBatch::new(&[&a]).unwrap(), false).unwrap();
    let fb = forward(&p, &GraphBatch::new(&[&b]).unwrap(), false).unwrap();
    let sep: Vec<f64> = fa.logits.iter().chain(&fb.logits).copied().collect();
    for (x, y) in joint.logits.iter().zip(&sep) {
        assert!((x - y).abs() < 1e-12);
    }
    assert!((joint.values[0] - fa.values[0]).abs() < 1e-12);
    assert!((joint.values[1] - fb.values[0]).abs() < 1e-12);
}
