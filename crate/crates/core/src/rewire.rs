//! Message-passing graph built from a partial selection.
//!
//! Edges: job precedences and machine-chain arcs (both already transitively
//! reduced), a reverse copy of each, a complete conflict clique over every
//! machine's operations, and optionally edges to and from a global node.

use std::fmt::Write as _;

use crate::env::State;
use crate::instance::OpId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum EdgeType {
    Precedence = 0,
    ReversePrecedence = 1,
    Conflict = 2,
    ToGlobal = 3,
    FromGlobal = 4,
}

impl EdgeType {
    pub const COUNT: usize = 5;
    pub const ALL: [EdgeType; 5] = [
        EdgeType::Precedence,
        EdgeType::ReversePrecedence,
        EdgeType::Conflict,
        EdgeType::ToGlobal,
        EdgeType::FromGlobal,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            EdgeType::Precedence => "precedence",
            EdgeType::ReversePrecedence => "reverse",
            EdgeType::Conflict => "conflict",
            EdgeType::ToGlobal => "to_global",
            EdgeType::FromGlobal => "from_global",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub ty: EdgeType,
}

/// Per-operation node attributes. Time features are normalized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeFeatures {
    pub affected: bool,
    pub selectable: bool,
    pub machine_id: usize,
    pub dur_min: f64,
    pub dur_mode: f64,
    pub dur_max: f64,
    pub comp_min: f64,
    pub comp_mode: f64,
    pub comp_max: f64,
}

impl NodeFeatures {
    /// Width of [`NodeFeatures::continuous`].
    pub const WIDTH: usize = 8;

    /// Every feature except the machine id, as network input.
    pub fn continuous(&self) -> [f64; Self::WIDTH] {
        [
            self.affected as u8 as f64,
            self.selectable as u8 as f64,
            self.dur_min,
            self.dur_mode,
            self.dur_max,
            self.comp_min,
            self.comp_mode,
            self.comp_max,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub struct RewireOptions {
    /// Adds a node linked to and from every operation.
    pub global_node: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewiredGraph {
    /// Operation nodes come first (index = [`OpId`]); the global node, when
    /// present, is last.
    pub n_nodes: usize,
    pub n_ops: usize,
    pub edges: Vec<Edge>,
    /// One entry per operation node; empty when built by [`rewire`] alone.
    pub features: Vec<NodeFeatures>,
    /// Legal actions, one entry per operation node.
    pub mask: Vec<bool>,
}

impl RewiredGraph {
    pub fn global_node(&self) -> Option<usize> {
        (self.n_nodes > self.n_ops).then_some(self.n_ops)
    }

    pub fn count(&self, ty: EdgeType) -> usize {
        self.edges.iter().filter(|e| e.ty == ty).count()
    }

    /// One `src dst type` line per edge.
    pub fn edge_list(&self) -> String {
        let mut out = String::new();
        for e in &self.edges {
            writeln!(out, "{} {} {}", e.src, e.dst, e.ty.name()).unwrap();
        }
        out
    }

    /// Node feature table as CSV, one row per operation.
    pub fn features_csv(&self) -> String {
        let mut out = String::from(
            "node,affected,selectable,machine,dur_min,dur_mode,dur_max,comp_min,comp_mode,comp_max\n",
        );
        for (i, f) in self.features.iter().enumerate() {
            writeln!(
                out,
                "{i},{},{},{},{},{},{},{},{},{}",
                f.affected as u8,
                f.selectable as u8,
                f.machine_id,
                f.dur_min,
                f.dur_mode,
                f.dur_max,
                f.comp_min,
                f.comp_mode,
                f.comp_max
            )
            .unwrap();
        }
        out
    }
}

/// Structure of the message-passing graph for `state` (no node features).
pub fn rewire(state: &State, options: RewireOptions) -> RewiredGraph {
    let inst = state.instance();
    let n = inst.n_ops();
    let mut forward: Vec<(OpId, OpId)> = Vec::new();
    for op in 0..n {
        if let Some(pred) = inst.job_pred(op) {
            forward.push((pred, op));
        }
    }
    for chain in state.machine_chains() {
        forward.extend(chain.windows(2).map(|w| (w[0], w[1])));
    }

    let mut edges = Vec::with_capacity(forward.len() * 2 + n * inst.n_jobs());
    edges.extend(forward.iter().map(|&(src, dst)| Edge {
        src,
        dst,
        ty: EdgeType::Precedence,
    }));
    edges.extend(forward.iter().map(|&(src, dst)| Edge {
        src: dst,
        dst: src,
        ty: EdgeType::ReversePrecedence,
    }));
    for machine in 0..inst.n_machines() {
        let ops = inst.ops_on_machine(machine);
        for &a in &ops {
            for &b in &ops {
                if a != b {
                    edges.push(Edge {
                        src: a,
                        dst: b,
                        ty: EdgeType::Conflict,
                    });
                }
            }
        }
    }
    let mut n_nodes = n;
    if options.global_node {
        let g = n;
        n_nodes += 1;
        edges.extend((0..n).map(|op| Edge {
            src: op,
            dst: g,
            ty: EdgeType::ToGlobal,
        }));
        edges.extend((0..n).map(|op| Edge {
            src: g,
            dst: op,
            ty: EdgeType::FromGlobal,
        }));
    }
    RewiredGraph {
        n_nodes,
        n_ops: n,
        edges,
        features: Vec::new(),
        mask: state.legal_actions(),
    }
}

/// Per-channel duration vectors (min, mode, max), indexed by [`OpId`].
#[derive(Debug, Clone, PartialEq)]
pub struct DurationChannels {
    pub min: Vec<f64>,
    pub mode: Vec<f64>,
    pub max: Vec<f64>,
}

impl DurationChannels {
    pub fn of(instance: &crate::Instance) -> Self {
        Self {
            min: instance.min_durations(),
            mode: instance.mode_durations(),
            max: instance.max_durations(),
        }
    }
}

/// Completion-time parameters `[min, mode, max]` per operation.
///
/// Each channel is propagated on its own: a dispatched operation completes
/// after both its job predecessor and its machine-chain predecessor, a pending
/// one only after its job predecessor.
pub fn propagate_completion(state: &State, durations: &DurationChannels) -> Vec<[f64; 3]> {
    let inst = state.instance();
    let channels = [&durations.min, &durations.mode, &durations.max];
    let mut comp = vec![[0.0f64; 3]; inst.n_ops()];
    let relax = |op: OpId, comp: &mut Vec<[f64; 3]>, machine_pred: Option<OpId>| {
        let job_pred = inst.job_pred(op);
        for (c, dur) in channels.iter().enumerate() {
            let ready = job_pred
                .map_or(0.0, |p| comp[p][c])
                .max(machine_pred.map_or(0.0, |p| comp[p][c]));
            comp[op][c] = ready + dur[op];
        }
    };
    for &op in state.dispatch_order() {
        relax(op, &mut comp, state.machine_predecessor(op));
    }
    // Pending operations follow their dispatched prefix in rank order.
    for job in 0..inst.n_jobs() {
        for rank in state.job_progress()[job]..inst.n_machines() {
            relax(inst.op_id(job, rank), &mut comp, None);
        }
    }
    comp
}

/// Full observation: structure, mask and normalized node features.
///
/// Durations are divided by the largest `max` duration of the instance;
/// completions additionally by the number of machines.
pub fn features(state: &State, options: RewireOptions) -> RewiredGraph {
    let mut graph = rewire(state, options);
    let inst = state.instance();
    let time_scale = inst.max_duration();
    let comp_scale = time_scale * inst.n_machines() as f64;
    let comp = propagate_completion(state, &DurationChannels::of(inst));
    graph.features = inst
        .ops()
        .iter()
        .enumerate()
        .map(|(op, o)| NodeFeatures {
            affected: state.is_scheduled(op),
            selectable: graph.mask[op],
            machine_id: o.machine,
            dur_min: o.duration.min() / time_scale,
            dur_mode: o.duration.mode() / time_scale,
            dur_max: o.duration.max() / time_scale,
            comp_min: comp[op][0] / comp_scale,
            comp_mode: comp[op][1] / comp_scale,
            comp_max: comp[op][2] / comp_scale,
        })
        .collect();
    graph
}

/// Scale that maps makespans onto the completion-feature range.
pub fn completion_scale(instance: &crate::Instance) -> f64 {
    instance.max_duration() * instance.n_machines() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{sgs_starts, terminal_cost, State};
    use crate::instance::{
        generate_taillard, sample_scenario, stochasticize, DurationModel, Instance, Scenario,
    };
    use proptest::prelude::*;
    use std::collections::HashSet;
    use std::sync::Arc;

    fn figure_instance() -> Arc<Instance> {
        Arc::new(
            Instance::deterministic(
                vec![vec![3.0, 2.0, 2.0], vec![2.0, 1.0, 4.0], vec![4.0, 3.0, 1.0]],
                vec![vec![0, 1, 2], vec![2, 0, 1], vec![2, 0, 1]],
            )
            .unwrap(),
        )
    }

    fn forward_of(g: &RewiredGraph, ty: EdgeType) -> HashSet<(usize, usize)> {
        g.edges
            .iter()
            .filter(|e| e.ty == ty)
            .map(|e| (e.src, e.dst))
            .collect()
    }

    #[test]
    fn figure_rewiring_keeps_reduced_chain_arcs() {
        let inst = figure_instance();
        let s = State::from_order(inst, &[0, 3, 4, 6]).unwrap();
        let g = rewire(&s, RewireOptions::default());
        let prec = forward_of(&g, EdgeType::Precedence);
        let jobs: HashSet<_> = [(0, 1), (1, 2), (3, 4), (4, 5), (6, 7), (7, 8)].into();
        let chain: HashSet<_> = prec.difference(&jobs).copied().collect();
        assert_eq!(chain, [(0, 4), (3, 6)].into());
        let rev = forward_of(&g, EdgeType::ReversePrecedence);
        assert_eq!(rev, prec.iter().map(|&(a, b)| (b, a)).collect());
    }

    #[test]
    fn empty_selection_counts() {
        let inst = Arc::new(generate_taillard(3, 3, 1).unwrap());
        let g = rewire(&State::reset(inst), RewireOptions::default());
        // 3 jobs x 2 arcs, each with a reverse copy.
        assert_eq!(g.count(EdgeType::Precedence) + g.count(EdgeType::ReversePrecedence), 12);
        assert_eq!(g.count(EdgeType::Conflict), 18);
        assert_eq!(g.edges.len(), 30);

        let one = Arc::new(generate_taillard(1, 1, 1).unwrap());
        let g = rewire(&State::reset(one), RewireOptions::default());
        assert!(g.edges.is_empty());
        assert_eq!(g.n_nodes, 1);
    }

    #[test]
    fn count_formula_by_enumeration() {
        for (n, m) in [(2, 2), (3, 3), (4, 2), (2, 5), (5, 5)] {
            let inst = Arc::new(generate_taillard(n, m, 9).unwrap());
            let g = rewire(&State::reset(inst.clone()), RewireOptions::default());
            let mut expected_conflicts = 0;
            for a in 0..inst.n_ops() {
                for b in 0..inst.n_ops() {
                    expected_conflicts += (a != b && inst.machine(a) == inst.machine(b)) as usize;
                }
            }
            assert_eq!(g.count(EdgeType::Conflict), expected_conflicts);
            assert_eq!(expected_conflicts, m * n * (n - 1));
            assert_eq!(g.count(EdgeType::Precedence), n * (m - 1));
        }
    }

    #[test]
    fn global_node_edges() {
        let inst = Arc::new(generate_taillard(2, 3, 1).unwrap());
        let g = rewire(&State::reset(inst), RewireOptions { global_node: true });
        assert_eq!(g.n_nodes, 7);
        assert_eq!(g.global_node(), Some(6));
        assert_eq!(g.count(EdgeType::ToGlobal), 6);
        assert_eq!(g.count(EdgeType::FromGlobal), 6);
        assert!(g.edges.iter().filter(|e| e.ty == EdgeType::ToGlobal).all(|e| e.dst == 6));
        assert_eq!(g.mask.len(), 6);
    }

    #[test]
    fn single_job_triangular_chain_sums() {
        let t = DurationModel::triangular(1.0, 2.0, 3.0).unwrap();
        let inst = Arc::new(Instance::new(vec![vec![0, 1]], vec![vec![t, t]]).unwrap());
        let comp = propagate_completion(&State::reset(inst.clone()), &DurationChannels::of(&inst));
        assert_eq!(comp, vec![[1.0, 2.0, 3.0], [2.0, 4.0, 6.0]]);
    }

    #[test]
    fn deterministic_terminal_channels_match_sgs() {
        let inst = Arc::new(generate_taillard(4, 4, 3).unwrap());
        let s = State::from_order(inst.clone(), &[0, 4, 8, 12, 1, 5, 9, 13, 2, 6, 10, 14, 3, 7, 11, 15])
            .unwrap();
        let comp = propagate_completion(&s, &DurationChannels::of(&inst));
        let sch = sgs_starts(&s, &inst.mode_durations()).unwrap();
        for op in 0..inst.n_ops() {
            let c = sch.completion(op).unwrap();
            assert_eq!(comp[op], [c, c, c]);
        }
    }

    #[test]
    fn sampled_makespans_within_channel_bounds() {
        let inst = Arc::new(stochasticize(&generate_taillard(3, 3, 5).unwrap(), 5, 0.95, 1.1).unwrap());
        let s = State::from_order(inst.clone(), &[0, 3, 6, 1, 4, 7, 2, 5, 8]).unwrap();
        let comp = propagate_completion(&s, &DurationChannels::of(&inst));
        let lo = comp.iter().map(|c| c[0]).fold(0.0, f64::max);
        let hi = comp.iter().map(|c| c[2]).fold(0.0, f64::max);
        for k in 0..10_000 {
            let cost = terminal_cost(&s, &sample_scenario(&inst, k)).unwrap();
            assert!(lo <= cost && cost <= hi, "{lo} <= {cost} <= {hi}");
        }
    }

    #[test]
    fn features_after_reset_and_one_dispatch() {
        let inst = Arc::new(generate_taillard(3, 3, 2).unwrap());
        let s0 = State::reset(inst.clone());
        let g0 = features(&s0, RewireOptions::default());
        assert!(g0.features.iter().all(|f| !f.affected));
        for (op, f) in g0.features.iter().enumerate() {
            assert_eq!(f.selectable, inst.op(op).rank == 0);
        }
        let s1 = s0.after(3).unwrap();
        let g1 = features(&s1, RewireOptions::default());
        assert!(g1.features[3].affected && !g1.features[3].selectable);
        assert!(g1.features[4].selectable);
    }

    #[test]
    fn constant_durations_normalize_to_one() {
        let inst = Arc::new(
            Instance::deterministic(vec![vec![99.0; 3]; 3], vec![vec![0, 1, 2], vec![1, 2, 0], vec![2, 0, 1]])
                .unwrap(),
        );
        let g = features(&State::reset(inst), RewireOptions::default());
        for f in &g.features {
            assert_eq!((f.dur_min, f.dur_mode, f.dur_max), (1.0, 1.0, 1.0));
        }
        // Without conflicts the last op of each job completes at 3 * 99 = n_machines * max.
        assert_eq!(g.features[2].comp_mode, 1.0);
    }

    #[test]
    fn debug_exports() {
        let inst = Arc::new(generate_taillard(2, 2, 2).unwrap());
        let g = features(&State::reset(inst), RewireOptions::default());
        let list = g.edge_list();
        let lines: Vec<&str> = list.lines().collect();
        assert_eq!(lines.len(), g.edges.len());
        assert_eq!(lines[0], "0 1 precedence");
        assert_eq!(g.features_csv().lines().count(), 5);
    }

    fn random_state(inst: &Arc<Instance>, picks: &[usize]) -> State {
        let mut s = State::reset(inst.clone());
        for &p in picks {
            if s.is_terminal() {
                break;
            }
            let legal = s.legal_ops();
            s.step(legal[p % legal.len()]).unwrap();
        }
        s
    }

    proptest! {
        #[test]
        fn graph_invariants(seed in any::<u64>(), picks in prop::collection::vec(0usize..20, 0..25), global in any::<bool>()) {
            let base = generate_taillard(4, 5, seed).unwrap();
            let inst = Arc::new(stochasticize(&base, seed, 0.95, 1.1).unwrap());
            let s = random_state(&inst, &picks);
            let opts = RewireOptions { global_node: global };
            let g = features(&s, opts);
            prop_assert_eq!(&g, &features(&s, opts));
            // reverse pairs
            let fwd: Vec<(usize, usize)> = g.edges.iter().filter(|e| e.ty == EdgeType::Precedence).map(|e| (e.src, e.dst)).collect();
            let mut rev: Vec<(usize, usize)> = g.edges.iter().filter(|e| e.ty == EdgeType::ReversePrecedence).map(|e| (e.dst, e.src)).collect();
            let mut fwd_sorted = fwd.clone();
            fwd_sorted.sort_unstable();
            rev.sort_unstable();
            prop_assert_eq!(fwd_sorted, rev);
            // chain arcs per machine: k - 1 for k scheduled ops
            let chain_arcs = fwd.len() - inst.n_jobs() * (inst.n_machines() - 1);
            let expected: usize = s.machine_chains().iter().map(|c| c.len().saturating_sub(1)).sum();
            prop_assert_eq!(chain_arcs, expected);
            for f in &g.features {
                prop_assert!(!(f.selectable && f.affected));
                for v in [f.dur_min, f.dur_mode, f.dur_max] {
                    prop_assert!(v > 0.0 && v <= 1.0);
                }
                for v in [f.comp_min, f.comp_mode, f.comp_max] {
                    prop_assert!(v > 0.0 && v.is_finite());
                }
                prop_assert!(f.comp_min <= f.comp_mode && f.comp_mode <= f.comp_max);
            }
        }

        #[test]
        fn channels_bound_every_realization(seed in any::<u64>(), picks in prop::collection::vec(0usize..16, 16)) {
            let base = generate_taillard(4, 4, seed).unwrap();
            let inst = Arc::new(stochasticize(&base, seed, 0.95, 1.1).unwrap());
            let s = random_state(&inst, &picks);
            prop_assert!(s.is_terminal());
            let comp = propagate_completion(&s, &DurationChannels::of(&inst));
            let real = sample_scenario(&inst, seed.wrapping_add(1));
            let sch = sgs_starts(&s, &real.durations).unwrap();
            for op in 0..inst.n_ops() {
                let c = sch.completion(op).unwrap();
                prop_assert!(comp[op][0] <= c && c <= comp[op][2]);
            }
        }

        #[test]
        fn collapsed_channels(seed in any::<u64>(), picks in prop::collection::vec(0usize..16, 0..16)) {
            let inst = Arc::new(generate_taillard(4, 4, seed).unwrap());
            let s = random_state(&inst, &picks);
            for c in propagate_completion(&s, &DurationChannels::of(&inst)) {
                prop_assert!(c[0] == c[1] && c[1] == c[2]);
            }
            let _ = Scenario::mode(&inst);
        }
    }
}
