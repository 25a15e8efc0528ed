//! The dispatch decision process.
//!
//! A state is a partial selection: the set of dispatched operations and, for
//! each machine, the order in which its operations were dispatched. Appending
//! to a per-machine chain is the only transition, so the oriented graph stays
//! acyclic and the chains are already transitively reduced.

use std::fmt::Write as _;
use std::sync::Arc;

use thiserror::Error;

use crate::instance::{Instance, OpId, Scenario};

const UNSCHEDULED: usize = usize::MAX;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EnvError {
    #[error("operation {op} does not exist")]
    UnknownOperation { op: OpId },
    #[error("operation {op} is already scheduled")]
    AlreadyScheduled { op: OpId },
    #[error("operation {op} cannot be dispatched before its job predecessor {pred}")]
    PredecessorMissing { op: OpId, pred: OpId },
    #[error("state is not terminal ({scheduled} of {total} operations scheduled)")]
    NotTerminal { scheduled: usize, total: usize },
    #[error("duration vector has {got} entries, expected {expected}")]
    DurationLength { expected: usize, got: usize },
}

#[derive(Debug, Clone)]
pub struct State {
    instance: Arc<Instance>,
    scheduled: Vec<bool>,
    next_rank: Vec<usize>,
    chains: Vec<Vec<OpId>>,
    chain_pos: Vec<usize>,
    order: Vec<OpId>,
}

impl PartialEq for State {
    fn eq(&self, other: &Self) -> bool {
        (Arc::ptr_eq(&self.instance, &other.instance) || self.instance == other.instance)
            && self.order == other.order
    }
}

impl State {
    /// Initial state: nothing scheduled.
    pub fn reset(instance: Arc<Instance>) -> Self {
        let n = instance.n_ops();
        Self {
            scheduled: vec![false; n],
            next_rank: vec![0; instance.n_jobs()],
            chains: vec![Vec::new(); instance.n_machines()],
            chain_pos: vec![UNSCHEDULED; n],
            order: Vec::with_capacity(n),
            instance,
        }
    }

    /// Replays a dispatch sequence from the initial state.
    pub fn from_order(instance: Arc<Instance>, order: &[OpId]) -> Result<Self, EnvError> {
        let mut s = Self::reset(instance);
        for &op in order {
            s.step(op)?;
        }
        Ok(s)
    }

    pub fn instance(&self) -> &Arc<Instance> {
        &self.instance
    }

    /// Number of dispatched operations (the decision step `t`).
    pub fn step_count(&self) -> usize {
        self.order.len()
    }

    pub fn is_terminal(&self) -> bool {
        self.order.len() == self.instance.n_ops()
    }

    pub fn is_scheduled(&self, op: OpId) -> bool {
        self.scheduled[op]
    }

    pub fn scheduled(&self) -> &[bool] {
        &self.scheduled
    }

    pub fn dispatch_order(&self) -> &[OpId] {
        &self.order
    }

    /// Dispatched operations of each machine, in dispatch order.
    pub fn machine_chains(&self) -> &[Vec<OpId>] {
        &self.chains
    }

    pub fn machine_tail(&self, machine: usize) -> Option<OpId> {
        self.chains[machine].last().copied()
    }

    /// Operation dispatched right before `op` on its machine.
    pub fn machine_predecessor(&self, op: OpId) -> Option<OpId> {
        match self.chain_pos[op] {
            UNSCHEDULED | 0 => None,
            pos => Some(self.chains[self.instance.machine(op)][pos - 1]),
        }
    }

    /// Next undispatched rank of every job (`n_machines` when finished).
    pub fn job_progress(&self) -> &[usize] {
        &self.next_rank
    }

    pub fn is_legal(&self, op: OpId) -> bool {
        op < self.instance.n_ops() && {
            let o = self.instance.op(op);
            self.next_rank[o.job] == o.rank
        }
    }

    /// Mask over operations: the first undispatched operation of every unfinished job.
    pub fn legal_actions(&self) -> Vec<bool> {
        let mut mask = vec![false; self.instance.n_ops()];
        for op in self.legal_ops() {
            mask[op] = true;
        }
        mask
    }

    pub fn legal_ops(&self) -> Vec<OpId> {
        let m = self.instance.n_machines();
        self.next_rank
            .iter()
            .enumerate()
            .filter(|&(_, &r)| r < m)
            .map(|(job, &r)| self.instance.op_id(job, r))
            .collect()
    }

    /// Dispatches `op` after the last dispatched operation of its machine.
    pub fn step(&mut self, op: OpId) -> Result<(), EnvError> {
        if op >= self.instance.n_ops() {
            return Err(EnvError::UnknownOperation { op });
        }
        if self.scheduled[op] {
            return Err(EnvError::AlreadyScheduled { op });
        }
        let o = *self.instance.op(op);
        if self.next_rank[o.job] != o.rank {
            return Err(EnvError::PredecessorMissing {
                op,
                pred: self.instance.op_id(o.job, self.next_rank[o.job]),
            });
        }
        self.scheduled[op] = true;
        self.next_rank[o.job] += 1;
        self.chain_pos[op] = self.chains[o.machine].len();
        self.chains[o.machine].push(op);
        self.order.push(op);
        Ok(())
    }

    pub fn after(&self, op: OpId) -> Result<Self, EnvError> {
        let mut next = self.clone();
        next.step(op)?;
        Ok(next)
    }

    /// Every disjunctive arc the current selection orients: dispatched
    /// operations are ordered by their chain and precede every undispatched
    /// operation of the same machine.
    pub fn oriented_arcs(&self) -> Vec<(OpId, OpId)> {
        let mut arcs = Vec::new();
        for (machine, chain) in self.chains.iter().enumerate() {
            let pending: Vec<OpId> = self
                .instance
                .ops_on_machine(machine)
                .into_iter()
                .filter(|&o| !self.scheduled[o])
                .collect();
            for (i, &a) in chain.iter().enumerate() {
                arcs.extend(chain[i + 1..].iter().map(|&b| (a, b)));
                arcs.extend(pending.iter().map(|&b| (a, b)));
            }
        }
        arcs
    }
}

/// Start dates of the dispatched operations of a state.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    /// `None` for operations not yet dispatched.
    pub starts: Vec<Option<f64>>,
    /// Durations the starts were computed from.
    pub durations: Vec<f64>,
}

impl Schedule {
    pub fn completion(&self, op: OpId) -> Option<f64> {
        self.starts[op].map(|s| s + self.durations[op])
    }

    /// Largest completion time among scheduled operations (0 when empty).
    pub fn makespan(&self) -> f64 {
        (0..self.starts.len())
            .filter_map(|o| self.completion(o))
            .fold(0.0, f64::max)
    }

    /// CSV export: `job,rank,machine,start,duration,completion`, scheduled rows only.
    pub fn to_csv(&self, instance: &Instance) -> String {
        let mut out = String::from("job,rank,machine,start,duration,completion\n");
        for (op, o) in instance.ops().iter().enumerate() {
            if let Some(start) = self.starts[op] {
                let d = self.durations[op];
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    o.job,
                    o.rank,
                    o.machine,
                    start,
                    d,
                    start + d
                )
                .unwrap();
            }
        }
        out
    }
}

/// Earliest start dates for the dispatched operations of `state`.
///
/// The dispatch order is a topological order of job precedences plus
/// machine chains, so one pass suffices.
pub fn sgs_starts(state: &State, durations: &[f64]) -> Result<Schedule, EnvError> {
    let inst = state.instance();
    if durations.len() != inst.n_ops() {
        return Err(EnvError::DurationLength {
            expected: inst.n_ops(),
            got: durations.len(),
        });
    }
    let mut starts = vec![None; inst.n_ops()];
    let mut completion = vec![0.0f64; inst.n_ops()];
    for &op in state.dispatch_order() {
        let job_ready = inst.job_pred(op).map_or(0.0, |p| completion[p]);
        let machine_ready = state.machine_predecessor(op).map_or(0.0, |p| completion[p]);
        let start = job_ready.max(machine_ready);
        starts[op] = Some(start);
        completion[op] = start + durations[op];
    }
    Ok(Schedule {
        starts,
        durations: durations.to_vec(),
    })
}

/// Makespan of a terminal state under the scenario's real durations.
pub fn terminal_cost(state: &State, scenario: &Scenario) -> Result<f64, EnvError> {
    if !state.is_terminal() {
        return Err(EnvError::NotTerminal {
            scheduled: state.step_count(),
            total: state.instance().n_ops(),
        });
    }
    Ok(sgs_starts(state, &scenario.durations)?.makespan())
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// Operation `rank` of `job` starts before `rank - 1` completes, or is
    /// scheduled while its predecessor is not.
    Precedence { job: usize, rank: usize },
    /// Two operations overlap on `machine`.
    MachineOverlap {
        machine: usize,
        first: OpId,
        second: OpId,
    },
    /// Non-positive or non-finite duration, or negative start.
    BadTiming { op: OpId },
}

/// Checks job precedences and machine exclusivity for the scheduled operations.
pub fn validate_schedule(instance: &Instance, schedule: &Schedule) -> Vec<Violation> {
    let mut violations = Vec::new();
    for (op, o) in instance.ops().iter().enumerate() {
        let Some(start) = schedule.starts[op] else {
            continue;
        };
        let d = schedule.durations[op];
        if !(start >= 0.0 && d > 0.0 && d.is_finite()) {
            violations.push(Violation::BadTiming { op });
        }
        if let Some(pred) = instance.job_pred(op) {
            match schedule.completion(pred) {
                Some(c) if start >= c => {}
                _ => violations.push(Violation::Precedence {
                    job: o.job,
                    rank: o.rank,
                }),
            }
        }
    }
    for machine in 0..instance.n_machines() {
        let mut on_machine: Vec<(f64, OpId)> = instance
            .ops_on_machine(machine)
            .into_iter()
            .filter_map(|op| schedule.starts[op].map(|s| (s, op)))
            .collect();
        on_machine.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for w in on_machine.windows(2) {
            let (first, second) = (w[0].1, w[1].1);
            if w[0].0 + schedule.durations[first] > w[1].0 {
                violations.push(Violation::MachineOverlap {
                    machine,
                    first,
                    second,
                });
            }
        }
    }
    violations
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{generate_taillard, sample_scenario, stochasticize};
    use proptest::prelude::*;

    /// 3x3 instance laid out as the usual textbook figure: machine 0 runs
    /// O(0,0), O(1,1), O(2,1); machine 1 runs O(0,1), O(1,2), O(2,2);
    /// machine 2 runs O(0,2), O(1,0), O(2,0).
    pub(crate) fn figure_instance() -> Arc<Instance> {
        Arc::new(
            Instance::deterministic(
                vec![vec![3.0, 2.0, 2.0], vec![2.0, 1.0, 4.0], vec![4.0, 3.0, 1.0]],
                vec![vec![0, 1, 2], vec![2, 0, 1], vec![2, 0, 1]],
            )
            .unwrap(),
        )
    }

    fn worked_2x2() -> Arc<Instance> {
        Arc::new(
            Instance::deterministic(vec![vec![2.0, 3.0], vec![2.0, 4.0]], vec![vec![0, 1], vec![1, 0]])
                .unwrap(),
        )
    }

    #[test]
    fn reset_exposes_first_operation_of_each_job() {
        let inst = Arc::new(generate_taillard(3, 3, 4).unwrap());
        let s = State::reset(inst.clone());
        assert_eq!(s.legal_ops(), vec![0, 3, 6]);
        assert_eq!(s.step_count(), 0);
        assert!(s.machine_chains().iter().all(Vec::is_empty));

        let one = Arc::new(generate_taillard(1, 1, 4).unwrap());
        let mut s1 = State::reset(one);
        assert_eq!(s1.legal_ops(), vec![0]);
        s1.step(0).unwrap();
        assert_eq!(s1.step_count(), 1);
        assert!(s1.is_terminal());
        assert!(s1.legal_actions().iter().all(|&b| !b));
    }

    #[test]
    fn figure_state_candidates() {
        let inst = figure_instance();
        // O11, O21, O22, O31 in 1-based naming
        let s = State::from_order(inst.clone(), &[0, 3, 4, 6]).unwrap();
        // O12, O23, O32
        assert_eq!(s.legal_ops(), vec![1, 5, 7]);
    }

    #[test]
    fn figure_selection_arcs() {
        let inst = figure_instance();
        let s = State::from_order(inst.clone(), &[0, 3, 4, 6]).unwrap();
        assert_eq!(s.machine_chains()[0], vec![0, 4]);
        assert_eq!(s.machine_chains()[2], vec![3, 6]);
        let arcs = s.oriented_arcs();
        // Arcs drawn in the reference selection figure.
        for arc in [(0, 4), (0, 7), (4, 7), (3, 6), (3, 2)] {
            assert!(arcs.contains(&arc), "missing {arc:?}");
        }
        // O31 also precedes the still pending O13 on the shared machine.
        assert!(arcs.contains(&(6, 2)));
        assert_eq!(arcs.len(), 6);
    }

    #[test]
    fn illegal_steps_rejected() {
        let inst = figure_instance();
        let mut s = State::reset(inst);
        assert_eq!(s.step(1), Err(EnvError::PredecessorMissing { op: 1, pred: 0 }));
        s.step(0).unwrap();
        assert_eq!(s.step(0), Err(EnvError::AlreadyScheduled { op: 0 }));
        assert_eq!(s.step(99), Err(EnvError::UnknownOperation { op: 99 }));
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn full_episode_fills_chains() {
        let inst = Arc::new(generate_taillard(4, 3, 2).unwrap());
        let mut s = State::reset(inst.clone());
        let mut steps = 0;
        while !s.is_terminal() {
            let op = *s.legal_ops().last().unwrap();
            s.step(op).unwrap();
            steps += 1;
        }
        assert_eq!(steps, 12);
        for m in 0..3 {
            assert_eq!(s.machine_chains()[m].len(), inst.ops_on_machine(m).len());
        }
    }

    #[test]
    fn sgs_small_cases() {
        let one = Arc::new(Instance::deterministic(vec![vec![7.0]], vec![vec![0]]).unwrap());
        let s = State::from_order(one, &[0]).unwrap();
        let sch = sgs_starts(&s, &[7.0]).unwrap();
        assert_eq!(sch.starts, vec![Some(0.0)]);
        assert_eq!(sch.makespan(), 7.0);

        let two = Arc::new(
            Instance::deterministic(vec![vec![3.0], vec![5.0]], vec![vec![0], vec![0]]).unwrap(),
        );
        let s = State::from_order(two.clone(), &[0, 1]).unwrap();
        let sch = sgs_starts(&s, &two.mode_durations()).unwrap();
        assert_eq!(sch.starts, vec![Some(0.0), Some(3.0)]);
        assert_eq!(sch.makespan(), 8.0);
    }

    #[test]
    fn worked_two_by_two_makespan() {
        // job0: m0=2, m1=3; job1: m1=2, m0=4; dispatch O00, O10, O01, O11.
        // O00 [0,2], O10 [0,2], O01 on m1 after O10: [2,5], O11 on m0 after O00 and O10: [2,6].
        let inst = worked_2x2();
        let s = State::from_order(inst.clone(), &[0, 2, 1, 3]).unwrap();
        let cost = terminal_cost(&s, &Scenario::mode(&inst)).unwrap();
        assert_eq!(cost, 6.0);
    }

    #[test]
    fn terminal_cost_requires_terminal_state() {
        let inst = worked_2x2();
        let s = State::from_order(inst.clone(), &[0]).unwrap();
        assert!(matches!(
            terminal_cost(&s, &Scenario::mode(&inst)),
            Err(EnvError::NotTerminal { .. })
        ));
    }

    #[test]
    fn validation_detects_shifted_starts() {
        let inst = worked_2x2();
        let s = State::from_order(inst.clone(), &[0, 2, 1, 3]).unwrap();
        let sch = sgs_starts(&s, &inst.mode_durations()).unwrap();
        assert!(validate_schedule(&inst, &sch).is_empty());

        // O00 delayed to [0.5, 2.5) overlaps O11 on machine 0; O01 follows it legally.
        let mut overlap = sch.clone();
        overlap.starts[0] = Some(0.5);
        overlap.starts[1] = Some(2.5);
        let v = validate_schedule(&inst, &overlap);
        assert_eq!(
            v,
            vec![Violation::MachineOverlap {
                machine: 0,
                first: 0,
                second: 3
            }]
        );

        // O10 moved to [5, 7) leaves machine 1 free but O11 now starts too early.
        let mut early = sch.clone();
        early.starts[2] = Some(5.0);
        let v = validate_schedule(&inst, &early);
        assert_eq!(v, vec![Violation::Precedence { job: 1, rank: 1 }]);
    }

    #[test]
    fn csv_export_has_row_per_scheduled_op() {
        let inst = worked_2x2();
        let s = State::from_order(inst.clone(), &[0, 2, 1, 3]).unwrap();
        let csv = sgs_starts(&s, &inst.mode_durations()).unwrap().to_csv(&inst);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "job,rank,machine,start,duration,completion");
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[4], "1,1,0,2,4,6");
    }

    fn random_terminal(inst: &Arc<Instance>, picks: &[usize]) -> State {
        let mut s = State::reset(inst.clone());
        let mut i = 0;
        while !s.is_terminal() {
            let legal = s.legal_ops();
            s.step(legal[picks[i % picks.len()] % legal.len()]).unwrap();
            i += 1;
        }
        s
    }

    proptest! {
        #[test]
        fn sgs_is_monotone_in_durations(seed in any::<u64>(), picks in prop::collection::vec(0usize..16, 1..40)) {
            let base = generate_taillard(4, 4, seed).unwrap();
            let inst = Arc::new(stochasticize(&base, seed, 0.95, 1.1).unwrap());
            let s = random_terminal(&inst, &picks);
            let lo = terminal_cost(&s, &Scenario::min(&inst)).unwrap();
            let hi = terminal_cost(&s, &Scenario::max(&inst)).unwrap();
            let real = sample_scenario(&inst, seed ^ 1);
            let sch = sgs_starts(&s, &real.durations).unwrap();
            prop_assert!(validate_schedule(&inst, &sch).is_empty());
            let cost = sch.makespan();
            prop_assert!(lo <= cost && cost <= hi);
        }

        #[test]
        fn step_count_tracks_scheduled_set(seed in any::<u64>(), picks in prop::collection::vec(0usize..16, 0..16)) {
            let inst = Arc::new(generate_taillard(4, 4, seed).unwrap());
            let mut s = State::reset(inst.clone());
            for p in picks {
                let legal = s.legal_ops();
                prop_assert!(!legal.is_empty());
                s.step(legal[p % legal.len()]).unwrap();
                prop_assert_eq!(s.step_count(), s.scheduled().iter().filter(|&&b| b).count());
                for (m, chain) in s.machine_chains().iter().enumerate() {
                    let on_m: Vec<OpId> = s.dispatch_order().iter().copied().filter(|&o| inst.machine(o) == m).collect();
                    prop_assert_eq!(chain, &on_m);
                }
            }
        }
    }
}
