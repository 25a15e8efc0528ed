//! Exact makespan for small instances by depth-first branch and bound.
//!
//! Branching follows Giffler and Thompson: take the candidate with the
//! earliest completion, and branch only on the candidates of its machine that
//! could start before that completion. Every active schedule, hence an
//! optimal one, is reachable, and each branch is a legal dispatch action.
//! Nodes are pruned with the bound
//! `max(job ready + job work left, machine ready + machine work left)`.

use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::env::State;
use crate::instance::{Instance, OpId, Scenario};
use crate::rules::{pdr_dispatch, sgs_replay, Rule};

#[derive(Debug, Clone, PartialEq)]
pub enum ExactOutcome {
    Optimal {
        makespan: f64,
        order: Vec<OpId>,
    },
    /// The time limit expired; `best` is the incumbent, if any.
    Timeout { best: Option<(f64, Vec<OpId>)> },
}

impl ExactOutcome {
    pub fn optimal(&self) -> Option<f64> {
        match self {
            ExactOutcome::Optimal { makespan, .. } => Some(*makespan),
            ExactOutcome::Timeout { .. } => None,
        }
    }
}

struct Search<'a> {
    inst: &'a Instance,
    dur: Vec<f64>,
    next_rank: Vec<usize>,
    job_ready: Vec<f64>,
    machine_ready: Vec<f64>,
    job_left: Vec<f64>,
    machine_left: Vec<f64>,
    order: Vec<OpId>,
    best: f64,
    best_order: Vec<OpId>,
    deadline: Instant,
    nodes: u64,
    timed_out: bool,
}

impl Search<'_> {
    fn bound(&self) -> f64 {
        let jobs = self
            .job_ready
            .iter()
            .zip(&self.job_left)
            .map(|(r, w)| r + w)
            .fold(0.0, f64::max);
        let machines = self
            .machine_ready
            .iter()
            .zip(&self.machine_left)
            .map(|(r, w)| r + w)
            .fold(0.0, f64::max);
        jobs.max(machines)
    }

    fn dfs(&mut self) {
        self.nodes += 1;
        if self.nodes.is_multiple_of(4096) && Instant::now() >= self.deadline {
            self.timed_out = true;
        }
        if self.timed_out {
            return;
        }
        let m = self.inst.n_machines();
        if self.order.len() == self.inst.n_ops() {
            let makespan = self.job_ready.iter().copied().fold(0.0, f64::max);
            if makespan < self.best {
                self.best = makespan;
                self.best_order = self.order.clone();
            }
            return;
        }
        if self.bound() >= self.best {
            return;
        }

        // Candidate with the earliest completion (lowest job on ties).
        let mut pivot: Option<(f64, usize)> = None;
        for job in 0..self.inst.n_jobs() {
            let r = self.next_rank[job];
            if r == m {
                continue;
            }
            let op = self.inst.op_id(job, r);
            let est = self.job_ready[job].max(self.machine_ready[self.inst.machine(op)]);
            let ect = est + self.dur[op];
            if pivot.is_none_or(|(c, _)| ect < c) {
                pivot = Some((ect, self.inst.machine(op)));
            }
        }
        let (cutoff, machine) = pivot.expect("non-terminal node has candidates");
        let mut conflict: Vec<(f64, OpId)> = (0..self.inst.n_jobs())
            .filter(|&j| self.next_rank[j] < m)
            .map(|j| self.inst.op_id(j, self.next_rank[j]))
            .filter(|&op| self.inst.machine(op) == machine)
            .map(|op| {
                let job = self.inst.op(op).job;
                (self.job_ready[job].max(self.machine_ready[machine]), op)
            })
            .filter(|&(est, _)| est < cutoff)
            .collect();
        conflict.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

        for (est, op) in conflict {
            let job = self.inst.op(op).job;
            let d = self.dur[op];
            let saved = (self.job_ready[job], self.machine_ready[machine]);
            self.job_ready[job] = est + d;
            self.machine_ready[machine] = est + d;
            self.job_left[job] -= d;
            self.machine_left[machine] -= d;
            self.next_rank[job] += 1;
            self.order.push(op);

            self.dfs();

            self.order.pop();
            self.next_rank[job] -= 1;
            self.job_left[job] += d;
            self.machine_left[machine] += d;
            (self.job_ready[job], self.machine_ready[machine]) = saved;
            if self.timed_out {
                return;
            }
        }
    }
}

/// Optimal makespan under mode durations, with a dispatch order achieving it.
pub fn exact_makespan(instance: &Instance, time_limit: Duration) -> ExactOutcome {
    let shared = Arc::new(instance.clone());
    let mode = Scenario::mode(instance);
    // Incumbent from the dispatching rules; the search only accepts strict improvements.
    let (mut best, mut best_order) = (f64::INFINITY, Vec::new());
    for rule in Rule::DETERMINISTIC {
        let s = pdr_dispatch(shared.clone(), rule);
        let c = sgs_replay(&s, &mode).expect("rule dispatch reaches a terminal state");
        if c < best {
            best = c;
            best_order = s.dispatch_order().to_vec();
        }
    }
    let dur = instance.mode_durations();
    let mut job_left = vec![0.0; instance.n_jobs()];
    let mut machine_left = vec![0.0; instance.n_machines()];
    for (op, o) in instance.ops().iter().enumerate() {
        job_left[o.job] += dur[op];
        machine_left[o.machine] += dur[op];
    }
    let mut search = Search {
        inst: instance,
        next_rank: vec![0; instance.n_jobs()],
        job_ready: vec![0.0; instance.n_jobs()],
        machine_ready: vec![0.0; instance.n_machines()],
        job_left,
        machine_left,
        order: Vec::with_capacity(instance.n_ops()),
        dur,
        best,
        best_order,
        deadline: Instant::now() + time_limit,
        nodes: 0,
        timed_out: false,
    };
    search.dfs();
    if search.timed_out {
        ExactOutcome::Timeout {
            best: Some((search.best, search.best_order)),
        }
    } else {
        ExactOutcome::Optimal {
            makespan: search.best,
            order: search.best_order,
        }
    }
}

/// Terminal state of the dispatch order returned by the search.
pub fn exact_state(instance: Arc<Instance>, order: &[OpId]) -> State {
    State::from_order(instance, order).expect("search orders are legal")
}
