//! Priority dispatching rules.
//!
//! Every rule scores the legal candidates of a state from mode durations and
//! dispatches the best one; ties go to the lowest job index.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;

use crate::env::{terminal_cost, EnvError, State};
use crate::instance::{Instance, OpId, Scenario};
use crate::seed::{self, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rule {
    /// Most operations remaining in the job.
    Mopnr,
    /// Shortest processing time.
    Spt,
    /// Most work remaining in the job.
    Mwkr,
    /// Smallest ratio of flow due date (cumulative job work through the
    /// candidate) to work remaining (from the candidate on).
    FddWkr,
    /// Uniform choice among legal candidates.
    Random(u64),
}

impl Rule {
    pub const DETERMINISTIC: [Rule; 4] = [Rule::Mopnr, Rule::Spt, Rule::Mwkr, Rule::FddWkr];

    /// Larger is better.
    fn score(self, state: &State, op: OpId) -> f64 {
        let inst = state.instance();
        let o = inst.op(op);
        let job_ops = inst.op_id(o.job, 0)..inst.op_id(o.job, inst.n_machines());
        let remaining = || job_ops.clone().filter(|&k| k >= op).map(|k| inst.op(k).duration.mode());
        match self {
            Rule::Mopnr => (inst.n_machines() - o.rank) as f64,
            Rule::Spt => -o.duration.mode(),
            Rule::Mwkr => remaining().sum(),
            Rule::FddWkr => {
                let due: f64 = job_ops.clone().filter(|&k| k <= op).map(|k| inst.op(k).duration.mode()).sum();
                -(due / remaining().sum::<f64>())
            }
            Rule::Random(_) => 0.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Rule::Mopnr => "MOPNR",
            Rule::Spt => "SPT",
            Rule::Mwkr => "MWKR",
            Rule::FddWkr => "FDD/WKR",
            Rule::Random(_) => "Random",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Rule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "MOPNR" => Ok(Rule::Mopnr),
            "SPT" => Ok(Rule::Spt),
            "MWKR" => Ok(Rule::Mwkr),
            "FDD/WKR" | "FDD_WKR" | "FDDWKR" => Ok(Rule::FddWkr),
            other => match other.strip_prefix("RANDOM") {
                Some("") => Ok(Rule::Random(0)),
                Some(rest) => rest
                    .trim_start_matches([':', '-'])
                    .parse()
                    .map(Rule::Random)
                    .map_err(|_| format!("bad random seed in {s:?}")),
                None => Err(format!("unknown rule {s:?}")),
            },
        }
    }
}

/// Picks the rule's candidate in `state`; `None` if the state is terminal.
pub fn choose<R: Rng + ?Sized>(rule: Rule, state: &State, rng: &mut R) -> Option<OpId> {
    let legal = state.legal_ops();
    if legal.is_empty() {
        return None;
    }
    if let Rule::Random(_) = rule {
        return Some(legal[rng.random_range(0..legal.len())]);
    }
    let mut best = legal[0];
    let mut best_score = rule.score(state, best);
    for &op in &legal[1..] {
        let s = rule.score(state, op);
        if s > best_score {
            best = op;
            best_score = s;
        }
    }
    Some(best)
}

/// Runs the rule from the initial state to a terminal state.
pub fn pdr_dispatch(instance: Arc<Instance>, rule: Rule) -> State {
    let seed = match rule {
        Rule::Random(s) => s,
        _ => 0,
    };
    let mut rng = seed::rng_for(seed, &[stream::RULE]);
    let mut state = State::reset(instance);
    while let Some(op) = choose(rule, &state, &mut rng) {
        state.step(op).expect("rules only pick legal actions");
    }
    state
}

/// Keeps the machine sequences of `state` and recomputes times with the
/// scenario's durations.
pub fn sgs_replay(state: &State, scenario: &Scenario) -> Result<f64, EnvError> {
    terminal_cost(state, scenario)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{sgs_starts, validate_schedule};
    use crate::instance::{generate_taillard, sample_scenario, stochasticize, DurationModel};

    #[test]
    fn single_job_order_is_forced() {
        let inst = Arc::new(generate_taillard(1, 4, 3).unwrap());
        for rule in Rule::DETERMINISTIC.into_iter().chain([Rule::Random(5)]) {
            assert_eq!(pdr_dispatch(inst.clone(), rule).dispatch_order(), &[0, 1, 2, 3]);
        }
    }

    #[test]
    fn one_machine_case() {
        let inst = Arc::new(
            Instance::deterministic(vec![vec![3.0], vec![5.0]], vec![vec![0], vec![0]]).unwrap(),
        );
        let spt = pdr_dispatch(inst.clone(), Rule::Spt);
        assert_eq!(spt.dispatch_order(), &[0, 1]);
        assert_eq!(sgs_replay(&spt, &Scenario::mode(&inst)).unwrap(), 8.0);
        let mwkr = pdr_dispatch(inst.clone(), Rule::Mwkr);
        assert_eq!(mwkr.dispatch_order(), &[1, 0]);
        assert_eq!(sgs_replay(&mwkr, &Scenario::mode(&inst)).unwrap(), 8.0);
        let starts = sgs_starts(&mwkr, &inst.mode_durations()).unwrap().starts;
        assert_eq!(starts, vec![Some(5.0), Some(0.0)]);
    }

    /// Straightforward restatement of the rule definitions.
    fn oracle_pick(rule: Rule, inst: &Instance, next_rank: &[usize]) -> Option<usize> {
        let m = inst.n_machines();
        let d = |j: usize, r: usize| inst.op(inst.op_id(j, r)).duration.mode();
        let mut best: Option<(usize, f64)> = None;
        for (j, &r) in next_rank.iter().enumerate() {
            if r == m {
                continue;
            }
            let rest: f64 = (r..m).map(|k| d(j, k)).sum();
            let done: f64 = (0..=r).map(|k| d(j, k)).sum();
            let key = match rule {
                Rule::Mopnr => (m - r) as f64,
                Rule::Spt => -d(j, r),
                Rule::Mwkr => rest,
                Rule::FddWkr => -done / rest,
                Rule::Random(_) => unreachable!(),
            };
            if best.is_none_or(|(_, b)| key > b) {
                best = Some((j, key));
            }
        }
        best.map(|(j, _)| inst.op_id(j, next_rank[j]))
    }

    #[test]
    fn rules_match_hand_simulation() {
        for seed in 0..20 {
            let inst = Arc::new(generate_taillard(3, 3, seed).unwrap());
            for rule in Rule::DETERMINISTIC {
                let got = pdr_dispatch(inst.clone(), rule);
                let mut next_rank = vec![0; 3];
                let mut expected = Vec::new();
                while let Some(op) = oracle_pick(rule, &inst, &next_rank) {
                    expected.push(op);
                    next_rank[inst.op(op).job] += 1;
                }
                assert_eq!(got.dispatch_order(), expected.as_slice(), "{rule} seed {seed}");
            }
        }
    }

    #[test]
    fn mopnr_fixed_instance() {
        // Equal remaining counts break ties by job, so MOPNR round-robins.
        let inst = Arc::new(generate_taillard(3, 3, 0).unwrap());
        let s = pdr_dispatch(inst, Rule::Mopnr);
        assert_eq!(s.dispatch_order(), &[0, 3, 6, 1, 4, 7, 2, 5, 8]);
    }

    #[test]
    fn replay_properties() {
        let inst = Arc::new(stochasticize(&generate_taillard(5, 5, 1).unwrap(), 1, 0.95, 1.1).unwrap());
        let comp = crate::rewire::propagate_completion;
        for rule in Rule::DETERMINISTIC {
            let s = pdr_dispatch(inst.clone(), rule);
            assert_eq!(s, pdr_dispatch(inst.clone(), rule));
            let mode = sgs_replay(&s, &Scenario::mode(&inst)).unwrap();
            assert_eq!(mode, sgs_starts(&s, &inst.mode_durations()).unwrap().makespan());
            let bounds = comp(&s, &crate::rewire::DurationChannels::of(&inst));
            let lo = bounds.iter().map(|c| c[0]).fold(0.0, f64::max);
            let hi = bounds.iter().map(|c| c[2]).fold(0.0, f64::max);
            let mut total = 0.0;
            for k in 0..100 {
                let sc = sample_scenario(&inst, k);
                let sch = sgs_starts(&s, &sc.durations).unwrap();
                assert!(validate_schedule(&inst, &sch).is_empty());
                total += sgs_replay(&s, &sc).unwrap();
            }
            let mean = total / 100.0;
            assert!(lo <= mean && mean <= hi);
        }
    }

    #[test]
    fn degenerate_distributions_replay_identically() {
        let c = DurationModel::triangular(4.0, 4.0, 4.0).unwrap();
        let inst = Arc::new(
            Instance::new(vec![vec![0, 1], vec![1, 0]], vec![vec![c, c], vec![c, c]]).unwrap(),
        );
        let s = pdr_dispatch(inst.clone(), Rule::Mwkr);
        let first = sgs_replay(&s, &sample_scenario(&inst, 0)).unwrap();
        for k in 1..20 {
            assert_eq!(sgs_replay(&s, &sample_scenario(&inst, k)).unwrap(), first);
        }
    }

    #[test]
    fn parse_rule_names() {
        assert_eq!("mopnr".parse::<Rule>().unwrap(), Rule::Mopnr);
        assert_eq!("FDD/WKR".parse::<Rule>().unwrap(), Rule::FddWkr);
        assert_eq!("random:7".parse::<Rule>().unwrap(), Rule::Random(7));
        assert!("edd".parse::<Rule>().is_err());
    }
}
