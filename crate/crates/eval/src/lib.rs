//! Evaluation protocol: fixed instance sets with paired duration scenarios,
//! mean makespan and gap tables, per-instance rule reports and cumulative
//! makespan curves.
//!
//! Every method compared on a row sees the same instances and the same
//! scenario draws.

pub mod curve;
pub mod report;
pub mod table;

use std::sync::Arc;
use std::time::Duration;

use jobshop_core::exact::{exact_makespan, exact_state, ExactOutcome};
use jobshop_core::rules::pdr_dispatch;
use jobshop_core::seed::{self, stream};
use jobshop_core::{sample_scenario, terminal_cost, Family, Instance, Rule, Scenario, Size, State};
use jobshop_gnn::{GnnError, Policy};
use rayon::prelude::*;

pub use curve::{cumulative_curve, curve_scenarios, Curve};
pub use report::{baseline_csv, baseline_report, BaselineRow};
pub use table::{ResultRow, Table};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("gap needs a positive reference makespan, got {0}")]
    NonPositiveReference(f64),
    #[error(transparent)]
    Network(#[from] GnnError),
    #[error(transparent)]
    Instance(#[from] jobshop_core::InstanceError),
    #[error("{0}")]
    Invalid(String),
}

/// Percent excess of `makespan` over `best`.
pub fn gap(makespan: f64, best: f64) -> Result<f64, EvalError> {
    if best.is_nan() || best <= 0.0 {
        return Err(EvalError::NonPositiveReference(best));
    }
    Ok(100.0 * (makespan - best) / best)
}

/// Instances of one size with their paired scenarios.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub size: Size,
    pub seed: u64,
    pub instances: Vec<Arc<Instance>>,
    /// Per instance. Deterministic instances get the single mode scenario.
    pub scenarios: Vec<Vec<Scenario>>,
}

impl EvalSet {
    /// Draws `n_instances` of `family` and `n_scenarios` per instance. The
    /// draws depend on the seed and the size only, so the same size yields
    /// the same set whichever other sizes are evaluated alongside it.
    pub fn generate(family: Family, n_instances: usize, n_scenarios: usize, seed: u64) -> Result<Self, EvalError> {
        if n_instances == 0 || n_scenarios == 0 {
            return Err(EvalError::Invalid("need at least one instance and one scenario".into()));
        }
        let (n, m) = (family.size.jobs as u64, family.size.machines as u64);
        let instances = (0..n_instances as u64)
            .map(|k| family.generate(seed::derive(seed, &[stream::EVAL, n, m, k])).map(Arc::new))
            .collect::<Result<Vec<_>, _>>()?;
        let scenarios = instances
            .iter()
            .enumerate()
            .map(|(k, inst)| {
                if inst.is_stochastic() {
                    (0..n_scenarios as u64)
                        .map(|j| sample_scenario(inst, seed::derive(seed, &[stream::EVAL, n, m, k as u64, j])))
                        .collect()
                } else {
                    vec![Scenario::mode(inst)]
                }
            })
            .collect();
        Ok(Self {
            size: family.size,
            seed,
            instances,
            scenarios,
        })
    }

    /// Scenarios actually used per instance.
    pub fn n_scenarios(&self) -> usize {
        self.scenarios.first().map_or(0, Vec::len)
    }

    /// Mean over every (instance, scenario) cell of the replayed makespan of
    /// one terminal state per instance.
    pub fn mean_makespan(&self, states: &[State]) -> f64 {
        assert_eq!(states.len(), self.instances.len());
        let per_instance: Vec<f64> = states
            .par_iter()
            .zip(&self.scenarios)
            .map(|(s, scs)| scs.iter().map(|sc| terminal_cost(s, sc).expect("terminal state")).sum::<f64>())
            .collect();
        let cells: usize = self.scenarios.iter().map(Vec::len).sum();
        per_instance.iter().sum::<f64>() / cells as f64
    }
}

/// Something that turns an instance into a dispatch order.
#[derive(Debug, Clone)]
pub enum Method {
    Policy { name: String, policy: Arc<Policy<f32>> },
    Rule(Rule),
    /// Branch and bound on mode durations; on timeout the incumbent is used.
    Exact { time_limit: Duration },
}

impl Method {
    pub fn name(&self) -> String {
        match self {
            Method::Policy { name, .. } => name.clone(),
            Method::Rule(r) => r.to_string(),
            Method::Exact { .. } => "exact".to_string(),
        }
    }

    /// Terminal states for every instance plus the number of exact-solver
    /// timeouts.
    pub fn schedule(&self, instances: &[Arc<Instance>], chunk: usize) -> Result<(Vec<State>, usize), EvalError> {
        match self {
            Method::Policy { policy, .. } => Ok((policy.schedule_argmax(instances, chunk)?, 0)),
            Method::Rule(rule) => Ok((instances.par_iter().map(|i| pdr_dispatch(i.clone(), *rule)).collect(), 0)),
            Method::Exact { time_limit } => {
                let solved: Vec<(State, bool)> = instances
                    .par_iter()
                    .map(|i| match exact_makespan(i, *time_limit) {
                        ExactOutcome::Optimal { order, .. } => (exact_state(i.clone(), &order), false),
                        ExactOutcome::Timeout { best: Some((_, order)) } => (exact_state(i.clone(), &order), true),
                        ExactOutcome::Timeout { best: None } => (pdr_dispatch(i.clone(), Rule::Mopnr), true),
                    })
                    .collect();
                let timeouts = solved.iter().filter(|(_, t)| *t).count();
                Ok((solved.into_iter().map(|(s, _)| s).collect(), timeouts))
            }
        }
    }
}

/// Scores every method on the same set and computes gaps against the best
/// mean on the row.
pub fn evaluate_set(set: &EvalSet, methods: &[Method], chunk: usize) -> Result<Vec<ResultRow>, EvalError> {
    let mut rows = Vec::with_capacity(methods.len());
    for m in methods {
        let (states, timeouts) = m.schedule(&set.instances, chunk)?;
        rows.push(ResultRow {
            size: set.size,
            method: m.name(),
            mean_makespan: set.mean_makespan(&states),
            gap_pct: 0.0,
            n_instances: set.instances.len(),
            n_scenarios: set.n_scenarios(),
            seed: set.seed,
            timeouts,
        });
    }
    let best = rows.iter().map(|r| r.mean_makespan).fold(f64::INFINITY, f64::min);
    for r in &mut rows {
        r.gap_pct = gap(r.mean_makespan, best)?;
    }
    Ok(rows)
}

/// Evaluation settings shared by every size.
#[derive(Debug, Clone)]
pub struct Protocol {
    pub sizes: Vec<Size>,
    pub stochastic: bool,
    pub low: f64,
    pub high: f64,
    pub n_instances: usize,
    pub n_scenarios: usize,
    pub seed: u64,
    /// Graphs per network call.
    pub chunk: usize,
}

impl Protocol {
    pub fn family(&self, size: Size) -> Family {
        Family {
            size,
            stochastic: self.stochastic,
            low: self.low,
            high: self.high,
        }
    }
}

/// Runs `methods` on every size of the protocol.
pub fn evaluate(protocol: &Protocol, methods: &[Method]) -> Result<Table, EvalError> {
    let mut rows = Vec::new();
    for &size in &protocol.sizes {
        let set = EvalSet::generate(protocol.family(size), protocol.n_instances, protocol.n_scenarios, protocol.seed)?;
        rows.extend(evaluate_set(&set, methods, protocol.chunk)?);
    }
    Ok(Table { rows })
}

/// Mean makespan of the greedy policy stored in `checkpoint` on every size.
pub fn evaluate_policy(checkpoint: &std::path::Path, protocol: &Protocol) -> Result<Table, EvalError> {
    let params = jobshop_gnn::Params::<f32>::load(checkpoint)?;
    if let Some(s) = protocol.sizes.iter().find(|s| s.machines > params.config().max_machines) {
        return Err(EvalError::Invalid(format!(
            "size {s} has more machines than the checkpoint supports ({})",
            params.config().max_machines
        )));
    }
    let method = Method::Policy {
        name: "policy".into(),
        policy: Arc::new(Policy::new(params)),
    };
    evaluate(protocol, &[method])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gap_examples() {
        assert_eq!(gap(485.0, 485.0).unwrap(), 0.0);
        let g = gap(521.0, 485.0).unwrap();
        assert_eq!(format!("{g:.2}"), "7.42");
        assert_eq!(format!("{g:.1}"), "7.4");
        let g = gap(1217.0, 1002.0).unwrap();
        assert_eq!(format!("{g:.2}"), "21.46");
        assert_eq!(format!("{g:.1}"), "21.5");
        assert!(gap(1.0, 0.0).is_err());
        assert!(gap(1.0, -3.0).is_err());
        assert!(gap(1.0, f64::NAN).is_err());
        assert!(gap(10.0, 4.0).unwrap() < gap(10.5, 4.0).unwrap());
    }

    #[test]
    fn sets_depend_on_seed_and_size_only() {
        let fam = Family::stochastic(Size::new(3, 3));
        let a = EvalSet::generate(fam, 3, 4, 7).unwrap();
        let b = EvalSet::generate(fam, 3, 4, 7).unwrap();
        assert_eq!(a.instances, b.instances);
        assert_eq!(a.scenarios, b.scenarios);
        assert_eq!(a.n_scenarios(), 4);
        let det = EvalSet::generate(Family::deterministic(Size::new(3, 3)), 3, 4, 7).unwrap();
        assert_eq!(det.n_scenarios(), 1);
        assert!(EvalSet::generate(fam, 0, 4, 7).is_err());
    }
}
