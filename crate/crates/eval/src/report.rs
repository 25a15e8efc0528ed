use std::fmt::Write as _;
use std::sync::Arc;

use jobshop_core::rules::{pdr_dispatch, sgs_replay};
use jobshop_core::seed::{self, stream};
use jobshop_core::{sample_scenario, Instance, Rule, Scenario};
use rayon::prelude::*;
use serde::Serialize;

/// One rule on one instance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineRow {
    pub instance: String,
    pub rule: String,
    pub mode_makespan: f64,
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
    pub n_scenarios: usize,
}

/// Nearest-rank percentile of sorted data.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Dispatches each instance with each rule once, then replays the machine
/// sequences under `n_scenarios` scenarios shared by all rules of an
/// instance.
pub fn baseline_report(
    instances: &[(String, Arc<Instance>)],
    rules: &[Rule],
    n_scenarios: usize,
    seed: u64,
) -> Vec<BaselineRow> {
    instances
        .par_iter()
        .enumerate()
        .flat_map_iter(|(k, (name, inst))| {
            let scenarios: Vec<Scenario> = (0..n_scenarios.max(1) as u64)
                .map(|j| sample_scenario(inst, seed::derive(seed, &[stream::EVAL, k as u64, j])))
                .collect();
            rules
                .iter()
                .map(|&rule| {
                    let state = pdr_dispatch(inst.clone(), rule);
                    let mode = sgs_replay(&state, &Scenario::mode(inst)).expect("terminal state");
                    let mut costs: Vec<f64> = scenarios
                        .iter()
                        .map(|s| sgs_replay(&state, s).expect("terminal state"))
                        .collect();
                    let mean = costs.iter().sum::<f64>() / costs.len() as f64;
                    costs.sort_by(f64::total_cmp);
                    BaselineRow {
                        instance: name.clone(),
                        rule: rule.to_string(),
                        mode_makespan: mode,
                        mean,
                        p50: percentile(&costs, 0.5),
                        p95: percentile(&costs, 0.95),
                        n_scenarios: costs.len(),
                    }
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

pub const BASELINE_HEADER: &str = "instance,rule,mode_makespan,mean_makespan,p50_makespan,p95_makespan,n_scenarios";

pub fn baseline_csv(rows: &[BaselineRow]) -> String {
    let mut out = format!("{BASELINE_HEADER}\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.instance, r.rule, r.mode_makespan, r.mean, r.p50, r.p95, r.n_scenarios
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentiles() {
        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(percentile(&v, 0.5), 10.0);
        assert_eq!(percentile(&v, 0.95), 19.0);
        assert_eq!(percentile(&[3.0], 0.95), 3.0);
    }
}
