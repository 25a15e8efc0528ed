use std::fmt::Write as _;

use jobshop_core::seed::{self, stream};
use jobshop_core::{sample_scenario, terminal_cost, Instance, Scenario, State};

/// Sorted replay makespans of each solver on one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub series: Vec<(String, Vec<f64>)>,
}

/// The draws a curve with this seed replays.
pub fn curve_scenarios(instance: &Instance, n_scenarios: usize, seed: u64) -> Vec<Scenario> {
    (0..n_scenarios as u64)
        .map(|j| sample_scenario(instance, seed::derive(seed, &[stream::EVAL, j])))
        .collect()
}

/// Replays every solver's fixed machine sequences under the same
/// `n_scenarios` draws and sorts the makespans.
pub fn cumulative_curve(instance: &Instance, solvers: &[(String, State)], n_scenarios: usize, seed: u64) -> Curve {
    let scenarios = curve_scenarios(instance, n_scenarios, seed);
    let series = solvers
        .iter()
        .map(|(name, state)| {
            let mut v: Vec<f64> = scenarios
                .iter()
                .map(|s| terminal_cost(state, s).expect("terminal state"))
                .collect();
            v.sort_by(f64::total_cmp);
            (name.clone(), v)
        })
        .collect();
    Curve { series }
}

impl Curve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,rank,makespan\n");
        for (name, v) in &self.series {
            for (rank, x) in v.iter().enumerate() {
                writeln!(out, "{name},{},{x}", rank + 1).unwrap();
            }
        }
        out
    }

    /// One data block per solver (`index` selects it in gnuplot) with the
    /// makespan and its empirical cumulative fraction.
    pub fn to_gnuplot(&self) -> String {
        let mut out = String::new();
        for (name, v) in &self.series {
            writeln!(out, "# {name}").unwrap();
            for (rank, x) in v.iter().enumerate() {
                writeln!(out, "{x} {}", (rank + 1) as f64 / v.len() as f64).unwrap();
            }
            out.push_str("\n\n");
        }
        out
    }

    pub fn mean(&self, method: &str) -> Option<f64> {
        self.series
            .iter()
            .find(|(n, _)| n == method)
            .map(|(_, v)| v.iter().sum::<f64>() / v.len() as f64)
    }
}
