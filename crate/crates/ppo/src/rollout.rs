//! Episode collection and return/advantage computation.

use std::sync::Arc;

use jobshop_core::rewire::completion_scale;
use jobshop_core::{sample_scenario, seed, terminal_cost, Instance, OpId, RewiredGraph, State};
use jobshop_gnn::{select, ActMode, GnnError, Policy, Scalar};
use rayon::prelude::*;

/// One episode to run: the instance plus the seeds of its action draws and
/// of its single duration scenario.
#[derive(Debug, Clone)]
pub struct EpisodeSpec {
    pub instance: Arc<Instance>,
    pub policy_seed: u64,
    pub scenario_seed: u64,
}

/// A finished episode. States are not stored; `state(t)` replays the prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub instance: Arc<Instance>,
    pub actions: Vec<OpId>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    /// Makespan on the sampled scenario.
    pub cost: f64,
    /// Reward per unit of makespan (before the sign flip).
    pub reward_scale: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// State before step `t`.
    pub fn state(&self, t: usize) -> State {
        State::from_order(self.instance.clone(), &self.actions[..t]).expect("recorded actions are legal")
    }

    pub fn mask(&self, t: usize) -> Vec<bool> {
        self.state(t).legal_actions()
    }

    /// Zero everywhere except the last step.
    pub fn rewards(&self) -> Vec<f64> {
        let mut r = vec![0.0; self.len()];
        if let Some(last) = r.last_mut() {
            *last = -self.cost * self.reward_scale;
        }
        r
    }
}

/// Runs every episode to completion. Episodes are grouped `chunk` at a time
/// and stepped in lockstep (one network call per step); groups run in
/// parallel. Each episode owns its random stream, so the result does not
/// depend on the grouping or the thread count beyond floating point
/// reassociation inside batched matrix products.
pub fn collect<S: Scalar>(
    policy: &Policy<S>,
    episodes: &[EpisodeSpec],
    mode: ActMode,
    reward_scale: f64,
    chunk: usize,
) -> Result<Vec<Trajectory>, GnnError> {
    let groups = episodes
        .par_chunks(chunk.max(1))
        .map(|group| run_group(policy, group, mode, reward_scale))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(groups.into_iter().flatten().collect())
}

fn run_group<S: Scalar>(
    policy: &Policy<S>,
    group: &[EpisodeSpec],
    mode: ActMode,
    reward_scale: f64,
) -> Result<Vec<Trajectory>, GnnError> {
    let mut states: Vec<State> = group.iter().map(|e| State::reset(e.instance.clone())).collect();
    let mut rngs: Vec<_> = group.iter().map(|e| seed::rng(e.policy_seed)).collect();
    let mut trajs: Vec<Trajectory> = group
        .iter()
        .map(|e| Trajectory {
            instance: e.instance.clone(),
            actions: Vec::new(),
            log_probs: Vec::new(),
            values: Vec::new(),
            cost: 0.0,
            reward_scale: reward_scale / completion_scale(&e.instance),
        })
        .collect();
    loop {
        let live: Vec<usize> = (0..states.len()).filter(|&k| !states[k].is_terminal()).collect();
        if live.is_empty() {
            break;
        }
        let graphs: Vec<RewiredGraph> = live.iter().map(|&k| policy.observe(&states[k])).collect();
        let refs: Vec<&RewiredGraph> = graphs.iter().collect();
        for (out, &k) in policy.evaluate(&refs)?.iter().zip(&live) {
            let op = select(&out.log_probs, mode, &mut rngs[k]).ok_or(GnnError::NoLegalAction { graph: k })?;
            states[k].step(op).expect("policy picks legal actions");
            trajs[k].actions.push(op);
            trajs[k].log_probs.push(out.log_probs[op]);
            trajs[k].values.push(out.value);
        }
    }
    for ((traj, state), spec) in trajs.iter_mut().zip(&states).zip(group) {
        let scenario = sample_scenario(&spec.instance, spec.scenario_seed);
        traj.cost = terminal_cost(state, &scenario).expect("terminal state");
    }
    Ok(trajs)
}

/// Per-step advantages and returns of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimates {
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

/// Discounted return-to-go of every step. With `lambda = 1` the advantage is
/// the return minus the critic's value; otherwise generalized advantage
/// estimation with the recorded values as the critic.
pub fn advantages(traj: &Trajectory, gamma: f64, lambda: f64) -> Estimates {
    let rewards = traj.rewards();
    let n = rewards.len();
    let mut returns = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        acc = rewards[t] + gamma * acc;
        returns[t] = acc;
    }
    let advantages = if lambda == 1.0 {
        returns.iter().zip(&traj.values).map(|(r, v)| r - v).collect()
    } else {
        let mut adv = vec![0.0; n];
        let mut running = 0.0;
        for t in (0..n).rev() {
            let next = if t + 1 < n { traj.values[t + 1] } else { 0.0 };
            let delta = rewards[t] + gamma * next - traj.values[t];
            running = delta + gamma * lambda * running;
            adv[t] = running;
        }
        adv
    };
    Estimates { advantages, returns }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hand_built(values: Vec<f64>) -> Trajectory {
        let inst = Arc::new(Instance::deterministic(vec![vec![1.0, 2.0, 3.0]], vec![vec![0, 1, 2]]).unwrap());
        Trajectory {
            instance: inst,
            actions: vec![0, 1, 2],
            log_probs: vec![0.0; 3],
            values,
            cost: 6.0,
            reward_scale: 0.5,
        }
    }

    #[test]
    fn rewards_only_at_the_end() {
        let t = hand_built(vec![0.0; 3]);
        assert_eq!(t.rewards(), vec![0.0, 0.0, -3.0]);
        assert_eq!(t.rewards().iter().sum::<f64>(), -t.cost * t.reward_scale);
    }

    #[test]
    fn three_step_by_hand() {
        let t = hand_built(vec![-2.0, -2.5, -3.5]);
        let e = advantages(&t, 1.0, 1.0);
        assert_eq!(e.returns, vec![-3.0, -3.0, -3.0]);
        assert_eq!(e.advantages, vec![-1.0, -0.5, 0.5]);
        let e = advantages(&t, 0.5, 1.0);
        assert_eq!(e.returns, vec![-0.75, -1.5, -3.0]);
    }

    #[test]
    fn critic_extremes() {
        let zero = hand_built(vec![0.0; 3]);
        let e = advantages(&zero, 1.0, 1.0);
        assert_eq!(e.advantages, e.returns);
        let perfect = hand_built(vec![-3.0; 3]);
        assert_eq!(advantages(&perfect, 1.0, 1.0).advantages, vec![0.0; 3]);
        assert_eq!(advantages(&perfect, 1.0, 0.9).advantages, vec![0.0; 3]);
    }

    #[test]
    fn gae_limits() {
        let t = hand_built(vec![-1.0, -2.0, -2.5]);
        // lambda = 0: one-step temporal differences.
        let e = advantages(&t, 1.0, 0.0);
        assert_eq!(e.advantages, vec![-1.0, -0.5, -0.5]);
        // lambda close to 1 approaches the Monte Carlo estimate.
        let a = advantages(&t, 1.0, 1.0 - 1e-12).advantages;
        let b = advantages(&t, 1.0, 1.0).advantages;
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9);
        }
    }
}
