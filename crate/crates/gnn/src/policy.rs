//! Masked action distribution on top of the raw network outputs.

use jobshop_core::rewire::features;
use std::sync::Arc;

use jobshop_core::{Instance, OpId, RewiredGraph, State};
use rand::Rng;
use rayon::prelude::*;

use crate::batch::GraphBatch;
use crate::config::NetworkConfig;
use crate::net::forward;
use crate::params::Params;
use crate::scalar::Scalar;
use crate::GnnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActMode {
    Sample,
    Argmax,
}

/// Outputs for one graph. Masked actions have `log_probs = -inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub logits: Vec<f64>,
    pub value: f64,
    pub log_probs: Vec<f64>,
    pub entropy: f64,
}

impl PolicyOutput {
    pub fn probs(&self) -> Vec<f64> {
        self.log_probs.iter().map(|l| l.exp()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Action {
    pub op: OpId,
    pub log_prob: f64,
    pub value: f64,
    pub entropy: f64,
}

/// Log-probabilities of the softmax restricted to the legal entries; `None`
/// when nothing is legal.
pub fn masked_log_softmax(logits: &[f64], mask: &[bool]) -> Option<Vec<f64>> {
    assert_eq!(logits.len(), mask.len());
    let mx = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&l, _)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return None;
    }
    let sum: f64 = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&l, _)| (l - mx).exp())
        .sum();
    let lse = mx + sum.ln();
    Some(
        logits
            .iter()
            .zip(mask)
            .map(|(&l, &m)| if m { l - lse } else { f64::NEG_INFINITY })
            .collect(),
    )
}

pub fn entropy(log_probs: &[f64]) -> f64 {
    -log_probs
        .iter()
        .filter(|l| l.is_finite())
        .map(|&l| l.exp() * l)
        .sum::<f64>()
}

/// Derivative of `log p(action)` with respect to the logits; zero on masked
/// entries.
pub fn log_prob_grad(log_probs: &[f64], action: usize) -> Vec<f64> {
    log_probs
        .iter()
        .enumerate()
        .map(|(i, &l)| f64::from(u8::from(i == action)) - l.exp())
        .collect()
}

/// Derivative of the entropy with respect to the logits.
pub fn entropy_grad(log_probs: &[f64]) -> Vec<f64> {
    let h = entropy(log_probs);
    log_probs
        .iter()
        .map(|&l| if l.is_finite() { -l.exp() * (l + h) } else { 0.0 })
        .collect()
}

/// Picks an action index: the highest legal logit (lowest index on ties) or
/// a draw from the masked distribution.
pub fn select<R: Rng + ?Sized>(log_probs: &[f64], mode: ActMode, rng: &mut R) -> Option<usize> {
    let legal = || (0..log_probs.len()).filter(|&i| log_probs[i].is_finite());
    match mode {
        ActMode::Argmax => legal().fold(None, |best: Option<usize>, i| match best {
            Some(b) if log_probs[b] >= log_probs[i] => Some(b),
            _ => Some(i),
        }),
        ActMode::Sample => {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut last = None;
            for i in legal() {
                acc += log_probs[i].exp();
                last = Some(i);
                if u < acc {
                    return Some(i);
                }
            }
            last
        }
    }
}

/// Network parameters plus the observation settings they were trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy<S> {
    pub params: Params<S>,
}

impl<S: Scalar> Policy<S> {
    pub fn new(params: Params<S>) -> Self {
        Self { params }
    }

    pub fn init(config: &NetworkConfig, seed: u64) -> Result<Self, GnnError> {
        Params::init(config, seed).map(Self::new)
    }

    pub fn config(&self) -> &NetworkConfig {
        self.params.config()
    }

    pub fn observe(&self, state: &State) -> RewiredGraph {
        features(state, self.config().rewire_options())
    }

    pub fn evaluate(&self, graphs: &[&RewiredGraph]) -> Result<Vec<PolicyOutput>, GnnError> {
        let batch = GraphBatch::new(graphs)?;
        let out = forward(&self.params, &batch, false)?;
        (0..batch.n_graphs())
            .map(|g| {
                let range = batch.logit_range(g);
                let logits: Vec<f64> = out.logits[range.clone()].iter().map(|v| v.as_f64()).collect();
                let log_probs = masked_log_softmax(&logits, &batch.mask[range])
                    .ok_or(GnnError::NoLegalAction { graph: g })?;
                Ok(PolicyOutput {
                    value: out.values[g].as_f64(),
                    entropy: entropy(&log_probs),
                    logits,
                    log_probs,
                })
            })
            .collect()
    }

    pub fn act<R: Rng + ?Sized>(
        &self,
        graph: &RewiredGraph,
        mode: ActMode,
        rng: &mut R,
    ) -> Result<Action, GnnError> {
        let out = self.evaluate(&[graph])?.remove(0);
        let op = select(&out.log_probs, mode, rng).ok_or(GnnError::NoLegalAction { graph: 0 })?;
        Ok(Action {
            op,
            log_prob: out.log_probs[op],
            value: out.value,
            entropy: out.entropy,
        })
    }

    /// Dispatches greedily from `state` until the schedule is complete.
    pub fn rollout_argmax(&self, mut state: State) -> Result<State, GnnError> {
        let mut rng = jobshop_core::seed::rng(0);
        while !state.is_terminal() {
            let a = self.act(&self.observe(&state), ActMode::Argmax, &mut rng)?;
            state.step(a.op).expect("policy picks legal actions");
        }
        Ok(state)
    }

    /// Greedy schedules for many instances. Groups of `chunk` episodes run in
    /// lockstep with one network call per step; groups run in parallel.
    pub fn schedule_argmax(&self, instances: &[Arc<Instance>], chunk: usize) -> Result<Vec<State>, GnnError> {
        let groups: Vec<Vec<State>> = instances
            .par_chunks(chunk.max(1))
            .map(|group| {
                let mut states: Vec<State> = group.iter().map(|i| State::reset(i.clone())).collect();
                let mut rng = jobshop_core::seed::rng(0);
                loop {
                    let live: Vec<usize> = (0..states.len()).filter(|&k| !states[k].is_terminal()).collect();
                    if live.is_empty() {
                        return Ok(states);
                    }
                    let graphs: Vec<RewiredGraph> = live.iter().map(|&k| self.observe(&states[k])).collect();
                    let refs: Vec<&RewiredGraph> = graphs.iter().collect();
                    for (out, &k) in self.evaluate(&refs)?.iter().zip(&live) {
                        let op = select(&out.log_probs, ActMode::Argmax, &mut rng)
                            .ok_or(GnnError::NoLegalAction { graph: k })?;
                        states[k].step(op).expect("policy picks legal actions");
                    }
                }
            })
            .collect::<Result<_, GnnError>>()?;
        Ok(groups.into_iter().flatten().collect())
    }
}
