//! Clipped-surrogate updates over rewired trial data.

use jobshop_core::seed;
use jobshop_core::RewiredGraph;
use jobshop_gnn::{
    backward, entropy, entropy_grad, forward, log_prob_grad, masked_log_softmax, GnnError, GraphBatch, Params,
    Scalar,
};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::PpoConfig;
use crate::optim::{clip_grad_norm, Adam};
use crate::rollout::{advantages, Trajectory};

/// One decision with everything the loss needs.
#[derive(Debug, Clone)]
pub struct Sample {
    pub graph: RewiredGraph,
    pub action: usize,
    pub old_log_prob: f64,
    pub advantage: f64,
    pub ret: f64,
}

/// Rewires every visited state and attaches advantages and returns.
pub fn build_samples(trajs: &[Trajectory], config: &PpoConfig, rewire: jobshop_core::RewireOptions) -> Vec<Sample> {
    let mut samples: Vec<Sample> = trajs
        .par_iter()
        .flat_map_iter(|traj| {
            let est = advantages(traj, config.gamma, config.gae_lambda);
            let mut state = jobshop_core::State::reset(traj.instance.clone());
            let mut out = Vec::with_capacity(traj.len());
            for t in 0..traj.len() {
                out.push(Sample {
                    graph: jobshop_core::rewire::features(&state, rewire),
                    action: traj.actions[t],
                    old_log_prob: traj.log_probs[t],
                    advantage: est.advantages[t],
                    ret: est.returns[t],
                });
                state.step(traj.actions[t]).expect("recorded actions are legal");
            }
            out
        })
        .collect();
    if config.normalize_advantages && samples.len() > 1 {
        let n = samples.len() as f64;
        let mean = samples.iter().map(|s| s.advantage).sum::<f64>() / n;
        let var = samples.iter().map(|s| (s.advantage - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let std = var.sqrt() + 1e-8;
        for s in &mut samples {
            s.advantage = (s.advantage - mean) / std;
        }
    }
    samples
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Estimate on the last minibatch examined.
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
    /// Epochs started, including the one cut short by the KL check.
    pub epochs: usize,
    /// Optimizer steps taken.
    pub updates: usize,
    pub early_stop: bool,
    pub rolled_back: bool,
}

struct Minibatch<S> {
    grads: Params<S>,
    policy_loss: f64,
    value_loss: f64,
    entropy: f64,
    kl: f64,
    clipped: f64,
}

/// Loss terms and gradients of one minibatch, every term averaged over the
/// minibatch. Sub-batches are evaluated in parallel and summed in order.
fn minibatch<S: Scalar>(
    params: &Params<S>,
    samples: &[&Sample],
    config: &PpoConfig,
    sub_batch: usize,
) -> Result<Minibatch<S>, GnnError> {
    let n = samples.len() as f64;
    let parts = samples
        .par_chunks(sub_batch.max(1))
        .map(|part| {
            let graphs: Vec<&RewiredGraph> = part.iter().map(|s| &s.graph).collect();
            let batch = GraphBatch::new(&graphs)?;
            let fwd = forward(params, &batch, true)?;
            let mut dlogits = vec![S::zero(); batch.n_logits()];
            let mut dvalues = vec![S::zero(); part.len()];
            let mut terms = [0.0; 5];
            for (g, s) in part.iter().enumerate() {
                let range = batch.logit_range(g);
                let logits: Vec<f64> = fwd.logits[range.clone()].iter().map(|v| v.as_f64()).collect();
                let lp = masked_log_softmax(&logits, &batch.mask[range.clone()])
                    .ok_or(GnnError::NoLegalAction { graph: g })?;
                let log_ratio = lp[s.action] - s.old_log_prob;
                let ratio = log_ratio.exp();
                let unclipped = ratio * s.advantage;
                let clipped = ratio.clamp(1.0 - config.clip_eps, 1.0 + config.clip_eps) * s.advantage;
                let h = entropy(&lp);
                let value = fwd.values[g].as_f64();
                terms[0] -= unclipped.min(clipped);
                terms[1] += (value - s.ret).powi(2);
                terms[2] += h;
                terms[3] += (ratio - 1.0) - log_ratio;
                terms[4] += f64::from(u8::from((ratio - 1.0).abs() > config.clip_eps));
                let dnew = if unclipped <= clipped { -unclipped } else { 0.0 };
                let gp = log_prob_grad(&lp, s.action);
                let ge = entropy_grad(&lp);
                for ((d, a), b) in dlogits[range].iter_mut().zip(&gp).zip(&ge) {
                    *d = S::from_f64((dnew * a - config.entropy_coef * b) / n);
                }
                dvalues[g] = S::from_f64(config.value_coef * 2.0 * (value - s.ret) / n);
            }
            Ok((backward(params, &batch, &fwd, &dlogits, &dvalues), terms))
        })
        .collect::<Result<Vec<_>, GnnError>>()?;
    let mut parts = parts.into_iter();
    let (mut grads, mut terms) = parts.next().expect("non-empty minibatch");
    for (g, t) in parts {
        grads.add_scaled(&g, S::one());
        for (a, b) in terms.iter_mut().zip(t) {
            *a += b;
        }
    }
    Ok(Minibatch {
        grads,
        policy_loss: terms[0] / n,
        value_loss: terms[1] / n,
        entropy: terms[2] / n,
        kl: terms[3] / n,
        clipped: terms[4] / n,
    })
}

/// Runs up to `config.epochs` shuffled passes of minibatch updates. Before
/// each step the approximate KL divergence between the collecting policy and
/// the current one is measured on the minibatch; once it exceeds the target
/// the update stops. A non-finite loss or gradient restores the parameters
/// and optimizer state from before the call.
pub fn update<S: Scalar>(
    params: &mut Params<S>,
    adam: &mut Adam<S>,
    samples: &[Sample],
    config: &PpoConfig,
    sub_batch: usize,
    shuffle_seed: u64,
) -> Result<UpdateStats, GnnError> {
    let backup = (params.clone(), adam.clone());
    let mut stats = UpdateStats::default();
    let mut sums = [0.0; 5];
    let outcome = (|| {
        if samples.is_empty() {
            return Ok(());
        }
        let mut order: Vec<usize> = (0..samples.len()).collect();
        for epoch in 0..config.epochs {
            stats.epochs += 1;
            order.shuffle(&mut seed::rng_for(shuffle_seed, &[epoch as u64]));
            for chunk in order.chunks(config.minibatch_size) {
                let picked: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
                let mut mb = minibatch(params, &picked, config, sub_batch)?;
                let losses = [mb.policy_loss, mb.value_loss, mb.entropy, mb.kl];
                if losses.iter().any(|v| !v.is_finite()) || !mb.grads.is_finite() {
                    return Err(GnnError::NonFinite { layer: 0 });
                }
                stats.approx_kl = mb.kl;
                if mb.kl > config.target_kl {
                    stats.early_stop = true;
                    return Ok(());
                }
                let norm = clip_grad_norm(&mut mb.grads, config.max_grad_norm);
                adam.apply(params, &mb.grads, config.learning_rate);
                if !params.is_finite() {
                    return Err(GnnError::NonFinite { layer: 0 });
                }
                stats.updates += 1;
                for (s, v) in sums.iter_mut().zip([mb.policy_loss, mb.value_loss, mb.entropy, mb.clipped, norm]) {
                    *s += v;
                }
            }
        }
        Ok(())
    })();
    match outcome {
        Ok(()) => {}
        Err(GnnError::NonFinite { .. }) => {
            (*params, *adam) = backup;
            stats.rolled_back = true;
            stats.updates = 0;
            return Ok(stats);
        }
        Err(e) => {
            (*params, *adam) = backup;
            return Err(e);
        }
    }
    if stats.updates > 0 {
        let k = stats.updates as f64;
        stats.policy_loss = sums[0] / k;
        stats.value_loss = sums[1] / k;
        stats.entropy = sums[2] / k;
        stats.clip_fraction = sums[3] / k;
        stats.grad_norm = sums[4] / k;
    }
    Ok(stats)
}
