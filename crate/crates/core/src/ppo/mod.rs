//! Proximal policy optimisation: advantage estimation, the clipped
//! surrogate update and rollout collection.

mod rollout;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{
    gaussian_log_prob, Activation, MlpGrad, NetworkConfig, PolicyGrad, PolicyParameters,
    PolicySeed, ValueParameters,
};

pub use rollout::{Collection, Collector, EpisodeSummary, SideRole};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Linear,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip_eps: f64,
    pub entropy_beta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub buffer_size: usize,
    pub initial_lr: f64,
    pub lr_schedule: LrSchedule,
    /// Horizon of the learning-rate schedule, in episodes.
    pub max_episodes: u64,
    pub value_loss_coeff: f64,
    /// Global gradient-norm clip, applied per network.
    pub max_grad_norm: f64,
    /// Multiplier applied to environment rewards before learning.
    pub reward_scale: f64,
    /// Environments stepped round-robin during collection.
    pub n_envs: usize,
    pub network: NetworkConfig,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda: 0.95,
            clip_eps: 0.2,
            entropy_beta: 0.01,
            epochs: 3,
            batch_size: 1024,
            buffer_size: 10240,
            initial_lr: 3e-4,
            lr_schedule: LrSchedule::Linear,
            max_episodes: 6_000_000,
            value_loss_coeff: 0.5,
            max_grad_norm: 0.5,
            reward_scale: 1e-3,
            n_envs: 1,
            network: NetworkConfig::default(),
        }
    }
}

impl TrainerConfig {
    /// 64-64 tanh networks and a smaller rollout buffer for single-core runs.
    pub fn desk() -> Self {
        Self {
            buffer_size: 4096,
            batch_size: 512,
            network: NetworkConfig {
                hidden: vec![64, 64],
                activation: Activation::Tanh,
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "trainer.{name} must be in [0, 1], got {v}"
                )))
            }
        };
        unit("gamma", self.gamma)?;
        unit("lambda", self.lambda)?;
        if !(self.clip_eps > 0.0) {
            return Err(Error::Config(format!(
                "trainer.clip_eps must be > 0, got {}",
                self.clip_eps
            )));
        }
        if self.batch_size == 0 || self.batch_size > self.buffer_size {
            return Err(Error::Config(format!(
                "trainer.batch_size must be in 1..=buffer_size ({}), got {}",
                self.buffer_size, self.batch_size
            )));
        }
        if self.epochs == 0 || self.n_envs == 0 || self.max_episodes == 0 {
            return Err(Error::Config(
                "trainer.epochs, n_envs and max_episodes must be >= 1".into(),
            ));
        }
        let nonneg = [
            ("initial_lr", self.initial_lr),
            ("entropy_beta", self.entropy_beta),
            ("value_loss_coeff", self.value_loss_coeff),
            ("max_grad_norm", self.max_grad_norm),
            ("reward_scale", self.reward_scale),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!(
                    "trainer.{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        self.network.validate()
    }
}

/// Learning rate after `step` episodes of the current stage.
pub fn lr_at(step: u64, cfg: &TrainerConfig) -> f64 {
    match cfg.lr_schedule {
        LrSchedule::Constant => cfg.initial_lr,
        LrSchedule::Linear => {
            let frac = step.min(cfg.max_episodes) as f64 / cfg.max_episodes as f64;
            cfg.initial_lr * (1.0 - frac)
        }
    }
}

/// One agent's contiguous run of transitions inside a batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
    /// Value of the observation after the last transition; ignored when that
    /// transition is terminal.
    pub bootstrap: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutBatch {
    pub obs: Vec<Vec<f64>>,
    /// Unclamped sampled actions (the log-density refers to these).
    pub actions: Vec<Vec<f64>>,
    pub log_prob_old: Vec<f64>,
    pub rewards: Vec<f64>,
    pub value_old: Vec<f64>,
    pub dones: Vec<bool>,
    pub episode_id: Vec<u64>,
    pub segments: Vec<Segment>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// Raw (unnormalised) advantages and returns, segment by segment.
    pub fn advantages(&self, gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut adv = Vec::with_capacity(self.len());
        let mut ret = Vec::with_capacity(self.len());
        for s in &self.segments {
            let r = s.start..s.start + s.len;
            let (a, g) = compute_gae(
                &self.rewards[r.clone()],
                &self.value_old[r.clone()],
                &self.dones[r],
                s.bootstrap,
                gamma,
                lambda,
            )?;
            adv.extend(a);
            ret.extend(g);
        }
        if adv.len() != self.len() {
            return Err(Error::Contract(format!(
                "segments cover {} of {} transitions",
                adv.len(),
                self.len()
            )));
        }
        Ok((adv, ret))
    }

    /// Check array lengths, segment tiling and done placement.
    pub fn check(&self) -> Result<()> {
        let n = self.len();
        let lens = [
            self.obs.len(),
            self.actions.len(),
            self.log_prob_old.len(),
            self.value_old.len(),
            self.dones.len(),
            self.episode_id.len(),
        ];
        if lens.iter().any(|l| *l != n) {
            return Err(Error::Contract(format!(
                "ragged batch: {n} rewards vs {lens:?}"
            )));
        }
        let mut at = 0;
        for s in &self.segments {
            if s.start != at || s.len == 0 {
                return Err(Error::Contract(format!(
                    "segment {s:?} does not tile the batch at {at}"
                )));
            }
            let last = s.start + s.len - 1;
            if self.dones[s.start..last].iter().any(|d| *d) {
                return Err(Error::Contract(format!("done inside segment {s:?}")));
            }
            if self.episode_id[s.start..=last]
                .iter()
                .any(|e| *e != self.episode_id[s.start])
            {
                return Err(Error::Contract(format!("segment {s:?} spans episodes")));
            }
            at += s.len;
        }
        if at != n {
            return Err(Error::Contract(format!(
                "segments cover {at} of {n} transitions"
            )));
        }
        Ok(())
    }
}

/// Generalised advantage estimation over one time-ordered array.
///
/// `bootstrap` is the value after the last element, used only if that
/// element is not done. Returns `(advantages, returns)` with
/// `returns = advantages + values`; no normalisation.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n || dones.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: if values.len() != n {
                values.len()
            } else {
                dones.len()
            },
        });
    }
    let mut adv = vec![0.0; n];
    let mut next_value = bootstrap;
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let cont = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * cont - values[t];
        next_adv = delta + gamma * lambda * cont * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, ret))
}

/// Shift to zero mean and scale to unit standard deviation.
pub fn normalize(x: &mut [f64]) {
    if x.is_empty() {
        return;
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt().max(1e-8);
    x.iter_mut().for_each(|v| *v = (*v - mean) / sd);
}

/// `min(mu * A, clip(mu, 1 - eps, 1 + eps) * A)`.
pub fn clipped_surrogate(ratio: f64, adv: f64, eps: f64) -> f64 {
    (ratio * adv).min(ratio.clamp(1.0 - eps, 1.0 + eps) * adv)
}

/// Whether the gradient flows through the ratio (the unclipped branch is
/// the minimum).
fn surrogate_active(ratio: f64, adv: f64, eps: f64) -> bool {
    if adv >= 0.0 {
        ratio <= 1.0 + eps
    } else {
        ratio >= 1.0 - eps
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub lr: f64,
}

/// Minibatch view used by the loss functions.
pub struct Minibatch<'a> {
    pub obs: Vec<&'a [f64]>,
    pub actions: Vec<&'a [f64]>,
    pub log_prob_old: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PolicyLossParts {
    /// `-mean(surrogate)`.
    pub surrogate_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

impl PolicyLossParts {
    pub fn total(&self, beta: f64) -> f64 {
        self.surrogate_loss - beta * self.entropy
    }
}

/// Policy loss `-mean(surrogate) - beta * entropy` and its gradient.
pub fn policy_loss_and_grad(
    p: &PolicyParameters,
    mb: &Minibatch<'_>,
    clip_eps: f64,
    beta: f64,
) -> Result<(PolicyLossParts, PolicyGrad)> {
    let n = mb.obs.len();
    if n == 0 {
        return Err(Error::InvalidInput("empty minibatch".into()));
    }
    let inv_n = 1.0 / n as f64;
    let std = p.std();
    let mut grad = PolicyGrad::zeros_like(p);
    let mut parts = PolicyLossParts::default();
    for i in 0..n {
        let trace = p.forward_traced(mb.obs[i])?;
        let a = mb.actions[i];
        let logp = gaussian_log_prob(&trace.mean, &std, a);
        let log_ratio = logp - mb.log_prob_old[i];
        let ratio = log_ratio.exp();
        let adv = mb.advantages[i];
        parts.surrogate_loss -= clipped_surrogate(ratio, adv, clip_eps) * inv_n;
        parts.approx_kl += ((ratio - 1.0) - log_ratio) * inv_n;
        if (ratio - 1.0).abs() > clip_eps {
            parts.clip_fraction += inv_n;
        }
        if !surrogate_active(ratio, adv, clip_eps) {
            continue;
        }
        // d loss / d logp
        let g = -adv * ratio * inv_n;
        let mut seed = PolicySeed {
            d_mean: vec![0.0; a.len()],
            d_log_std: vec![0.0; a.len()],
        };
        for k in 0..a.len() {
            let z = (a[k] - trace.mean[k]) / std[k];
            seed.d_mean[k] = g * z / std[k];
            seed.d_log_std[k] = g * (z * z - 1.0);
        }
        p.backward_traced(&trace, &seed, &mut grad)?;
    }
    parts.entropy = crate::policy::gaussian_entropy(&p.log_std);
    for g in &mut grad.log_std {
        *g -= beta;
    }
    let total = parts.total(beta);
    if !total.is_finite() {
        return Err(Error::NonFiniteLoss(format!(
            "policy loss {total} (surrogate {}, entropy {})",
            parts.surrogate_loss, parts.entropy
        )));
    }
    Ok((parts, grad))
}

/// Value loss `coeff * mean((V - R)^2)` and its gradient.
pub fn value_loss_and_grad(
    v: &ValueParameters,
    mb: &Minibatch<'_>,
    coeff: f64,
) -> Result<(f64, MlpGrad)> {
    let n = mb.obs.len();
    if n == 0 {
        return Err(Error::InvalidInput("empty minibatch".into()));
    }
    let inv_n = 1.0 / n as f64;
    let mut grad = MlpGrad::zeros_like(&v.net);
    let mut loss = 0.0;
    for i in 0..n {
        let acts = v.net.forward_cached(mb.obs[i])?;
        let err = acts[acts.len() - 1][0] - mb.returns[i];
        loss += coeff * err * err * inv_n;
        v.net
            .backward_into(&acts, &[2.0 * coeff * err * inv_n], &mut grad)?;
    }
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss(format!("value loss {loss}")));
    }
    Ok((loss, grad))
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    pub fn new(shapes: &[&[f64]]) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: shapes.iter().map(|s| vec![0.0; s.len()]).collect(),
            v: shapes.iter().map(|s| vec![0.0; s.len()]).collect(),
            t: 0,
        }
    }

    /// Descend along `grads` (gradients of a loss to minimise).
    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: &[&[f64]], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (k, p) in params.into_iter().enumerate() {
            let (m, v, g) = (&mut self.m[k], &mut self.v[k], grads[k]);
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Scale `grads` in place so their joint L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_grad_norm(grads: Vec<&mut [f64]>, max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let k = max_norm / norm;
        for g in grads {
            g.iter_mut().for_each(|x| *x *= k);
        }
    }
    norm
}

/// Policy, value network and their optimiser states.
#[derive(Debug, Clone)]
pub struct PpoLearner {
    pub policy: PolicyParameters,
    pub value: ValueParameters,
    policy_opt: Adam,
    value_opt: Adam,
}

impl PpoLearner {
    pub fn new(policy: PolicyParameters, value: ValueParameters) -> Self {
        let policy_opt = Adam::new(&policy.slices());
        let value_opt = Adam::new(&value.net.slices());
        Self {
            policy,
            value,
            policy_opt,
            value_opt,
        }
    }

    /// `epochs` passes of shuffled minibatch updates over `batch`.
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        batch: &RolloutBatch,
        cfg: &TrainerConfig,
        lr: f64,
        rng: &mut R,
    ) -> Result<UpdateStats> {
        batch.check()?;
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty rollout batch".into()));
        }
        let (mut adv, ret) = batch.advantages(cfg.gamma, cfg.lambda)?;
        normalize(&mut adv);

        let mut idx: Vec<usize> = (0..batch.len()).collect();
        let mut acc = UpdateStats {
            lr,
            ..UpdateStats::default()
        };
        let mut n_mb = 0usize;
        for _ in 0..cfg.epochs {
            idx.shuffle(rng);
            for chunk in idx.chunks(cfg.batch_size) {
                let mb = Minibatch {
                    obs: chunk.iter().map(|i| batch.obs[*i].as_slice()).collect(),
                    actions: chunk.iter().map(|i| batch.actions[*i].as_slice()).collect(),
                    log_prob_old: chunk.iter().map(|i| batch.log_prob_old[*i]).collect(),
                    advantages: chunk.iter().map(|i| adv[*i]).collect(),
                    returns: chunk.iter().map(|i| ret[*i]).collect(),
                };
                let (parts, mut pg) =
                    policy_loss_and_grad(&self.policy, &mb, cfg.clip_eps, cfg.entropy_beta)?;
                let (vloss, mut vg) = value_loss_and_grad(&self.value, &mb, cfg.value_loss_coeff)?;
                clip_grad_norm(pg.slices_mut(), cfg.max_grad_norm);
                clip_grad_norm(vg.slices_mut(), cfg.max_grad_norm);
                self.policy_opt
                    .step(self.policy.slices_mut(), &pg.slices(), lr);
                self.value_opt
                    .step(self.value.net.slices_mut(), &vg.slices(), lr);

                acc.policy_loss += parts.surrogate_loss;
                acc.value_loss += vloss;
                acc.entropy += parts.entropy;
                acc.clip_fraction += parts.clip_fraction;
                acc.approx_kl += parts.approx_kl;
                n_mb += 1;
            }
        }
        let k = 1.0 / n_mb as f64;
        acc.policy_loss *= k;
        acc.value_loss *= k;
        acc.entropy *= k;
        acc.clip_fraction *= k;
        acc.approx_kl *= k;
        let all_finite = [acc.policy_loss, acc.value_loss, acc.entropy, acc.approx_kl]
            .iter()
            .all(|x| x.is_finite());
        if !all_finite
            || self
                .policy
                .slices()
                .iter()
                .any(|s| s.iter().any(|x| !x.is_finite()))
        {
            return Err(Error::NonFiniteLoss(format!(
                "update produced non-finite state: {acc:?}"
            )));
        }
        Ok(acc)
    }
}

/// One-shot update with fresh optimiser state.
pub fn ppo_update<R: Rng + ?Sized>(
    policy: &PolicyParameters,
    value: &ValueParameters,
    batch: &RolloutBatch,
    cfg: &TrainerConfig,
    lr: f64,
    rng: &mut R,
) -> Result<(PolicyParameters, ValueParameters, UpdateStats)> {
    let mut l = PpoLearner::new(policy.clone(), value.clone());
    let stats = l.update(batch, cfg, lr, rng)?;
    Ok((l.policy, l.value, stats))
}

#[cfg(test)]
mod tests;
