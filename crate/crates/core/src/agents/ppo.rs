//! Clipped-surrogate policy optimization with a diagonal Gaussian policy.
//! The mean comes from a tanh network squashed to [0,1]; log standard
//! deviations are free parameters shared across states.

use super::{squash, Policy, SQUASH_SLOPE};
use crate::error::CoreError;
use crate::nn::{
    Activation, Gradients, LayerKind, LayerSpec, LrSchedule, Net, NetworkParams, NetworkSpec,
    Optimizer, ParamArray,
};
use crate::rng::SplitMix64;
use crate::Result;

const LOG_STD_MIN: f64 = -5.0;
const LOG_STD_MAX: f64 = 2.0;
const HALF_LN_TWO_PI: f64 = 0.918_938_533_204_672_7;

#[derive(Debug, Clone)]
pub struct PpoConfig {
    pub policy: NetworkSpec,
    pub value: NetworkSpec,
    pub policy_lr: LrSchedule,
    pub value_lr: LrSchedule,
    pub gamma: f64,
    /// Generalized-advantage mixing factor; 0 is one-step TD, 1 is full
    /// discounted returns.
    pub lam: f64,
    pub clip_eps: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub init_log_std: f64,
    pub seed: u64,
}

impl PpoConfig {
    pub fn mlp(
        obs_dim: usize,
        act_dim: usize,
        policy_hidden: &[usize],
        value_hidden: &[usize],
        activation: Activation,
    ) -> PpoConfig {
        let mut policy_layers: Vec<LayerSpec> =
            policy_hidden.iter().map(|&w| LayerSpec::dense(w, activation)).collect();
        policy_layers.push(LayerSpec::dense(act_dim, Activation::Tanh));
        let mut value_layers: Vec<LayerSpec> =
            value_hidden.iter().map(|&w| LayerSpec::dense(w, activation)).collect();
        value_layers.push(LayerSpec::dense(1, Activation::Linear));
        PpoConfig {
            policy: NetworkSpec::plain(obs_dim, policy_layers),
            value: NetworkSpec::plain(obs_dim, value_layers),
            policy_lr: LrSchedule::Constant(3e-4),
            value_lr: LrSchedule::Constant(1e-3),
            gamma: 0.99,
            lam: 0.95,
            clip_eps: 0.2,
            epochs: 4,
            minibatch_size: 64,
            init_log_std: -0.5,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(CoreError::config(format!("gamma {} not in [0,1)", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.lam) {
            return Err(CoreError::config(format!("lambda {} not in [0,1]", self.lam)));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(CoreError::config(format!("clip_eps {} not in (0,1)", self.clip_eps)));
        }
        if self.epochs == 0 || self.minibatch_size == 0 {
            return Err(CoreError::config("epochs and minibatch_size must be positive"));
        }
        if !(LOG_STD_MIN..=LOG_STD_MAX).contains(&self.init_log_std) {
            return Err(CoreError::config(format!(
                "init_log_std {} outside [{LOG_STD_MIN},{LOG_STD_MAX}]",
                self.init_log_std
            )));
        }
        if !self.policy.heads.is_empty() || !self.value.heads.is_empty() {
            return Err(CoreError::config("policy-gradient networks take no heads"));
        }
        match self.policy.body.last() {
            Some(l)
                if l.activation == Activation::Tanh
                    && matches!(l.kind, LayerKind::Dense { .. }) => {}
            _ => {
                return Err(CoreError::config(
                    "policy output layer must be dense with tanh activation",
                ))
            }
        }
        Ok(())
    }
}

/// One environment step recorded during rollout collection. `logp` is the
/// sampling-time log-density of `a`, kept for the probability ratios.
#[derive(Debug, Clone)]
pub struct RolloutStep {
    pub s: Vec<f32>,
    pub a: Vec<f32>,
    pub r: f32,
    pub done: bool,
    pub v: f64,
    pub logp: f64,
}

/// Generalized advantage estimation over one rollout, bootstrapping the tail
/// with `tail_value` unless the last step terminated. Returns per-step
/// advantages and value-regression targets (advantage + recorded value).
pub fn compute_gae(
    rollout: &[RolloutStep],
    tail_value: f64,
    gamma: f64,
    lam: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rollout.len();
    let mut adv = vec![0.0; n];
    let mut carry = 0.0;
    let mut v_next = tail_value;
    for t in (0..n).rev() {
        let step = &rollout[t];
        let mask = if step.done { 0.0 } else { 1.0 };
        let delta = step.r as f64 + gamma * mask * v_next - step.v;
        carry = delta + gamma * lam * mask * carry;
        adv[t] = carry;
        v_next = step.v;
    }
    let returns = adv.iter().zip(rollout).map(|(&a, s)| a + s.v).collect();
    (adv, returns)
}

/// Shifts to zero mean and scales to unit population standard deviation.
/// Degenerate batches (constant advantage) are only centered.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|&a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    for a in adv.iter_mut() {
        *a = (*a - mean) / (std + 1e-8);
    }
}

fn rollout_digest(rollout: &[RolloutStep]) -> String {
    if rollout.is_empty() {
        return "empty rollout".to_string();
    }
    let mut r_min = f32::INFINITY;
    let mut r_max = f32::NEG_INFINITY;
    let mut s_max = 0.0f32;
    let mut dones = 0usize;
    for step in rollout {
        r_min = r_min.min(step.r);
        r_max = r_max.max(step.r);
        for &v in &step.s {
            s_max = s_max.max(v.abs());
        }
        dones += step.done as usize;
    }
    format!("n={} r=[{r_min},{r_max}] |s|max={s_max} dones={dones}", rollout.len())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpoMetrics {
    /// Clipped-surrogate loss over the whole rollout, after all epochs.
    pub policy_loss: f64,
    pub value_loss: f64,
    /// mean(logp_old - logp_new): how far the update moved the policy.
    pub kl: f64,
    /// Share of samples whose probability ratio left the clip interval.
    pub clip_fraction: f64,
    pub entropy: f64,
}

#[derive(Debug, Clone)]
pub struct PpoAgent {
    pub policy_net: Net,
    pub value_net: Net,
    pub policy: NetworkParams<f64>,
    pub value: NetworkParams<f64>,
    /// One array of per-component log standard deviations.
    pub log_std: NetworkParams<f64>,
    pub policy_opt: Optimizer<f64>,
    pub value_opt: Optimizer<f64>,
    pub log_std_opt: Optimizer<f64>,
    pub gamma: f64,
    pub lam: f64,
    pub clip_eps: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
}

impl PpoAgent {
    pub fn new(cfg: PpoConfig) -> Result<PpoAgent> {
        cfg.validate()?;
        let policy_net = Net::new(cfg.policy)?;
        let value_net = Net::new(cfg.value)?;
        if value_net.input_dim() != policy_net.input_dim() {
            return Err(CoreError::config(format!(
                "value input {} != policy input {}",
                value_net.input_dim(),
                policy_net.input_dim()
            )));
        }
        if value_net.out_dim() != 1 {
            return Err(CoreError::config(format!(
                "value output must be scalar, got {}",
                value_net.out_dim()
            )));
        }
        let policy: NetworkParams<f64> = policy_net.init(cfg.seed, 1e-3);
        let value: NetworkParams<f64> = value_net.init(cfg.seed.wrapping_add(1), 1e-3);
        let log_std = NetworkParams {
            version: 0,
            arrays: vec![ParamArray {
                name: "log_std".to_string(),
                dims: vec![policy_net.out_dim()],
                data: vec![cfg.init_log_std; policy_net.out_dim()],
            }],
        };
        Ok(PpoAgent {
            policy_net,
            value_net,
            policy,
            value,
            log_std,
            policy_opt: Optimizer::adam(cfg.policy_lr),
            value_opt: Optimizer::adam(cfg.value_lr),
            log_std_opt: Optimizer::adam(cfg.policy_lr),
            gamma: cfg.gamma,
            lam: cfg.lam,
            clip_eps: cfg.clip_eps,
            epochs: cfg.epochs,
            minibatch_size: cfg.minibatch_size,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.policy_net.input_dim()
    }

    pub fn act_dim(&self) -> usize {
        self.policy_net.out_dim()
    }

    fn mean_action(&self, obs: &[f32]) -> Result<Vec<f64>> {
        let x: Vec<f64> = obs.iter().map(|&v| v as f64).collect();
        let y = self.policy_net.forward(&self.policy, &x, None)?;
        Ok(y.iter().map(|&v| squash(v)).collect())
    }

    fn log_prob(&self, action: &[f32], mean: &[f64]) -> f64 {
        let mut logp = 0.0;
        for ((&a, &m), &ls) in
            action.iter().zip(mean).zip(self.log_std.arrays[0].data.iter())
        {
            let z = (a as f64 - m) / ls.exp();
            logp -= 0.5 * z * z + ls + HALF_LN_TWO_PI;
        }
        logp
    }

    /// Draws from the current Gaussian. The action may leave [0,1]; the
    /// environment clamps, but the recorded value keeps the density honest.
    pub fn sample_action(&self, obs: &[f32], rng: &mut SplitMix64) -> Result<(Vec<f32>, f64)> {
        let mean = self.mean_action(obs)?;
        let a: Vec<f32> = mean
            .iter()
            .zip(self.log_std.arrays[0].data.iter())
            .map(|(&m, &ls)| (m + ls.exp() * rng.normal()) as f32)
            .collect();
        let logp = self.log_prob(&a, &mean);
        Ok((a, logp))
    }

    pub fn state_value(&self, obs: &[f32]) -> Result<f64> {
        let x: Vec<f64> = obs.iter().map(|&v| v as f64).collect();
        Ok(self.value_net.forward(&self.value, &x, None)?[0])
    }

    pub fn entropy(&self) -> f64 {
        self.log_std
            .arrays[0]
            .data
            .iter()
            .map(|&ls| ls + 0.5 + HALF_LN_TWO_PI)
            .sum()
    }

    /// Surrogate loss and gradients for the indexed minibatch, without
    /// applying them. A sample contributes gradient only while its unclipped
    /// surrogate does not exceed the clipped one.
    fn policy_grads(
        &self,
        rollout: &[RolloutStep],
        adv: &[f64],
        idx: &[usize],
    ) -> Result<(f64, Gradients<f64>, Vec<f64>)> {
        let n = idx.len() as f64;
        let mut grads = self.policy_net.zero_grads::<f64>();
        let mut ls_grad = vec![0.0; self.act_dim()];
        let mut loss = 0.0;
        for &i in idx {
            let step = &rollout[i];
            let x: Vec<f64> = step.s.iter().map(|&v| v as f64).collect();
            let y = self.policy_net.forward(&self.policy, &x, None)?;
            let mean: Vec<f64> = y.iter().map(|&v| squash(v)).collect();
            let logp = self.log_prob(&step.a, &mean);
            let ratio = (logp - step.logp).exp();
            let a = adv[i];
            let surr = ratio * a;
            let surr_clip = ratio.clamp(1.0 - self.clip_eps, 1.0 + self.clip_eps) * a;
            loss -= surr.min(surr_clip) / n;
            if surr <= surr_clip {
                let coef = -a * ratio / n;
                let upstream: Vec<f64> = step
                    .a
                    .iter()
                    .zip(&mean)
                    .zip(self.log_std.arrays[0].data.iter())
                    .map(|((&ai, &m), &ls)| {
                        let inv_var = (-2.0 * ls).exp();
                        coef * (ai as f64 - m) * inv_var * SQUASH_SLOPE
                    })
                    .collect();
                self.policy_net.backward_into(&self.policy, &x, None, &upstream, &mut grads)?;
                for ((g, (&ai, &m)), &ls) in ls_grad
                    .iter_mut()
                    .zip(step.a.iter().zip(&mean))
                    .zip(self.log_std.arrays[0].data.iter())
                {
                    let z = (ai as f64 - m) / ls.exp();
                    *g += coef * (z * z - 1.0);
                }
            }
        }
        Ok((loss, grads, ls_grad))
    }

    fn value_step(&mut self, rollout: &[RolloutStep], returns: &[f64], idx: &[usize]) -> Result<f64> {
        let n = idx.len() as f64;
        let mut grads = self.value_net.zero_grads::<f64>();
        let mut loss = 0.0;
        for &i in idx {
            let x: Vec<f64> = rollout[i].s.iter().map(|&v| v as f64).collect();
            let v = self.value_net.forward(&self.value, &x, None)?[0];
            let err = v - returns[i];
            loss += err * err / n;
            let upstream = [2.0 * err / n];
            self.value_net.backward_into(&self.value, &x, None, &upstream, &mut grads)?;
        }
        if !loss.is_finite() {
            return Err(CoreError::numeric(format!(
                "non-finite value loss {loss}; {}",
                rollout_digest(rollout)
            )));
        }
        self.value_opt.apply(&mut self.value, &grads)?;
        Ok(loss)
    }

    /// Runs the full epoch/minibatch schedule on one rollout, then reports
    /// whole-rollout losses, the policy shift and the clip rate.
    pub fn update(
        &mut self,
        rollout: &[RolloutStep],
        tail_value: f64,
        rng: &mut SplitMix64,
    ) -> Result<PpoMetrics> {
        if rollout.is_empty() {
            return Err(CoreError::contract("update on an empty rollout"));
        }
        for step in rollout {
            let finite = step.r.is_finite()
                && step.v.is_finite()
                && step.logp.is_finite()
                && step.s.iter().all(|v| v.is_finite())
                && step.a.iter().all(|v| v.is_finite());
            if !finite {
                return Err(CoreError::numeric(format!(
                    "non-finite rollout entry; {}",
                    rollout_digest(rollout)
                )));
            }
            if step.s.len() != self.obs_dim() || step.a.len() != self.act_dim() {
                return Err(CoreError::contract(format!(
                    "rollout step has dims {}/{}, nets take {}/{}",
                    step.s.len(),
                    step.a.len(),
                    self.obs_dim(),
                    self.act_dim()
                )));
            }
        }
        if !tail_value.is_finite() {
            return Err(CoreError::numeric(format!("non-finite tail value {tail_value}")));
        }
        let (mut adv, returns) = compute_gae(rollout, tail_value, self.gamma, self.lam);
        normalize_advantages(&mut adv);
        let mut order: Vec<usize> = (0..rollout.len()).collect();
        for _ in 0..self.epochs {
            rng.shuffle(&mut order);
            for chunk in order.chunks(self.minibatch_size) {
                let (loss, grads, ls_grad) = self.policy_grads(rollout, &adv, chunk)?;
                if !loss.is_finite() {
                    return Err(CoreError::numeric(format!(
                        "non-finite policy loss {loss}; {}",
                        rollout_digest(rollout)
                    )));
                }
                self.policy_opt.apply(&mut self.policy, &grads)?;
                let ls_grads =
                    Gradients { arrays: vec![ls_grad], input: Vec::new() };
                self.log_std_opt.apply(&mut self.log_std, &ls_grads)?;
                for ls in &mut self.log_std.arrays[0].data {
                    *ls = ls.clamp(LOG_STD_MIN, LOG_STD_MAX);
                }
                self.value_step(rollout, &returns, chunk)?;
            }
        }
        let all: Vec<usize> = (0..rollout.len()).collect();
        let (policy_loss, _, _) = self.policy_grads(rollout, &adv, &all)?;
        let mut kl = 0.0;
        let mut clipped = 0usize;
        let mut value_loss = 0.0;
        for step in rollout {
            let mean = self.mean_action(&step.s)?;
            let logp = self.log_prob(&step.a, &mean);
            kl += (step.logp - logp) / rollout.len() as f64;
            if ((logp - step.logp).exp() - 1.0).abs() > self.clip_eps {
                clipped += 1;
            }
        }
        for (step, &ret) in rollout.iter().zip(&returns) {
            let err = self.state_value(&step.s)? - ret;
            value_loss += err * err / rollout.len() as f64;
        }
        Ok(PpoMetrics {
            policy_loss,
            value_loss,
            kl,
            clip_fraction: clipped as f64 / rollout.len() as f64,
            entropy: self.entropy(),
        })
    }
}

impl Policy for PpoAgent {
    fn act(&mut self, obs: &[f32]) -> Result<Vec<f32>> {
        let mean = self.mean_action(obs)?;
        Ok(mean.iter().map(|&m| m.clamp(0.0, 1.0) as f32).collect())
    }
}
