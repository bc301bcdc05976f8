//! Deterministic-policy actor/critic with target networks. `DdpgCore` holds
//! the update machinery; the bootstrapped-head agent reuses it verbatim so a
//! single-head configuration is not merely equivalent but the same code path.

use super::{batch_digest, squash, Policy, SQUASH_SLOPE};
use crate::error::CoreError;
use crate::nn::{
    soft_update_selected, Activation, LayerKind, LayerSpec, LrSchedule, Net, NetworkParams,
    NetworkSpec, Optimizer,
};
use crate::replay::Transition;
use crate::Result;

/// Learning-rate multiplier applied when the same batch is replayed more
/// than once per update ("trot"): many small steps instead of one large one.
pub const TROT_LR_SCALE: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct DdpgConfig {
    pub actor: NetworkSpec,
    /// Critic input is the observation with the action appended.
    pub critic: NetworkSpec,
    pub gamma: f64,
    pub tau: f64,
    pub actor_lr: LrSchedule,
    pub critic_lr: LrSchedule,
    /// Consecutive updates on the same batch. Values above 1 scale both
    /// learning rates by `TROT_LR_SCALE`.
    pub trot_repeats: usize,
    pub action_repeat: u32,
    /// Applied to rewards at ingestion time, not inside the update.
    pub reward_scale: f32,
    pub seed: u64,
}

impl DdpgConfig {
    /// Dense actor/critic pair: hidden stacks with one activation, tanh
    /// actor output, scalar linear critic output.
    pub fn mlp(
        obs_dim: usize,
        act_dim: usize,
        actor_hidden: &[usize],
        critic_hidden: &[usize],
        activation: Activation,
    ) -> DdpgConfig {
        let mut actor_layers: Vec<LayerSpec> =
            actor_hidden.iter().map(|&w| LayerSpec::dense(w, activation)).collect();
        actor_layers.push(LayerSpec::dense(act_dim, Activation::Tanh));
        let mut critic_layers: Vec<LayerSpec> =
            critic_hidden.iter().map(|&w| LayerSpec::dense(w, activation)).collect();
        critic_layers.push(LayerSpec::dense(1, Activation::Linear));
        DdpgConfig {
            actor: NetworkSpec::plain(obs_dim, actor_layers),
            critic: NetworkSpec::plain(obs_dim + act_dim, critic_layers),
            gamma: 0.99,
            tau: 1e-3,
            actor_lr: LrSchedule::Constant(1e-4),
            critic_lr: LrSchedule::Constant(3e-4),
            trot_repeats: 1,
            action_repeat: 1,
            reward_scale: 1.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(CoreError::config(format!("gamma {} not in [0,1)", self.gamma)));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(CoreError::config(format!("tau {} not in (0,1]", self.tau)));
        }
        if self.trot_repeats == 0 {
            return Err(CoreError::config("trot_repeats must be positive"));
        }
        if self.action_repeat == 0 {
            return Err(CoreError::config("action_repeat must be positive"));
        }
        if !(self.reward_scale.is_finite() && self.reward_scale > 0.0) {
            return Err(CoreError::config(format!("reward_scale {} must be > 0", self.reward_scale)));
        }
        let out_branches: Vec<&Vec<LayerSpec>> = if self.actor.heads.is_empty() {
            vec![&self.actor.body]
        } else {
            self.actor.heads.iter().collect()
        };
        for branch in out_branches {
            match branch.last() {
                Some(l)
                    if l.activation == Activation::Tanh
                        && matches!(l.kind, LayerKind::Dense { .. }) => {}
                _ => {
                    return Err(CoreError::config(
                        "actor output layer must be dense with tanh activation",
                    ))
                }
            }
        }
        Ok(())
    }
}

fn scale_schedule(s: LrSchedule, f: f64) -> LrSchedule {
    match s {
        LrSchedule::Constant(lr) => LrSchedule::Constant(lr * f),
        LrSchedule::Linear { start, end, steps } => {
            LrSchedule::Linear { start: start * f, end: end * f, steps }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateMetrics {
    pub critic_loss: f64,
    pub actor_objective: f64,
    pub mean_q: f64,
    /// Per-sample y - Q(s,a), for prioritized-replay feedback.
    pub td_errors: Vec<f32>,
}

/// Actor/critic pair with targets and optimizers. Works for plain networks
/// (head `None`) and for shared-body multi-head networks (head `Some(k)`),
/// where updates touch only the shared body and the selected head.
#[derive(Debug, Clone)]
pub struct DdpgCore {
    pub actor_net: Net,
    pub critic_net: Net,
    pub actor: NetworkParams<f64>,
    pub critic: NetworkParams<f64>,
    pub actor_target: NetworkParams<f64>,
    pub critic_target: NetworkParams<f64>,
    pub actor_opt: Optimizer<f64>,
    pub critic_opt: Optimizer<f64>,
    pub gamma: f64,
    pub tau: f64,
}

impl DdpgCore {
    pub fn new(cfg: &DdpgConfig) -> Result<DdpgCore> {
        cfg.validate()?;
        let actor_net = Net::new(cfg.actor.clone())?;
        let critic_net = Net::new(cfg.critic.clone())?;
        if critic_net.input_dim() != actor_net.input_dim() + actor_net.out_dim() {
            return Err(CoreError::config(format!(
                "critic input {} != obs {} + act {}",
                critic_net.input_dim(),
                actor_net.input_dim(),
                actor_net.out_dim()
            )));
        }
        if critic_net.out_dim() != 1 {
            return Err(CoreError::config(format!("critic output must be scalar, got {}", critic_net.out_dim())));
        }
        let actor: NetworkParams<f64> = actor_net.init(cfg.seed, 1e-3);
        let critic: NetworkParams<f64> = critic_net.init(cfg.seed.wrapping_add(1), 1e-3);
        Ok(DdpgCore {
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor_opt: Optimizer::adam(cfg.actor_lr),
            critic_opt: Optimizer::adam(cfg.critic_lr),
            actor_net,
            critic_net,
            actor,
            critic,
            gamma: cfg.gamma,
            tau: cfg.tau,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.actor_net.input_dim()
    }

    pub fn act_dim(&self) -> usize {
        self.actor_net.out_dim()
    }

    /// Deterministic action in [0,1]^d from the online actor.
    pub fn act_head(&self, obs: &[f32], head: Option<usize>) -> Result<Vec<f32>> {
        let x: Vec<f64> = obs.iter().map(|&v| v as f64).collect();
        let y = self.actor_net.forward(&self.actor, &x, head)?;
        Ok(y.iter().map(|&v| squash(v) as f32).collect())
    }

    /// y = r + gamma * (1 - done) * Q'(s', mu'(s')), all through head `head`.
    pub fn bellman_targets(&self, batch: &[Transition], head: Option<usize>) -> Result<Vec<f64>> {
        let mut ys = Vec::with_capacity(batch.len());
        for t in batch {
            let s_next: Vec<f64> = t.s_next.iter().map(|&v| v as f64).collect();
            let a_next: Vec<f64> = self
                .actor_net
                .forward(&self.actor_target, &s_next, head)?
                .iter()
                .map(|&v| squash(v))
                .collect();
            let mut x = s_next;
            x.extend_from_slice(&a_next);
            let q_next = self.critic_net.forward(&self.critic_target, &x, head)?[0];
            let cont = if t.done { 0.0 } else { 1.0 };
            ys.push(t.r as f64 + self.gamma * cont * q_next);
        }
        Ok(ys)
    }

    /// One critic regression step toward `targets`. Per-sample loss terms are
    /// scaled by the transition's bootstrap mask for `head` and by the
    /// importance weight; samples with zero scale contribute no gradient at
    /// all, so a fully masked batch leaves the critic bitwise unchanged.
    pub fn critic_step(
        &mut self,
        batch: &[Transition],
        head: Option<usize>,
        targets: &[f64],
        weights: Option<&[f32]>,
    ) -> Result<(f64, f64, Vec<f32>)> {
        let n = batch.len() as f64;
        let head_idx = head.unwrap_or(0);
        let mut grads = self.critic_net.zero_grads::<f64>();
        let mut loss = 0.0;
        let mut q_sum = 0.0;
        let mut td = Vec::with_capacity(batch.len());
        for (i, t) in batch.iter().enumerate() {
            let m = match t.mask.len() {
                0 => 1.0,
                len if head_idx < len => t.mask[head_idx] as f64,
                len => {
                    return Err(CoreError::contract(format!(
                        "bootstrap mask has {len} entries, head {head_idx} requested"
                    )))
                }
            };
            let w = weights.map_or(1.0, |ws| ws[i] as f64);
            let mut x: Vec<f64> = t.s.iter().map(|&v| v as f64).collect();
            x.extend(t.a.iter().map(|&v| v as f64));
            let q = self.critic_net.forward(&self.critic, &x, head)?[0];
            let delta = targets[i] - q;
            loss += m * w * delta * delta / n;
            q_sum += q;
            td.push(delta as f32);
            let scale = m * w;
            if scale != 0.0 {
                let upstream = [-2.0 * scale * delta / n];
                self.critic_net.backward_into(&self.critic, &x, head, &upstream, &mut grads)?;
            }
        }
        if !loss.is_finite() {
            return Err(CoreError::numeric(format!(
                "non-finite critic loss {loss}; {}",
                batch_digest(batch)
            )));
        }
        self.critic_opt.apply(&mut self.critic, &grads)?;
        Ok((loss, q_sum / n, td))
    }

    /// One actor ascent step on the mean critic value of on-policy actions.
    pub fn actor_step(&mut self, batch: &[Transition], head: Option<usize>) -> Result<f64> {
        let n = batch.len() as f64;
        let obs_dim = self.obs_dim();
        let mut grads = self.actor_net.zero_grads::<f64>();
        let mut objective = 0.0;
        for t in batch {
            let s: Vec<f64> = t.s.iter().map(|&v| v as f64).collect();
            let y = self.actor_net.forward(&self.actor, &s, head)?;
            let mut x = s.clone();
            x.extend(y.iter().map(|&v| squash(v)));
            let q = self.critic_net.forward(&self.critic, &x, head)?[0];
            objective += q / n;
            let dq_dx = self.critic_net.input_gradient(&self.critic, &x, head, &[1.0])?;
            let upstream: Vec<f64> =
                dq_dx[obs_dim..].iter().map(|&g| -g * SQUASH_SLOPE / n).collect();
            self.actor_net.backward_into(&self.actor, &s, head, &upstream, &mut grads)?;
        }
        if !objective.is_finite() {
            return Err(CoreError::numeric(format!(
                "non-finite actor objective {objective}; {}",
                batch_digest(batch)
            )));
        }
        self.actor_opt.apply(&mut self.actor, &grads)?;
        Ok(objective)
    }

    /// Soft-updates the targets on the shared body plus `head` only.
    pub fn soft_update_head(&mut self, head: Option<usize>) -> Result<()> {
        let mut in_set = vec![false; self.actor_net.n_arrays()];
        for i in self.actor_net.arrays_for_head(head) {
            in_set[i] = true;
        }
        soft_update_selected(&mut self.actor_target, &self.actor, self.tau, |i| in_set[i])?;
        let mut in_set = vec![false; self.critic_net.n_arrays()];
        for i in self.critic_net.arrays_for_head(head) {
            in_set[i] = true;
        }
        soft_update_selected(&mut self.critic_target, &self.critic, self.tau, |i| in_set[i])
    }

    /// Full update: critic regression, actor ascent, target tracking,
    /// repeated `trot_repeats` times on the same batch. Metrics come from
    /// the final repeat.
    pub fn update_head(
        &mut self,
        batch: &[Transition],
        head: Option<usize>,
        weights: Option<&[f32]>,
        trot_repeats: usize,
    ) -> Result<UpdateMetrics> {
        if batch.is_empty() {
            return Err(CoreError::contract("update on an empty batch"));
        }
        if let Some(ws) = weights {
            if ws.len() != batch.len() {
                return Err(CoreError::contract(format!(
                    "{} weights for {} samples",
                    ws.len(),
                    batch.len()
                )));
            }
        }
        if trot_repeats == 0 {
            return Err(CoreError::config("trot_repeats must be positive"));
        }
        let mut metrics = UpdateMetrics {
            critic_loss: 0.0,
            actor_objective: 0.0,
            mean_q: 0.0,
            td_errors: Vec::new(),
        };
        for _ in 0..trot_repeats {
            let targets = self.bellman_targets(batch, head)?;
            let (loss, mean_q, td) = self.critic_step(batch, head, &targets, weights)?;
            let objective = self.actor_step(batch, head)?;
            self.soft_update_head(head)?;
            metrics = UpdateMetrics {
                critic_loss: loss,
                actor_objective: objective,
                mean_q,
                td_errors: td,
            };
        }
        Ok(metrics)
    }

    /// Replaces both optimizers, dropping momenta and step counts.
    pub fn switch_to_sgd(&mut self, lr: f64) {
        self.actor_opt = Optimizer::sgd(LrSchedule::Constant(lr));
        self.critic_opt = Optimizer::sgd(LrSchedule::Constant(lr));
    }
}

#[derive(Debug, Clone)]
pub struct DdpgAgent {
    pub core: DdpgCore,
    pub trot_repeats: usize,
    pub action_repeat: u32,
    pub reward_scale: f32,
}

impl DdpgAgent {
    pub fn new(mut cfg: DdpgConfig) -> Result<DdpgAgent> {
        cfg.validate()?;
        if cfg.trot_repeats > 1 {
            cfg.actor_lr = scale_schedule(cfg.actor_lr, TROT_LR_SCALE);
            cfg.critic_lr = scale_schedule(cfg.critic_lr, TROT_LR_SCALE);
        }
        let core = DdpgCore::new(&cfg)?;
        Ok(DdpgAgent {
            core,
            trot_repeats: cfg.trot_repeats,
            action_repeat: cfg.action_repeat,
            reward_scale: cfg.reward_scale,
        })
    }

    pub fn update(
        &mut self,
        batch: &[Transition],
        weights: Option<&[f32]>,
    ) -> Result<UpdateMetrics> {
        self.core.update_head(batch, None, weights, self.trot_repeats)
    }

    pub fn switch_to_sgd(&mut self, lr: f64) {
        self.core.switch_to_sgd(lr);
    }
}

impl Policy for DdpgAgent {
    fn act(&mut self, obs: &[f32]) -> Result<Vec<f32>> {
        self.core.act_head(obs, None)
    }
}
