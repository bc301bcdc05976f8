//! Actor/critic ensembles: several deterministic actors propose an action,
//! the critics' averaged value picks the winner, and training bootstraps the
//! Bellman target through the best proposal.

use super::ddpg::{DdpgCore, UpdateMetrics};
use super::{squash, Policy};
use crate::error::CoreError;
use crate::replay::Transition;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnsembleMode {
    /// Frozen members, typically loaded from independent training runs.
    Inference,
    /// Paired members trained jointly against ensemble bootstrap targets.
    Training,
}

/// Picks the proposal with the highest mean critic value. Ties go to the
/// lowest index; with no critics at all, proposal 0 passes through.
/// `critic_value(i, action)` evaluates critic i at the shared state.
pub fn ace_select_action<E>(
    proposals: &[Vec<f64>],
    n_critics: usize,
    mut critic_value: E,
) -> Result<(Vec<f32>, usize)>
where
    E: FnMut(usize, &[f64]) -> Result<f64>,
{
    if proposals.is_empty() {
        return Err(CoreError::contract("ensemble selection needs at least one proposal"));
    }
    let as_f32 = |a: &Vec<f64>| a.iter().map(|&v| v as f32).collect::<Vec<f32>>();
    if n_critics == 0 {
        return Ok((as_f32(&proposals[0]), 0));
    }
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (j, a) in proposals.iter().enumerate() {
        let mut sum = 0.0;
        for i in 0..n_critics {
            sum += critic_value(i, a)?;
        }
        let score = sum / n_critics as f64;
        if j == 0 || score > best_score {
            best = j;
            best_score = score;
        }
    }
    Ok((as_f32(&proposals[best]), best))
}

/// Bellman targets where the bootstrap flows through whichever actor's
/// proposal the averaged critics rank best at s'. `propose(j, s')` must
/// return an action already mapped into the action box.
pub fn ace_training_targets<P, E>(
    batch: &[Transition],
    gamma: f64,
    n_actors: usize,
    n_critics: usize,
    mut propose: P,
    mut critic_value: E,
) -> Result<Vec<f64>>
where
    P: FnMut(usize, &[f64]) -> Result<Vec<f64>>,
    E: FnMut(usize, &[f64], &[f64]) -> Result<f64>,
{
    if n_actors == 0 {
        return Err(CoreError::contract("ensemble targets need at least one actor"));
    }
    if n_critics == 0 {
        return Err(CoreError::contract("ensemble targets need at least one critic"));
    }
    let mut ys = Vec::with_capacity(batch.len());
    for t in batch {
        let s_next: Vec<f64> = t.s_next.iter().map(|&v| v as f64).collect();
        let mut best_score = f64::NEG_INFINITY;
        for j in 0..n_actors {
            let a = propose(j, &s_next)?;
            let mut sum = 0.0;
            for i in 0..n_critics {
                sum += critic_value(i, &s_next, &a)?;
            }
            let score = sum / n_critics as f64;
            if j == 0 || score > best_score {
                best_score = score;
            }
        }
        let cont = if t.done { 0.0 } else { 1.0 };
        ys.push(t.r as f64 + gamma * cont * best_score);
    }
    Ok(ys)
}

/// M actor/critic pairs. Inference mode scores with the first `n_critics`
/// online critics; training mode keeps every pair learning on shared
/// ensemble targets. A single pair with no critics is plain DDPG inference.
#[derive(Debug, Clone)]
pub struct EnsembleAgent {
    pairs: Vec<DdpgCore>,
    n_critics: usize,
    mode: EnsembleMode,
}

impl EnsembleAgent {
    pub fn new(pairs: Vec<DdpgCore>, n_critics: usize, mode: EnsembleMode) -> Result<EnsembleAgent> {
        if pairs.is_empty() {
            return Err(CoreError::config("ensemble needs at least one actor/critic pair"));
        }
        if n_critics > pairs.len() {
            return Err(CoreError::config(format!(
                "{n_critics} critics requested, only {} pairs",
                pairs.len()
            )));
        }
        let (obs, act) = (pairs[0].obs_dim(), pairs[0].act_dim());
        for p in &pairs {
            if p.obs_dim() != obs || p.act_dim() != act {
                return Err(CoreError::config("ensemble members disagree on obs/act dims"));
            }
        }
        if mode == EnsembleMode::Training {
            if n_critics != pairs.len() {
                return Err(CoreError::config("training ensembles pair every actor with its critic"));
            }
            if pairs.iter().any(|p| p.gamma != pairs[0].gamma) {
                return Err(CoreError::config("training ensembles need one shared gamma"));
            }
        }
        Ok(EnsembleAgent { pairs, n_critics, mode })
    }

    pub fn n_actors(&self) -> usize {
        self.pairs.len()
    }

    pub fn n_critics(&self) -> usize {
        self.n_critics
    }

    pub fn mode(&self) -> EnsembleMode {
        self.mode
    }

    pub fn pairs(&self) -> &[DdpgCore] {
        &self.pairs
    }

    pub fn select_action(&self, obs: &[f32]) -> Result<(Vec<f32>, usize)> {
        let x: Vec<f64> = obs.iter().map(|&v| v as f64).collect();
        let mut proposals = Vec::with_capacity(self.pairs.len());
        for p in &self.pairs {
            let y = p.actor_net.forward(&p.actor, &x, None)?;
            proposals.push(y.iter().map(|&v| squash(v)).collect());
        }
        ace_select_action(&proposals, self.n_critics, |i, a| {
            let mut input = x.clone();
            input.extend_from_slice(a);
            Ok(self.pairs[i].critic_net.forward(&self.pairs[i].critic, &input, None)?[0])
        })
    }

    /// Shared critic targets from the pairs' target networks.
    pub fn training_targets(&self, batch: &[Transition]) -> Result<Vec<f64>> {
        ace_training_targets(
            batch,
            self.pairs[0].gamma,
            self.pairs.len(),
            self.n_critics,
            |j, s| {
                let p = &self.pairs[j];
                Ok(p.actor_net
                    .forward(&p.actor_target, s, None)?
                    .iter()
                    .map(|&v| squash(v))
                    .collect())
            },
            |i, s, a| {
                let p = &self.pairs[i];
                let mut input = s.to_vec();
                input.extend_from_slice(a);
                Ok(p.critic_net.forward(&p.critic_target, &input, None)?[0])
            },
        )
    }

    /// One training step for every pair on the same batch: shared targets,
    /// then per-pair critic regression, actor ascent and target tracking.
    pub fn update_all(&mut self, batch: &[Transition]) -> Result<Vec<UpdateMetrics>> {
        if self.mode != EnsembleMode::Training {
            return Err(CoreError::contract("inference ensemble is read-only"));
        }
        if batch.is_empty() {
            return Err(CoreError::contract("update on an empty batch"));
        }
        let ys = self.training_targets(batch)?;
        let mut out = Vec::with_capacity(self.pairs.len());
        for pair in &mut self.pairs {
            let (critic_loss, mean_q, td_errors) = pair.critic_step(batch, None, &ys, None)?;
            let actor_objective = pair.actor_step(batch, None)?;
            pair.soft_update_head(None)?;
            out.push(UpdateMetrics { critic_loss, actor_objective, mean_q, td_errors });
        }
        Ok(out)
    }
}

impl Policy for EnsembleAgent {
    fn act(&mut self, obs: &[f32]) -> Result<Vec<f32>> {
        Ok(self.select_action(obs)?.0)
    }
}
