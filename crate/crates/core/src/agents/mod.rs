//! Learning algorithms: DDPG and its ensemble and bootstrapped-head variants,
//! policy blending, action-pattern mining, a small clipped-surrogate PPO and
//! the two-stage fine-tune schedule.

mod blend;
mod dbddpg;
mod ddpg;
mod ensemble;
mod finetune;
mod patterns;
mod ppo;

pub use blend::{blend_actions, transition_alpha};
pub use dbddpg::{dbddpg_run_episode, DbddpgAgent, DbddpgConfig, EpisodeMetrics};
pub use ddpg::{DdpgAgent, DdpgConfig, DdpgCore, UpdateMetrics, TROT_LR_SCALE};
pub use ensemble::{ace_select_action, ace_training_targets, EnsembleAgent, EnsembleMode};
pub use finetune::{PlateauDetector, TwoStageFinetune, STAGE2_SGD_LR};
pub use patterns::{mine_patterns, pattern_dqn_select, PatternTable};
pub use ppo::{compute_gae, normalize_advantages, PpoAgent, PpoConfig, PpoMetrics, RolloutStep};

use crate::Result;

/// Deterministic action for an observation. Stateful implementors (frame
/// stacks, per-episode draws) take `&mut self`; snapshots stay cheap to clone.
pub trait Policy {
    fn act(&mut self, obs: &[f32]) -> Result<Vec<f32>>;
}

/// Adapter so closures can stand in as policies in mining and eval loops.
pub struct FnPolicy<F>(pub F);

impl<F: FnMut(&[f32]) -> Result<Vec<f32>>> Policy for FnPolicy<F> {
    fn act(&mut self, obs: &[f32]) -> Result<Vec<f32>> {
        (self.0)(obs)
    }
}

/// Actor outputs are tanh-bounded; the action box is [0,1] per dim.
pub fn squash(y: f64) -> f64 {
    0.5 * (y + 1.0)
}

/// d squash / d y, constant because the map is affine.
pub(crate) const SQUASH_SLOPE: f64 = 0.5;

/// Short batch description attached to numeric-failure errors.
pub(crate) fn batch_digest(batch: &[crate::replay::Transition]) -> String {
    let n = batch.len();
    if n == 0 {
        return "empty batch".to_string();
    }
    let mut r_min = f32::INFINITY;
    let mut r_max = f32::NEG_INFINITY;
    let mut s_absmax = 0.0f32;
    let mut dones = 0usize;
    for t in batch {
        r_min = r_min.min(t.r);
        r_max = r_max.max(t.r);
        for &x in t.s.iter().chain(t.s_next.iter()) {
            s_absmax = s_absmax.max(x.abs());
        }
        dones += t.done as usize;
    }
    format!("n={n} r=[{r_min:.4},{r_max:.4}] |s|max={s_absmax:.4} dones={dones}")
}
