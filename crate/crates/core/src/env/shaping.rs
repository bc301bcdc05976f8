//! Reward shaping on top of the raw distance reward.
//!
//! Every term is opt-in with a weight; the default configuration adds only
//! the small per-step survival bonus. Both the raw and shaped values are
//! returned so loggers can report the true task metric next to whatever
//! the learner actually optimizes.

use super::RunnerState;
use crate::error::CoreError;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapingConfig {
    /// Replace the distance term with the current forward velocity.
    pub velocity_reward: bool,
    /// Flat bonus per agent step, encourages staying up.
    pub step_bonus: f64,
    /// Bonus when the leg-phase gap sits inside `knee_interval`.
    pub knee_bonus_weight: f64,
    /// Closed interval (radians) for the knee bonus, lo < hi.
    pub knee_interval: (f64, f64),
    /// Penalty weight on max(0, 0.2 - |phase gap|): near-parallel legs.
    pub straight_leg_penalty_weight: f64,
    /// Penalty weight on forward lean. SymRunner has no lean degree of
    /// freedom, so the proxy is identically 0; the hook exists for
    /// environments that do distinguish pelvis from head.
    pub lean_penalty_weight: f64,
    /// One-time penalty on the step the runner falls.
    pub fall_penalty: f64,
    /// Final multiplier on the whole shaped sum.
    pub reward_scale: f64,
}

impl Default for ShapingConfig {
    fn default() -> Self {
        ShapingConfig {
            velocity_reward: false,
            step_bonus: 0.01,
            knee_bonus_weight: 0.0,
            knee_interval: (0.3, 1.2),
            straight_leg_penalty_weight: 0.0,
            lean_penalty_weight: 0.0,
            fall_penalty: 0.0,
            reward_scale: 1.0,
        }
    }
}

impl ShapingConfig {
    /// Everything off, scale 1: shaped output equals the raw reward.
    pub fn passthrough() -> ShapingConfig {
        ShapingConfig { step_bonus: 0.0, ..ShapingConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("step_bonus", self.step_bonus),
            ("knee_bonus_weight", self.knee_bonus_weight),
            ("straight_leg_penalty_weight", self.straight_leg_penalty_weight),
            ("lean_penalty_weight", self.lean_penalty_weight),
            ("fall_penalty", self.fall_penalty),
        ] {
            if !w.is_finite() || w < 0.0 {
                return Err(CoreError::config(format!("{name} must be finite >= 0, got {w}")));
            }
        }
        if !self.reward_scale.is_finite() || self.reward_scale <= 0.0 {
            return Err(CoreError::config(format!(
                "reward_scale must be finite > 0, got {}",
                self.reward_scale
            )));
        }
        let (lo, hi) = self.knee_interval;
        if !lo.is_finite() || !hi.is_finite() || lo >= hi {
            return Err(CoreError::config(format!(
                "knee_interval ({lo}, {hi}) needs finite lo < hi"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapedReward {
    pub raw: f64,
    pub shaped: f64,
}

/// Applies the shaping terms for one agent step that moved the state from
/// `prev` to `next` and earned `raw` distance reward.
pub fn shape_reward(
    raw: f64,
    prev: &RunnerState,
    next: &RunnerState,
    cfg: &ShapingConfig,
) -> ShapedReward {
    let split = next.leg_split().abs();
    let base = if cfg.velocity_reward { next.v } else { raw };
    let knee = if split >= cfg.knee_interval.0 && split <= cfg.knee_interval.1 {
        cfg.knee_bonus_weight
    } else {
        0.0
    };
    let straightness = (0.2 - split).max(0.0);
    let lean = 0.0;
    let fell = next.fallen && !prev.fallen;
    let shaped = cfg.reward_scale
        * (base + cfg.step_bonus + knee
            - cfg.straight_leg_penalty_weight * straightness
            - cfg.lean_penalty_weight * lean
            - cfg.fall_penalty * if fell { 1.0 } else { 0.0 });
    ShapedReward { raw, shaped }
}
