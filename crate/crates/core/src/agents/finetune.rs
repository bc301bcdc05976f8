//! Two-stage fine-tuning: Adam until evaluation returns stop improving,
//! then one latched switch to plain SGD at a smaller rate.

use super::ddpg::DdpgCore;
use crate::error::CoreError;
use crate::Result;

pub const STAGE2_SGD_LR: f64 = 5e-5;

/// Windowed plateau rule: the first observation sets the baseline; a later
/// return counts as improvement only if it beats the best by more than
/// `eps` relative (eps = 0.01 means "more than 1% better"). `window`
/// consecutive non-improvements mean the score has flattened out.
#[derive(Debug, Clone)]
pub struct PlateauDetector {
    eps: f64,
    window: usize,
    best: Option<f64>,
    stalled: usize,
}

impl PlateauDetector {
    pub fn new(eps: f64, window: usize) -> Result<PlateauDetector> {
        if !(eps.is_finite() && eps >= 0.0) {
            return Err(CoreError::config(format!("plateau eps {eps} must be finite >= 0")));
        }
        if window == 0 {
            return Err(CoreError::config("plateau window must be positive"));
        }
        Ok(PlateauDetector { eps, window, best: None, stalled: 0 })
    }

    pub fn stalled(&self) -> usize {
        self.stalled
    }

    /// Feeds one evaluation return; true once the window has filled with
    /// non-improvements.
    pub fn observe(&mut self, eval_return: f64) -> bool {
        match self.best {
            None => {
                self.best = Some(eval_return);
                self.stalled = 0;
            }
            Some(best) => {
                if eval_return > best + self.eps * best.abs() {
                    self.best = Some(eval_return);
                    self.stalled = 0;
                } else {
                    self.stalled += 1;
                }
            }
        }
        self.stalled >= self.window
    }
}

/// Stage 1 runs whatever optimizer the agent was built with; the first
/// plateau latches stage 2 forever.
#[derive(Debug, Clone)]
pub struct TwoStageFinetune {
    detector: PlateauDetector,
    switched: bool,
    pub stage2_lr: f64,
}

impl TwoStageFinetune {
    pub fn new(eps: f64, window: usize, stage2_lr: f64) -> Result<TwoStageFinetune> {
        if !(stage2_lr.is_finite() && stage2_lr > 0.0) {
            return Err(CoreError::config(format!("stage-2 lr {stage2_lr} must be > 0")));
        }
        Ok(TwoStageFinetune { detector: PlateauDetector::new(eps, window)?, switched: false, stage2_lr })
    }

    /// 1% / 20-window rule with the 5e-5 SGD stage.
    pub fn standard() -> TwoStageFinetune {
        TwoStageFinetune::new(0.01, 20, STAGE2_SGD_LR).unwrap()
    }

    pub fn stage(&self) -> u8 {
        if self.switched {
            2
        } else {
            1
        }
    }

    /// True exactly once: on the evaluation that triggers the switch.
    pub fn observe_eval(&mut self, eval_return: f64) -> bool {
        if self.switched {
            return false;
        }
        if self.detector.observe(eval_return) {
            self.switched = true;
            return true;
        }
        false
    }

    /// Feeds the return and, on the latching observation, swaps the agent's
    /// optimizers to SGD with fresh state.
    pub fn observe_and_apply(&mut self, eval_return: f64, core: &mut DdpgCore) -> bool {
        if self.observe_eval(eval_return) {
            core.switch_to_sgd(self.stage2_lr);
            return true;
        }
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::ddpg::DdpgConfig;
    use crate::nn::{Activation, OptKind};

    #[test]
    fn constant_returns_plateau_at_the_window_boundary() {
        let mut d = PlateauDetector::new(0.01, 5).unwrap();
        assert!(!d.observe(10.0)); // baseline
        for i in 0..4 {
            assert!(!d.observe(10.0), "stalled too early at {i}");
        }
        assert!(d.observe(10.0));
    }

    #[test]
    fn exact_one_percent_gain_is_not_improvement() {
        let mut d = PlateauDetector::new(0.01, 2).unwrap();
        d.observe(100.0);
        assert!(!d.observe(101.0)); // boundary: needs strictly more
        assert!(d.observe(101.0));
        let mut d = PlateauDetector::new(0.01, 2).unwrap();
        d.observe(100.0);
        assert!(!d.observe(101.1)); // real improvement resets the count
        assert_eq!(d.stalled(), 0);
    }

    #[test]
    fn negative_baselines_use_absolute_margin() {
        let mut d = PlateauDetector::new(0.01, 3).unwrap();
        d.observe(-50.0);
        assert!(!d.observe(-49.0)); // -49 > -50 + 0.5
        assert_eq!(d.stalled(), 0);
        assert!(!d.observe(-49.0));
        assert!(!d.observe(-49.0));
        assert!(d.observe(-49.0));
    }

    #[test]
    fn switch_latches_and_reports_once() {
        let mut f = TwoStageFinetune::new(0.01, 3, STAGE2_SGD_LR).unwrap();
        assert_eq!(f.stage(), 1);
        let mut fired = 0;
        for _ in 0..20 {
            if f.observe_eval(1.0) {
                fired += 1;
            }
        }
        assert_eq!(fired, 1);
        assert_eq!(f.stage(), 2);
    }

    #[test]
    fn switch_installs_sgd_with_fresh_state() {
        let mut core =
            DdpgCore::new(&DdpgConfig::mlp(2, 1, &[8], &[8], Activation::Relu)).unwrap();
        let mut f = TwoStageFinetune::standard();
        // Push the optimizer so it has state worth resetting.
        let g = core.actor_net.zero_grads::<f64>();
        let mut g = g;
        g.arrays[0] = vec![0.01; core.actor.arrays[0].data.len()];
        core.actor_opt.apply(&mut core.actor, &g).unwrap();
        assert_eq!(core.actor_opt.step_count(), 1);
        let mut applied = false;
        for _ in 0..25 {
            if f.observe_and_apply(3.0, &mut core) {
                applied = true;
            }
        }
        assert!(applied);
        assert_eq!(core.actor_opt.kind, OptKind::Sgd);
        assert_eq!(core.actor_opt.lr(), 5e-5);
        assert_eq!(core.actor_opt.step_count(), 0);
        assert_eq!(core.critic_opt.kind, OptKind::Sgd);
    }

    #[test]
    fn steady_improvement_never_switches() {
        let mut f = TwoStageFinetune::new(0.01, 3, STAGE2_SGD_LR).unwrap();
        let mut ret = 10.0;
        for _ in 0..50 {
            assert!(!f.observe_eval(ret));
            ret *= 1.05;
        }
        assert_eq!(f.stage(), 1);
    }
}
