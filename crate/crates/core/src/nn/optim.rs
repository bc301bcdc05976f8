//! Gradient-descent optimizers over named parameter arrays.
//!
//! Gradients arrive aligned with `NetworkParams::arrays`; an empty gradient
//! array means "not on the trained path" and is skipped without touching its
//! momenta. Updates are atomic: every gradient is validated finite before
//! any parameter moves.

use super::scalar::Scalar;
use super::{Gradients, NetworkParams};
use crate::error::CoreError;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrSchedule {
    Constant(f64),
    /// Linear interpolation from `start` to `end` over `steps` optimizer
    /// steps, constant at `end` afterwards.
    Linear { start: f64, end: f64, steps: u64 },
}

impl LrSchedule {
    pub fn at(&self, step: u64) -> f64 {
        match *self {
            LrSchedule::Constant(lr) => lr,
            LrSchedule::Linear { start, end, steps } => {
                if steps == 0 || step >= steps {
                    end
                } else {
                    start + (end - start) * (step as f64 / steps as f64)
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd,
}

#[derive(Debug, Clone)]
struct Moments<S> {
    m: Vec<S>,
    v: Vec<S>,
    /// Per-array step count; bias correction tracks how often each array was
    /// actually trained (heads step less often than a shared body).
    t: u64,
}

/// Optimizer state for one network: kind, schedule, global step counter and
/// per-array Adam momenta (allocated on first touch).
#[derive(Debug, Clone)]
pub struct Optimizer<S> {
    pub kind: OptKind,
    pub schedule: LrSchedule,
    step: u64,
    moments: Vec<Option<Moments<S>>>,
}

impl<S: Scalar> Optimizer<S> {
    pub fn adam(schedule: LrSchedule) -> Self {
        Optimizer {
            kind: OptKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 },
            schedule,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn sgd(schedule: LrSchedule) -> Self {
        Optimizer { kind: OptKind::Sgd, schedule, step: 0, moments: Vec::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn lr(&self) -> f64 {
        self.schedule.at(self.step)
    }

    /// Discards momenta and the step counter, keeping kind and schedule.
    /// Used when switching optimizers mid-training.
    pub fn reset_state(&mut self) {
        self.step = 0;
        self.moments.clear();
    }

    /// Applies one update. The version counter on `params` increases by one;
    /// a non-finite gradient aborts with no parameter change.
    pub fn apply(&mut self, params: &mut NetworkParams<S>, grads: &Gradients<S>) -> Result<()> {
        if grads.arrays.len() != params.arrays.len() {
            return Err(CoreError::config("optimizer: gradient/param array count mismatch"));
        }
        for (i, g) in grads.arrays.iter().enumerate() {
            if g.is_empty() {
                continue;
            }
            if g.len() != params.arrays[i].data.len() {
                return Err(CoreError::config(format!(
                    "optimizer: gradient size mismatch on {}",
                    params.arrays[i].name
                )));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(CoreError::numeric(format!(
                    "non-finite gradient in {}",
                    params.arrays[i].name
                )));
            }
        }
        if self.moments.is_empty() {
            self.moments = vec![None; params.arrays.len()];
        }
        let lr = self.schedule.at(self.step);
        match self.kind {
            OptKind::Sgd => {
                let lr_s = S::c(lr);
                for (arr, g) in params.arrays.iter_mut().zip(grads.arrays.iter()) {
                    if g.is_empty() {
                        continue;
                    }
                    for (p, gv) in arr.data.iter_mut().zip(g.iter()) {
                        *p -= lr_s * *gv;
                    }
                }
            }
            OptKind::Adam { beta1, beta2, eps } => {
                for (i, (arr, g)) in
                    params.arrays.iter_mut().zip(grads.arrays.iter()).enumerate()
                {
                    if g.is_empty() {
                        continue;
                    }
                    let slot = self.moments[i].get_or_insert_with(|| Moments {
                        m: vec![S::zero(); g.len()],
                        v: vec![S::zero(); g.len()],
                        t: 0,
                    });
                    slot.t += 1;
                    let corr1 = 1.0 - beta1.powi(slot.t.min(i32::MAX as u64) as i32);
                    let corr2 = 1.0 - beta2.powi(slot.t.min(i32::MAX as u64) as i32);
                    let b1 = S::c(beta1);
                    let b2 = S::c(beta2);
                    let one_m_b1 = S::c(1.0 - beta1);
                    let one_m_b2 = S::c(1.0 - beta2);
                    let lr_c1 = S::c(lr / corr1);
                    let inv_sqrt_c2 = S::c(1.0 / corr2.sqrt());
                    let eps_s = S::c(eps);
                    for j in 0..g.len() {
                        let gv = g[j];
                        slot.m[j] = b1 * slot.m[j] + one_m_b1 * gv;
                        slot.v[j] = b2 * slot.v[j] + one_m_b2 * gv * gv;
                        let denom = (slot.v[j]).sqrt() * inv_sqrt_c2 + eps_s;
                        arr.data[j] -= lr_c1 * slot.m[j] / denom;
                    }
                }
            }
        }
        self.step += 1;
        params.version += 1;
        Ok(())
    }
}
