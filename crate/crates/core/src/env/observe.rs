//! Observation layouts and the enrichment pipeline.
//!
//! Raw observations are 13 channels straight off the simulator. The
//! enriched layout rewrites them into a first-person view: absolute
//! position removed, previous obstacle appended, backward-difference
//! velocities and accelerations added, and the last three frames stacked.

use crate::error::CoreError;
use crate::Result;
use std::collections::VecDeque;

pub const RAW_DIM: usize = 13;
/// Core channels with p_x zeroed, previous-obstacle pair, 7 velocities,
/// 7 accelerations.
pub const ENRICHED_FRAME_DIM: usize = RAW_DIM + 2 + 2 * KINEMATIC_CHANNELS.len();
pub const ENRICHED_STACK: usize = 3;
pub const ENRICHED_DIM: usize = ENRICHED_STACK * ENRICHED_FRAME_DIM;

/// Channel indices into [`RawObs`].
pub mod raw_ch {
    pub const PX: usize = 0;
    pub const HEIGHT: usize = 1;
    pub const VX: usize = 2;
    pub const PHI_L: usize = 3;
    pub const OMEGA_L: usize = 4;
    pub const CONTACT_L: usize = 5;
    pub const PHI_R: usize = 6;
    pub const OMEGA_R: usize = 7;
    pub const CONTACT_R: usize = 8;
    pub const STRENGTH_L: usize = 9;
    pub const STRENGTH_R: usize = 10;
    pub const DX_NEXT: usize = 11;
    pub const R_NEXT: usize = 12;
}

pub const RAW_CHANNEL_NAMES: [&str; RAW_DIM] = [
    "px",
    "height",
    "vx",
    "phi_l",
    "omega_l",
    "contact_l",
    "phi_r",
    "omega_r",
    "contact_r",
    "strength_l",
    "strength_r",
    "dx_next",
    "r_next",
];

/// Channels that get finite-difference velocity and acceleration columns.
pub const KINEMATIC_CHANNELS: [usize; 7] = [
    raw_ch::PX,
    raw_ch::HEIGHT,
    raw_ch::VX,
    raw_ch::PHI_L,
    raw_ch::OMEGA_L,
    raw_ch::PHI_R,
    raw_ch::OMEGA_R,
];

/// Offsets inside one enriched frame.
pub mod enriched_ch {
    use super::{KINEMATIC_CHANNELS, RAW_DIM};
    pub const DX_PREV: usize = RAW_DIM;
    pub const R_PREV: usize = RAW_DIM + 1;
    pub const VEL_BASE: usize = RAW_DIM + 2;
    pub const ACC_BASE: usize = VEL_BASE + KINEMATIC_CHANNELS.len();
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawObs(pub [f64; RAW_DIM]);

impl RawObs {
    pub fn to_f32(&self) -> Vec<f32> {
        self.0.iter().map(|&x| x as f32).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObsMode {
    Raw,
    Enriched,
}

impl ObsMode {
    pub fn dim(self) -> usize {
        match self {
            ObsMode::Raw => RAW_DIM,
            ObsMode::Enriched => ENRICHED_DIM,
        }
    }
}

/// Per-channel names for a layout, used by the stats file format.
pub fn channel_names(mode: ObsMode) -> Vec<String> {
    match mode {
        ObsMode::Raw => RAW_CHANNEL_NAMES.iter().map(|s| s.to_string()).collect(),
        ObsMode::Enriched => {
            let mut names = Vec::with_capacity(ENRICHED_DIM);
            for f in 0..ENRICHED_STACK {
                for n in RAW_CHANNEL_NAMES.iter() {
                    names.push(format!("f{f}.{n}"));
                }
                names.push(format!("f{f}.dx_prev"));
                names.push(format!("f{f}.r_prev"));
                for &k in KINEMATIC_CHANNELS.iter() {
                    names.push(format!("f{f}.d_{}", RAW_CHANNEL_NAMES[k]));
                }
                for &k in KINEMATIC_CHANNELS.iter() {
                    names.push(format!("f{f}.dd_{}", RAW_CHANNEL_NAMES[k]));
                }
            }
            names
        }
    }
}

/// Reported distance when no obstacle has been passed yet; mirrors the
/// next-obstacle sentinel.
const PREV_SENTINEL: (f64, f64) = (100.0, 0.0);

/// Stateful per-episode observation transform. Feed every raw frame in
/// order; it emits the vector the agent sees under the configured mode.
///
/// The previous obstacle is recovered from the raw stream itself: when the
/// next-obstacle channel switches targets, the old target has been passed.
#[derive(Debug, Clone)]
pub struct ObsPipeline {
    mode: ObsMode,
    dt_frame: f64,
    /// Raw history, oldest first: [t-2, t-1, t].
    hist: [RawObs; 3],
    frames: VecDeque<Vec<f64>>,
    /// Absolute center and radius of the current next obstacle.
    last_next: Option<(f64, f64)>,
    prev_obstacle: Option<(f64, f64)>,
}

impl ObsPipeline {
    pub fn new(mode: ObsMode, dt_frame: f64) -> Result<ObsPipeline> {
        if !(dt_frame > 0.0) || !dt_frame.is_finite() {
            return Err(CoreError::config(format!("dt_frame must be positive, got {dt_frame}")));
        }
        Ok(ObsPipeline {
            mode,
            dt_frame,
            hist: [RawObs([0.0; RAW_DIM]); 3],
            frames: VecDeque::with_capacity(ENRICHED_STACK),
            last_next: None,
            prev_obstacle: None,
        })
    }

    pub fn mode(&self) -> ObsMode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.mode.dim()
    }

    /// Starts an episode: history is padded with the first frame, so all
    /// stacked frames equal frame 0 and the difference channels are 0.
    pub fn reset(&mut self, first: &RawObs) -> Vec<f32> {
        self.hist = [*first; 3];
        self.last_next = next_obstacle(first);
        self.prev_obstacle = None;
        self.frames.clear();
        let f0 = self.enrich_current();
        for _ in 0..ENRICHED_STACK {
            self.frames.push_back(f0.clone());
        }
        self.emit()
    }

    /// Pushes the next raw frame and returns the agent-facing observation.
    pub fn push(&mut self, obs: &RawObs) -> Vec<f32> {
        self.hist = [self.hist[1], self.hist[2], *obs];
        let cur = next_obstacle(obs);
        if let Some((c_old, r_old)) = self.last_next {
            let switched = match cur {
                Some((c_new, _)) => (c_new - c_old).abs() > 1e-6,
                None => true,
            };
            if switched && c_old < obs.0[raw_ch::PX] {
                self.prev_obstacle = Some((c_old, r_old));
            }
        }
        self.last_next = cur;
        let f = self.enrich_current();
        if self.frames.len() == ENRICHED_STACK {
            self.frames.pop_front();
        }
        self.frames.push_back(f);
        self.emit()
    }

    fn enrich_current(&self) -> Vec<f64> {
        let [a, b, c] = &self.hist;
        let mut f = Vec::with_capacity(ENRICHED_FRAME_DIM);
        f.extend_from_slice(&c.0);
        f[raw_ch::PX] = 0.0;
        match self.prev_obstacle {
            Some((center, radius)) => {
                f.push(c.0[raw_ch::PX] - center);
                f.push(radius);
            }
            None => {
                f.push(PREV_SENTINEL.0);
                f.push(PREV_SENTINEL.1);
            }
        }
        for &k in KINEMATIC_CHANNELS.iter() {
            f.push((c.0[k] - b.0[k]) / self.dt_frame);
        }
        let dt2 = self.dt_frame * self.dt_frame;
        for &k in KINEMATIC_CHANNELS.iter() {
            f.push((c.0[k] - 2.0 * b.0[k] + a.0[k]) / dt2);
        }
        debug_assert_eq!(f.len(), ENRICHED_FRAME_DIM);
        f
    }

    fn emit(&self) -> Vec<f32> {
        match self.mode {
            ObsMode::Raw => self.hist[2].to_f32(),
            ObsMode::Enriched => {
                let mut out = Vec::with_capacity(ENRICHED_DIM);
                for frame in &self.frames {
                    out.extend(frame.iter().map(|&x| x as f32));
                }
                out
            }
        }
    }
}

fn next_obstacle(obs: &RawObs) -> Option<(f64, f64)> {
    let dx = obs.0[raw_ch::DX_NEXT];
    if dx >= super::OBSTACLE_SENTINEL {
        None
    } else {
        Some((obs.0[raw_ch::PX] + dx, obs.0[raw_ch::R_NEXT]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Difficulty, PhysicsConfig, SymRunner};
    use approx::assert_relative_eq;

    fn obs_with(px: f64, height: f64, dx_next: f64, r_next: f64) -> RawObs {
        let mut o = [0.0; RAW_DIM];
        o[raw_ch::PX] = px;
        o[raw_ch::HEIGHT] = height;
        o[raw_ch::DX_NEXT] = dx_next;
        o[raw_ch::R_NEXT] = r_next;
        RawObs(o)
    }

    #[test]
    fn dims_match_modes() {
        assert_eq!(ObsMode::Raw.dim(), 13);
        assert_eq!(ENRICHED_FRAME_DIM, 29);
        assert_eq!(ObsMode::Enriched.dim(), 87);
        assert_eq!(channel_names(ObsMode::Raw).len(), 13);
        let names = channel_names(ObsMode::Enriched);
        assert_eq!(names.len(), 87);
        // No duplicate names: the stats file is keyed by them.
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
    }

    fn obs_with_defaults() -> RawObs {
        obs_with(1.5, 1.0, 4.0, 0.1)
    }

    #[test]
    fn reset_stacks_identical_frames_with_zero_diffs() {
        let mut p = ObsPipeline::new(ObsMode::Enriched, 0.05).unwrap();
        let out = p.reset(&obs_with_defaults());
        let frame = &out[..ENRICHED_FRAME_DIM];
        for f in 1..ENRICHED_STACK {
            let other = &out[f * ENRICHED_FRAME_DIM..(f + 1) * ENRICHED_FRAME_DIM];
            assert_eq!(frame, other);
        }
        for &x in &frame[enriched_ch::VEL_BASE..] {
            assert_eq!(x, 0.0);
        }
    }

    #[test]
    fn constant_history_zeroes_difference_channels() {
        let mut p = ObsPipeline::new(ObsMode::Enriched, 0.05).unwrap();
        let o = obs_with_defaults();
        p.reset(&o);
        let out = p.push(&o);
        let newest = &out[2 * ENRICHED_FRAME_DIM..];
        for &x in &newest[enriched_ch::VEL_BASE..] {
            assert_eq!(x, 0.0);
        }
    }

    #[test]
    fn px_zeroed_in_every_frame() {
        let mut p = ObsPipeline::new(ObsMode::Enriched, 0.05).unwrap();
        p.reset(&obs_with(3.7, 1.0, 100.0, 0.0));
        let out = p.push(&obs_with(4.2, 1.0, 100.0, 0.0));
        for f in 0..ENRICHED_STACK {
            assert_eq!(out[f * ENRICHED_FRAME_DIM + raw_ch::PX], 0.0);
        }
    }

    #[test]
    fn linear_px_gives_slope_velocity_and_zero_acceleration() {
        let dt = 0.05;
        let mut p = ObsPipeline::new(ObsMode::Enriched, dt).unwrap();
        p.reset(&obs_with(0.0, 1.0, 100.0, 0.0));
        // p_x = 2 t: each frame advances by 2 dt.
        p.push(&obs_with(2.0 * dt, 1.0, 100.0, 0.0));
        let out = p.push(&obs_with(4.0 * dt, 1.0, 100.0, 0.0));
        let newest = &out[2 * ENRICHED_FRAME_DIM..];
        assert_relative_eq!(newest[enriched_ch::VEL_BASE] as f64, 2.0, max_relative = 1e-6);
        assert_relative_eq!(newest[enriched_ch::ACC_BASE] as f64, 0.0, epsilon = 1e-6);
    }

    #[test]
    fn quadratic_px_gives_constant_acceleration() {
        let dt = 0.1;
        let mut p = ObsPipeline::new(ObsMode::Enriched, dt).unwrap();
        // p_x = t^2 sampled at t = 0, dt, 2dt, 3dt: acceleration 2.
        p.reset(&obs_with(0.0, 1.0, 100.0, 0.0));
        p.push(&obs_with(dt * dt, 1.0, 100.0, 0.0));
        p.push(&obs_with(4.0 * dt * dt, 1.0, 100.0, 0.0));
        let out = p.push(&obs_with(9.0 * dt * dt, 1.0, 100.0, 0.0));
        let newest = &out[2 * ENRICHED_FRAME_DIM..];
        assert_relative_eq!(newest[enriched_ch::ACC_BASE] as f64, 2.0, max_relative = 1e-4);
    }

    #[test]
    fn previous_obstacle_appears_after_passing() {
        let mut p = ObsPipeline::new(ObsMode::Enriched, 0.05).unwrap();
        // Next obstacle at absolute 5.0, radius 0.2.
        let out = p.reset(&obs_with(4.0, 1.0, 1.0, 0.2));
        let newest = &out[2 * ENRICHED_FRAME_DIM..];
        assert_eq!(newest[enriched_ch::DX_PREV], 100.0);
        assert_eq!(newest[enriched_ch::R_PREV], 0.0);
        // Still approaching.
        p.push(&obs_with(4.9, 1.0, 0.1, 0.2));
        // Passed it; next switches to a farther one at 9.0.
        let out = p.push(&obs_with(5.5, 1.0, 3.5, 0.1));
        let newest = &out[2 * ENRICHED_FRAME_DIM..];
        assert_relative_eq!(newest[enriched_ch::DX_PREV] as f64, 0.5, max_relative = 1e-5);
        assert_relative_eq!(newest[enriched_ch::R_PREV] as f64, 0.2, max_relative = 1e-6);
        // The older stacked frames still carry the sentinel.
        assert_eq!(out[enriched_ch::DX_PREV], 100.0);
    }

    #[test]
    fn previous_obstacle_tracks_through_live_episode() {
        let mut env = SymRunner::new(PhysicsConfig::default(), Difficulty::default());
        let first = env.reset(17);
        let repeat = 5u32;
        let mut p = ObsPipeline::new(ObsMode::Enriched, repeat as f64 * 0.01).unwrap();
        p.reset(&first);
        let drive = [1.0f32, 0.0, 0.0, 1.0];
        let mut saw_prev = false;
        while !env.is_done() {
            let out = env.step(&drive, repeat).unwrap();
            let v = p.push(&out.obs);
            assert_eq!(v.len(), ENRICHED_DIM);
            assert!(v.iter().all(|x| x.is_finite()));
            let newest = &v[2 * ENRICHED_FRAME_DIM..];
            if let Some((dx, r)) = env.prev_obstacle() {
                saw_prev = true;
                assert_relative_eq!(newest[enriched_ch::DX_PREV] as f64, dx, epsilon = 1e-4);
                assert_relative_eq!(newest[enriched_ch::R_PREV] as f64, r, epsilon = 1e-6);
            }
        }
        // The driven gait passes at least one obstacle on this seed.
        assert!(saw_prev, "episode never passed an obstacle; pick another seed");
    }

    #[test]
    fn raw_mode_passes_through() {
        let mut p = ObsPipeline::new(ObsMode::Raw, 0.05).unwrap();
        let o = obs_with(1.0, 0.9, 2.0, 0.1);
        let out = p.reset(&o);
        assert_eq!(out, o.to_f32());
        let o2 = obs_with(1.1, 0.8, 1.9, 0.1);
        assert_eq!(p.push(&o2), o2.to_f32());
    }

    #[test]
    fn rejects_bad_dt() {
        assert!(ObsPipeline::new(ObsMode::Raw, 0.0).is_err());
        assert!(ObsPipeline::new(ObsMode::Raw, -1.0).is_err());
        assert!(ObsPipeline::new(ObsMode::Raw, f64::NAN).is_err());
    }
}
