//! Sampler: pulls weights, rolls episodes with per-episode noise, ships
//! transitions. Weights are fetched once per episode and used stale until
//! the next boundary.

use crate::link::{Backoff, Link, TcpLink};
use crate::learner::{pick_addr, ADDR_ENV_VAR};
use crate::wire::WireMessage;
use crate::{OrchError, Result};
use l2r_core::agents::squash;
use l2r_core::env::{Difficulty, ObsMode, ObsPipeline, PhysicsConfig, SymRunner};
use l2r_core::explore::{ActionNoiseKind, EpisodeNoiseMode, NoisePolicy, OuNoise, RandomWalkNoise};
use l2r_core::nn::{load_arrays, Net, NetworkParams, NetworkSpec};
use l2r_core::replay::{ObsLayout, Transition};
use l2r_core::rng::SplitMix64;

/// The environment takes two muscle pairs.
const ACT_DIM: usize = 4;
/// Parameter-noise sigma bounds; adaptation multiplies/divides by 1.01.
const PARAM_SIGMA_MIN: f64 = 1e-6;
const PARAM_SIGMA_MAX: f64 = 1.0;
const PARAM_SIGMA_STEP: f64 = 1.01;

#[derive(Debug, Clone)]
pub struct SamplerConfig {
    pub addr: String,
    pub actor: NetworkSpec,
    pub obs_mode: ObsMode,
    pub physics: PhysicsConfig,
    pub difficulty: Difficulty,
    pub episodes: u64,
    /// Cap on agent decisions per episode (the env also caps sub-steps).
    pub max_episode_steps: u32,
    pub action_repeat: u32,
    /// Multiplies rewards before they go on the wire.
    pub reward_scale: f32,
    /// Open each episode with 20..=40 uniform actions.
    pub warm_start: bool,
    pub noise: NoisePolicy,
    /// Action-noise process; its current sigma is also the distance target
    /// for parameter-noise adaptation.
    pub ou: OuNoise,
    /// Required when the action-noise kind is the clipped random walk.
    pub walk: Option<RandomWalkNoise>,
    pub param_noise_sigma: f64,
    pub seed: u64,
    pub backoff: Backoff,
}

#[derive(Debug, Clone, Default)]
pub struct SamplerReport {
    pub episodes_sent: u64,
    pub transitions_sent: u64,
    pub reconnects: u64,
    /// Weight version used for each episode, in order.
    pub weight_versions: Vec<u64>,
    pub noise_modes: Vec<EpisodeNoiseMode>,
    /// Warm-start actions drawn per episode (0 when disabled).
    pub warm_draws: Vec<u32>,
    /// Scaled per-episode returns, as shipped.
    pub returns_scaled: Vec<f32>,
}

/// One sampler's rollout state. Callers drive it an episode at a time so
/// several sessions can interleave over one in-process learner.
pub struct SamplerSession {
    net: Net,
    env: SymRunner,
    pipe: ObsPipeline,
    noise: NoisePolicy,
    ou: OuNoise,
    walk_proto: Option<RandomWalkNoise>,
    param_sigma: f64,
    rng: SplitMix64,
    env_seeds: SplitMix64,
    episodes_left: u64,
    max_episode_steps: u32,
    action_repeat: u32,
    reward_scale: f32,
    warm_start: bool,
    pub report: SamplerReport,
}

impl SamplerSession {
    pub fn new(cfg: &SamplerConfig) -> Result<SamplerSession> {
        let net = Net::new(cfg.actor.clone())?;
        if net.input_dim() != cfg.obs_mode.dim() {
            return Err(OrchError::protocol(format!(
                "actor input dim {} does not match observation dim {}",
                net.input_dim(),
                cfg.obs_mode.dim()
            )));
        }
        if net.out_dim() != ACT_DIM || net.n_heads() != 0 {
            return Err(OrchError::protocol("actor must be a plain net with 4 outputs"));
        }
        if cfg.ou.dim() != ACT_DIM {
            return Err(OrchError::protocol("action noise dim must be 4"));
        }
        if cfg.action_repeat == 0 || cfg.max_episode_steps == 0 {
            return Err(OrchError::protocol("action_repeat and max_episode_steps must be positive"));
        }
        if !(cfg.reward_scale.is_finite() && cfg.reward_scale > 0.0) {
            return Err(OrchError::protocol("reward_scale must be finite and positive"));
        }
        if cfg.noise.action_kind == ActionNoiseKind::RandomWalk && cfg.walk.is_none() {
            return Err(OrchError::protocol("random-walk noise selected but not configured"));
        }
        if !(cfg.param_noise_sigma >= PARAM_SIGMA_MIN && cfg.param_noise_sigma <= PARAM_SIGMA_MAX) {
            return Err(OrchError::protocol(format!(
                "param_noise_sigma must be in [{PARAM_SIGMA_MIN}, {PARAM_SIGMA_MAX}]"
            )));
        }
        let mut root = SplitMix64::new(cfg.seed);
        let rng = root.fork(0);
        let env_seeds = root.fork(1);
        let dt_frame = cfg.physics.dt * cfg.action_repeat as f64;
        Ok(SamplerSession {
            net,
            env: SymRunner::new(cfg.physics, cfg.difficulty),
            pipe: ObsPipeline::new(cfg.obs_mode, dt_frame)?,
            noise: cfg.noise.clone(),
            ou: cfg.ou.clone(),
            walk_proto: cfg.walk.clone(),
            param_sigma: cfg.param_noise_sigma,
            rng,
            env_seeds,
            episodes_left: cfg.episodes,
            max_episode_steps: cfg.max_episode_steps,
            action_repeat: cfg.action_repeat,
            reward_scale: cfg.reward_scale,
            warm_start: cfg.warm_start,
            report: SamplerReport::default(),
        })
    }

    pub fn finished(&self) -> bool {
        self.episodes_left == 0
    }

    pub fn param_sigma(&self) -> f64 {
        self.param_sigma
    }

    fn perturbed(&mut self, clean: &NetworkParams<f64>) -> NetworkParams<f64> {
        let mut p = clean.clone();
        for arr in p.arrays.iter_mut() {
            for v in arr.data.iter_mut() {
                *v += self.param_sigma * self.rng.normal();
            }
        }
        p
    }

    /// Fetch weights, roll one episode, ship it. Exploration mode is drawn
    /// once at the boundary; in parameter mode the sigma adapts afterward
    /// toward the action-noise sigma in action space.
    pub fn run_one_episode<L: Link>(&mut self, link: &mut L) -> Result<()> {
        if self.episodes_left == 0 {
            return Ok(());
        }
        let (version, ckpt) = link.fetch_weights()?;
        let arrays = load_arrays(&ckpt)?;
        let clean: NetworkParams<f64> = self.net.params_from_arrays(version, &arrays)?;
        let mode = self.noise.select_mode(&mut self.rng);
        let acting = match mode {
            EpisodeNoiseMode::Parameter => self.perturbed(&clean),
            _ => clean.clone(),
        };

        let raw0 = self.env.reset(self.env_seeds.next_u64());
        let mut s = self.pipe.reset(&raw0);
        self.ou.reset_state();
        let mut walk = self.walk_proto.clone();
        let warm = if self.warm_start { 20 + self.rng.below(21) as u32 } else { 0 };
        let layout = ObsLayout::for_mode(self.pipe.mode());

        let mut transitions: Vec<Transition> = Vec::new();
        let mut return_scaled = 0.0f32;
        let (mut dist2_sum, mut dist_steps) = (0.0f64, 0usize);
        let mut steps = 0u32;
        while !self.env.is_done() && steps < self.max_episode_steps {
            let a: Vec<f32> = if steps < warm {
                (0..ACT_DIM).map(|_| self.rng.uniform(0.0, 1.0) as f32).collect()
            } else {
                let x: Vec<f64> = s.iter().map(|&v| v as f64).collect();
                let y = self.net.forward(&acting, &x, None)?;
                let mut a: Vec<f64> = y.iter().map(|&v| squash(v)).collect();
                match mode {
                    EpisodeNoiseMode::Action(kind) => {
                        let n = match kind {
                            ActionNoiseKind::RandomWalk => {
                                walk.as_mut().expect("validated at construction").sample(&mut self.rng)
                            }
                            _ => self.ou.sample(&mut self.rng),
                        };
                        for (ai, ni) in a.iter_mut().zip(&n) {
                            *ai += ni;
                        }
                    }
                    EpisodeNoiseMode::Parameter => {
                        let yc = self.net.forward(&clean, &x, None)?;
                        let mut acc = 0.0;
                        for (&ycj, &aj) in yc.iter().zip(&a) {
                            let d = squash(ycj) - aj;
                            acc += d * d;
                        }
                        dist2_sum += acc / ACT_DIM as f64;
                        dist_steps += 1;
                    }
                    EpisodeNoiseMode::Off => {}
                }
                a.iter().map(|&v| v.clamp(0.0, 1.0) as f32).collect()
            };
            let out = self.env.step(&a, self.action_repeat)?;
            let s_next = self.pipe.push(&out.obs);
            let r = out.reward as f32 * self.reward_scale;
            return_scaled += r;
            let s_prev = std::mem::replace(&mut s, s_next.clone());
            transitions.push(Transition::new(s_prev, a, r, s_next, out.done, layout));
            steps += 1;
        }

        self.report.transitions_sent += transitions.len() as u64;
        link.send(&WireMessage::Episode { layout, act_dim: ACT_DIM as u32, transitions })?;

        if mode == EpisodeNoiseMode::Parameter && dist_steps > 0 {
            let d = (dist2_sum / dist_steps as f64).sqrt();
            if d < self.ou.current_sigma() {
                self.param_sigma *= PARAM_SIGMA_STEP;
            } else {
                self.param_sigma /= PARAM_SIGMA_STEP;
            }
            self.param_sigma = self.param_sigma.clamp(PARAM_SIGMA_MIN, PARAM_SIGMA_MAX);
        }
        self.noise.schedule_step(0.0);
        self.episodes_left -= 1;
        self.report.episodes_sent += 1;
        self.report.weight_versions.push(version);
        self.report.noise_modes.push(mode);
        self.report.warm_draws.push(warm);
        self.report.returns_scaled.push(return_scaled);
        Ok(())
    }
}

/// Runs a sampler against a TCP learner until its episode budget is spent.
pub fn run_sampler(cfg: &SamplerConfig) -> Result<SamplerReport> {
    let addr = pick_addr(std::env::var(ADDR_ENV_VAR).ok(), &cfg.addr);
    let mut link = TcpLink::new(addr, cfg.backoff.clone());
    let mut session = SamplerSession::new(cfg)?;
    while !session.finished() {
        session.run_one_episode(&mut link)?;
    }
    let mut report = session.report;
    report.reconnects = link.reconnects;
    Ok(report)
}
