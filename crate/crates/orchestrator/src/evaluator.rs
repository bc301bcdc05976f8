//! Evaluator: noise-free rollouts on fresh weights. Reports returns and
//! distances back to the learner and never ships transitions, so evaluation
//! cannot contaminate the replay buffer.

use crate::learner::{pick_addr, EvalRecord, ADDR_ENV_VAR};
use crate::link::{Backoff, Link, TcpLink};
use crate::wire::WireMessage;
use crate::{OrchError, Result};
use l2r_core::agents::squash;
use l2r_core::env::{Difficulty, ObsMode, ObsPipeline, PhysicsConfig, SymRunner};
use l2r_core::nn::{load_arrays, Net, NetworkParams, NetworkSpec};
use l2r_core::rng::SplitMix64;

#[derive(Debug, Clone)]
pub struct EvalJob {
    pub addr: String,
    pub actor: NetworkSpec,
    pub obs_mode: ObsMode,
    pub physics: PhysicsConfig,
    pub difficulty: Difficulty,
    pub episodes: u64,
    pub max_episode_steps: u32,
    pub action_repeat: u32,
    pub seed: u64,
    pub backoff: Backoff,
}

/// Rolls the evaluation episodes over any link; returns what it reported.
/// Returns are raw env units, never reward-scaled.
pub fn eval_episodes<L: Link>(job: &EvalJob, link: &mut L) -> Result<Vec<EvalRecord>> {
    let net = Net::new(job.actor.clone())?;
    if net.input_dim() != job.obs_mode.dim() {
        return Err(OrchError::protocol(format!(
            "actor input dim {} does not match observation dim {}",
            net.input_dim(),
            job.obs_mode.dim()
        )));
    }
    if job.action_repeat == 0 || job.max_episode_steps == 0 {
        return Err(OrchError::protocol("action_repeat and max_episode_steps must be positive"));
    }
    let mut env = SymRunner::new(job.physics, job.difficulty);
    let mut pipe = ObsPipeline::new(job.obs_mode, job.physics.dt * job.action_repeat as f64)?;
    let mut env_seeds = SplitMix64::new(job.seed);
    let mut records = Vec::with_capacity(job.episodes as usize);
    for _ in 0..job.episodes {
        let (version, ckpt) = link.fetch_weights()?;
        let params: NetworkParams<f64> = net.params_from_arrays(version, &load_arrays(&ckpt)?)?;
        let raw0 = env.reset(env_seeds.next_u64());
        let mut s = pipe.reset(&raw0);
        let mut episode_return = 0.0f32;
        let mut steps = 0u32;
        while !env.is_done() && steps < job.max_episode_steps {
            let x: Vec<f64> = s.iter().map(|&v| v as f64).collect();
            let y = net.forward(&params, &x, None)?;
            let a: Vec<f32> = y.iter().map(|&v| squash(v) as f32).collect();
            let out = env.step(&a, job.action_repeat)?;
            s = pipe.push(&out.obs);
            episode_return += out.reward as f32;
            steps += 1;
        }
        let record = EvalRecord {
            episode_return,
            distance: env.state().p_x as f32,
            fell: env.state().fallen,
        };
        link.send(&WireMessage::EvalResult {
            episode_return: record.episode_return,
            distance: record.distance,
            fell: record.fell,
        })?;
        records.push(record);
    }
    Ok(records)
}

pub fn run_evaluator(job: &EvalJob) -> Result<Vec<EvalRecord>> {
    let addr = pick_addr(std::env::var(ADDR_ENV_VAR).ok(), &job.addr);
    let mut link = TcpLink::new(addr, job.backoff.clone());
    eval_episodes(job, &mut link)
}
