//! The two distributed roles. `serve` hosts the learner loop in this
//! process; `sample` collects episodes against a remote learner.

use crate::config::{Algorithm, ExperimentConfig};
use crate::metrics::{write_eval_csv, EvalSummary};
use crate::train::{ddpg_config, replay_config, write_checkpoints, SavedPart, Streams, ACT_DIM};
use crate::{CliError, Result};
use l2r_core::agents::DdpgAgent;
use l2r_core::nn::Activation;
use l2r_orchestrator::engine::DdpgEngine;
use l2r_orchestrator::learner::{pick_addr, serve_learner, LearnerConfig, ADDR_ENV_VAR};
use l2r_orchestrator::link::{Backoff, Link, TcpLink};
use l2r_orchestrator::sampler::{run_sampler, SamplerConfig};
use l2r_orchestrator::wire::WireMessage;
use std::io::Write;
use std::path::Path;

fn require_ddpg(cfg: &ExperimentConfig, role: &str) -> Result<()> {
    if cfg.algorithm != Algorithm::Ddpg {
        return Err(CliError::schema(format!(
            "{role} supports algorithm \"ddpg\", not \"{}\"",
            cfg.algorithm.name()
        )));
    }
    Ok(())
}

/// Binds the learner, trains until a SHUTDOWN frame arrives, then writes
/// final checkpoints and any reported evaluation results.
pub fn cmd_serve(cfg: &ExperimentConfig, addr: Option<&str>, out: &Path) -> Result<()> {
    require_ddpg(cfg, "serve")?;
    std::fs::create_dir_all(out)?;
    let seed = cfg.seeds.first().copied().unwrap_or(0);
    let mut streams = Streams::new(seed);
    let agent = DdpgAgent::new(ddpg_config(cfg, streams.agent_seed)?)?;
    let engine = DdpgEngine::new(
        agent,
        replay_config(cfg, 1, streams.replay_seed),
        cfg.agent.batch_size.unwrap_or(64),
        cfg.agent.reflect_augment.unwrap_or(false),
        streams.train.next_u64(),
    )?;
    let lcfg = LearnerConfig {
        addr: addr.unwrap_or(&cfg.cluster.addr).to_string(),
        steps_per_update: cfg.cluster.steps_per_update,
        queue_depth: cfg.cluster.queue_depth,
    };
    let running = serve_learner(&lcfg, engine)?;
    // Announce the bound address eagerly; with port 0 it is the only way
    // for samplers to learn where to connect.
    let mut stdout = std::io::stdout();
    writeln!(stdout, "learner listening on {}", running.addr())?;
    stdout.flush()?;

    let state = running.join()?;
    let stats = &state.stats;
    let core = &state.engine.agent.core;
    write_checkpoints(
        out,
        cfg.env.obs_mode()?,
        cfg.action_repeat(),
        stats.episodes,
        &[
            SavedPart { tag: "", kind: "actor", net: &core.actor_net, params: &core.actor },
            SavedPart { tag: "", kind: "critic", net: &core.critic_net, params: &core.critic },
        ],
    )?;
    if !stats.eval_results.is_empty() {
        let results: Vec<(f64, bool)> =
            stats.eval_results.iter().map(|r| (r.episode_return as f64, r.fell)).collect();
        let summary = EvalSummary::from_episodes("remote", &results);
        write_eval_csv(&out.join("eval.csv"), &[summary])?;
    }
    writeln!(
        stdout,
        "learner done: {} episodes, {}/{} transitions admitted, {} updates",
        stats.episodes,
        stats.transitions_admitted,
        stats.transitions_received,
        stats.updates_performed,
    )?;
    Ok(())
}

/// Collects episodes with the configured exploration noise, streaming them
/// to the learner and refreshing weights between episodes.
pub fn cmd_sample(
    cfg: &ExperimentConfig,
    addr: Option<&str>,
    episodes: Option<u64>,
    shutdown: bool,
) -> Result<()> {
    require_ddpg(cfg, "sample")?;
    let mode = cfg.env.obs_mode()?;
    let seed = cfg.seeds.first().copied().unwrap_or(0);
    let a = &cfg.agent;
    let actor_hidden = a.actor_hidden.clone().unwrap_or_else(|| vec![64, 64]);
    let base = addr.unwrap_or(&cfg.cluster.addr);
    let scfg = SamplerConfig {
        addr: pick_addr(std::env::var(ADDR_ENV_VAR).ok(), base),
        actor: cfg.mlp_spec(
            mode.dim(),
            ACT_DIM,
            &actor_hidden,
            cfg.actor_activation()?,
            Activation::Tanh,
        ),
        obs_mode: mode,
        physics: cfg.env.physics(),
        difficulty: cfg.env.difficulty()?,
        episodes: episodes.or(cfg.budget.episodes).unwrap_or(20),
        max_episode_steps: cfg.env.max_episode_steps,
        action_repeat: cfg.action_repeat(),
        reward_scale: a.reward_scale.unwrap_or(1.0),
        warm_start: a.warm_start.unwrap_or(false),
        noise: cfg.noise.policy()?,
        ou: cfg.noise.ou(ACT_DIM)?,
        walk: cfg.noise.walk(ACT_DIM)?,
        param_noise_sigma: cfg.noise.param_sigma_init,
        seed,
        backoff: Backoff::default(),
    };
    let report = run_sampler(&scfg)?;
    println!(
        "sampler done: {} episodes, {} transitions, {} reconnects",
        report.episodes_sent, report.transitions_sent, report.reconnects
    );
    if shutdown {
        let mut link = TcpLink::new(scfg.addr.clone(), Backoff::default());
        link.send(&WireMessage::Shutdown)?;
    }
    Ok(())
}
