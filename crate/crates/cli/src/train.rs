//! Training loops behind `l2r train`, one per algorithm, sharing the
//! episode runner, budget accounting, metrics emission and checkpointing.

use crate::ckpt::{save_net, ArchFile, ACTOR_SUFFIX, CRITIC_SUFFIX};
use crate::config::{ExperimentConfig, LrSetting};
use crate::metrics::{read_patterns_csv, MetricsRow, MetricsWriter};
use crate::{CliError, Result};
use l2r_core::agents::{
    pattern_dqn_select, squash, DbddpgAgent, DbddpgConfig, DdpgAgent, DdpgConfig, DdpgCore,
    EnsembleAgent, EnsembleMode, PpoAgent, PpoConfig, RolloutStep, TwoStageFinetune,
};
use l2r_core::env::{shape_reward, ObsMode, ObsPipeline, ShapingConfig, SymRunner};
use l2r_core::explore::{ActionNoiseKind, EpisodeNoiseMode};
use l2r_core::nn::{Activation, LrSchedule, Net, NetworkParams};
use l2r_core::replay::{ObsLayout, ReplayBuffer, ReplayConfig, Transition};
use l2r_core::rng::SplitMix64;
use std::path::Path;
use std::time::Instant;

/// SymRunner's action width.
pub const ACT_DIM: usize = 4;

/// Evaluation cadence (in episodes) feeding the optimizer-switch rule.
const TWO_STAGE_EVAL_EVERY: u64 = 5;

const PARAM_SIGMA_MIN: f64 = 1e-6;
const PARAM_SIGMA_MAX: f64 = 1.0;
const PARAM_SIGMA_STEP: f64 = 1.01;

pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    if cfg.cluster.samplers > 0 {
        return Err(CliError::schema(
            "train runs in one process; start `serve` and `sample` for a cluster",
        ));
    }
    std::fs::create_dir_all(out)?;
    for &seed in &cfg.seeds {
        let dir =
            if cfg.seeds.len() == 1 { out.to_path_buf() } else { out.join(format!("seed{seed}")) };
        std::fs::create_dir_all(&dir)?;
        match cfg.algorithm {
            crate::config::Algorithm::Ddpg => train_ddpg(cfg, seed, &dir)?,
            crate::config::Algorithm::Ace => train_ace(cfg, seed, &dir)?,
            crate::config::Algorithm::Dbddpg => train_dbddpg(cfg, seed, &dir)?,
            crate::config::Algorithm::Ppo => train_ppo(cfg, seed, &dir)?,
            crate::config::Algorithm::PatternDqn => train_pattern_dqn(cfg, seed, &dir)?,
        }
    }
    Ok(())
}

/// Budget/metrics bookkeeping for one seed's run.
struct RunCtx {
    writer: MetricsWriter,
    start: Instant,
    episodes_budget: Option<u64>,
    steps_budget: Option<u64>,
    wall_budget: Option<f64>,
    ckpt_every: u64,
    episode: u64,
    env_steps: u64,
}

impl RunCtx {
    fn new(cfg: &ExperimentConfig, dir: &Path) -> Result<RunCtx> {
        let b = &cfg.budget;
        if b.episodes.is_none() && b.env_steps.is_none() && b.wall_seconds.is_none() {
            return Err(CliError::schema("budget needs episodes, env_steps or wall_seconds"));
        }
        if b.checkpoint_every == 0 {
            return Err(CliError::schema("budget.checkpoint_every must be positive"));
        }
        Ok(RunCtx {
            writer: MetricsWriter::create(&dir.join("metrics.csv"))?,
            start: Instant::now(),
            episodes_budget: b.episodes,
            steps_budget: b.env_steps,
            wall_budget: b.wall_seconds,
            ckpt_every: b.checkpoint_every,
            episode: 0,
            env_steps: 0,
        })
    }

    fn finished(&self) -> bool {
        if self.episodes_budget.is_some_and(|e| self.episode >= e) {
            return true;
        }
        if self.steps_budget.is_some_and(|s| self.env_steps >= s) {
            return true;
        }
        self.wall_budget.is_some_and(|w| self.start.elapsed().as_secs_f64() >= w)
    }

    /// Books one finished episode and appends its row.
    #[allow(clippy::too_many_arguments)]
    fn record(
        &mut self,
        steps: u32,
        return_raw: f64,
        return_shaped: f64,
        distance: f64,
        fell: bool,
        version: u64,
        noise_mode: &str,
        stage: &str,
    ) -> Result<()> {
        self.episode += 1;
        self.env_steps += steps as u64;
        self.writer.append(&MetricsRow {
            wall_seconds: self.start.elapsed().as_secs_f64(),
            episode: self.episode,
            env_steps: self.env_steps,
            return_raw,
            return_shaped,
            distance_m: distance,
            fell,
            weights_version: version,
            noise_mode: noise_mode.to_string(),
            stage: stage.to_string(),
        })
    }

    fn ckpt_due(&self) -> bool {
        self.episode % self.ckpt_every == 0
    }
}

pub(crate) struct SavedPart<'a> {
    pub tag: &'a str,
    pub kind: &'a str,
    pub net: &'a Net,
    pub params: &'a NetworkParams<f64>,
}

/// Numbered stem plus a refreshed `latest` stem for every part.
pub(crate) fn write_checkpoints(
    dir: &Path,
    mode: ObsMode,
    repeat: u32,
    episode: u64,
    parts: &[SavedPart],
) -> Result<()> {
    for base in [format!("ckpt_ep{episode:06}"), "latest".to_string()] {
        for p in parts {
            let stem = dir.join(format!("{base}{}", p.tag));
            let suffix = if p.kind == "actor" { ACTOR_SUFFIX } else { CRITIC_SUFFIX };
            let arch = ArchFile::from_spec(p.kind, mode, repeat, p.net.spec())?;
            save_net(&stem, suffix, &arch, p.params)?;
        }
    }
    Ok(())
}

fn noise_name(mode: EpisodeNoiseMode) -> &'static str {
    match mode {
        EpisodeNoiseMode::Off => "off",
        EpisodeNoiseMode::Action(ActionNoiseKind::Ou) => "ou",
        EpisodeNoiseMode::Action(ActionNoiseKind::CorrelatedGaussian) => "gaussian",
        EpisodeNoiseMode::Action(ActionNoiseKind::RandomWalk) => "walk",
        EpisodeNoiseMode::Parameter => "parameter",
    }
}

struct EpisodeOut {
    transitions: Vec<Transition>,
    return_raw: f64,
    return_shaped: f64,
    distance: f64,
    fell: bool,
    steps: u32,
}

/// Rolls one episode with `act(obs, step_idx)` supplying boxed actions.
/// Stored rewards are the shaped value scaled by `store_scale`.
#[allow(clippy::too_many_arguments)]
fn run_episode(
    env: &mut SymRunner,
    pipe: &mut ObsPipeline,
    layout: ObsLayout,
    repeat: u32,
    max_steps: u32,
    env_seed: u64,
    shaping: &ShapingConfig,
    store_scale: f32,
    mut act: impl FnMut(&[f32], u32) -> Result<Vec<f32>>,
) -> Result<EpisodeOut> {
    let raw = env.reset(env_seed);
    let mut s = pipe.reset(&raw);
    let mut out = EpisodeOut {
        transitions: Vec::new(),
        return_raw: 0.0,
        return_shaped: 0.0,
        distance: 0.0,
        fell: false,
        steps: 0,
    };
    let mut prev_state = env.state().clone();
    while !env.is_done() && out.steps < max_steps {
        let a = act(&s, out.steps)?;
        let step = env.step(&a, repeat)?;
        let next_state = env.state().clone();
        let shaped = shape_reward(step.reward, &prev_state, &next_state, shaping);
        let s_next = pipe.push(&step.obs);
        out.return_raw += shaped.raw;
        out.return_shaped += shaped.shaped;
        out.transitions.push(Transition::new(
            std::mem::replace(&mut s, s_next.clone()),
            a,
            shaped.shaped as f32 * store_scale,
            s_next,
            step.done,
            layout,
        ));
        prev_state = next_state;
        out.steps += 1;
    }
    out.distance = env.state().p_x;
    out.fell = env.state().fallen;
    Ok(out)
}

/// Plain noise-free rollout return, for plateau detection.
fn eval_return(
    core: &DdpgCore,
    env: &mut SymRunner,
    pipe: &mut ObsPipeline,
    repeat: u32,
    max_steps: u32,
    seed: u64,
) -> Result<f64> {
    let raw = env.reset(seed);
    let mut s = pipe.reset(&raw);
    let mut ret = 0.0;
    let mut k = 0;
    while !env.is_done() && k < max_steps {
        let a = core.act_head(&s, None)?;
        let step = env.step(&a, repeat)?;
        ret += step.reward;
        s = pipe.push(&step.obs);
        k += 1;
    }
    Ok(ret)
}

fn perturbed_params(
    base: &NetworkParams<f64>,
    sigma: f64,
    rng: &mut SplitMix64,
) -> NetworkParams<f64> {
    let mut p = base.clone();
    for arr in &mut p.arrays {
        for v in &mut arr.data {
            *v += sigma * rng.normal();
        }
    }
    p
}

/// Fixed stream layout per seed: 0 control/noise, 1 env seeds, 2 replay,
/// 3 agent init, 4 eval env seeds, 5 batch sampling.
pub(crate) struct Streams {
    pub control: SplitMix64,
    pub env_seeds: SplitMix64,
    pub replay_seed: u64,
    pub agent_seed: u64,
    pub eval_seeds: SplitMix64,
    pub train: SplitMix64,
}

impl Streams {
    pub fn new(seed: u64) -> Streams {
        let mut root = SplitMix64::new(seed);
        Streams {
            control: root.fork(0),
            env_seeds: root.fork(1),
            replay_seed: root.fork(2).next_u64(),
            agent_seed: root.fork(3).next_u64(),
            eval_seeds: root.fork(4),
            train: root.fork(5),
        }
    }
}

pub(crate) fn replay_config(cfg: &ExperimentConfig, n_heads: usize, seed: u64) -> ReplayConfig {
    ReplayConfig {
        capacity: cfg.replay.capacity,
        n_heads,
        p_mask: cfg.replay.p_mask,
        prioritized: cfg.replay.prioritized,
        admission: cfg.replay.admission(),
        seed,
    }
}

pub(crate) fn ddpg_config(cfg: &ExperimentConfig, seed: u64) -> Result<DdpgConfig> {
    let a = &cfg.agent;
    let obs_dim = cfg.env.obs_mode()?.dim();
    let actor_hidden = a.actor_hidden.clone().unwrap_or_else(|| vec![64, 64]);
    let critic_hidden = a.critic_hidden.clone().unwrap_or_else(|| vec![64, 32]);
    let dcfg = DdpgConfig {
        actor: cfg.mlp_spec(
            obs_dim,
            ACT_DIM,
            &actor_hidden,
            cfg.actor_activation()?,
            Activation::Tanh,
        ),
        critic: cfg.mlp_spec(
            obs_dim + ACT_DIM,
            1,
            &critic_hidden,
            cfg.critic_activation()?,
            Activation::Linear,
        ),
        gamma: a.gamma.unwrap_or(0.99),
        tau: a.tau.unwrap_or(1e-3),
        actor_lr: a.actor_lr.map(LrSetting::schedule).unwrap_or(LrSchedule::Constant(1e-4)),
        critic_lr: a.critic_lr.map(LrSetting::schedule).unwrap_or(LrSchedule::Constant(1e-3)),
        trot_repeats: a.trot_repeats.unwrap_or(1),
        action_repeat: cfg.action_repeat(),
        reward_scale: a.reward_scale.unwrap_or(1.0),
        seed,
    };
    dcfg.validate()?;
    Ok(dcfg)
}

fn train_ddpg(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> Result<()> {
    let mode = cfg.env.obs_mode()?;
    let repeat = cfg.action_repeat();
    let mut streams = Streams::new(seed);
    let mut agent = DdpgAgent::new(ddpg_config(cfg, streams.agent_seed)?)?;
    let mut replay = ReplayBuffer::new(replay_config(cfg, 1, streams.replay_seed))?;
    let shaping = cfg.shaping.config()?;
    let mut policy = cfg.noise.policy()?;
    let mut ou = cfg.noise.ou(ACT_DIM)?;
    let walk_proto = cfg.noise.walk(ACT_DIM)?;
    let mut param_sigma = cfg.noise.param_sigma_init;
    let mut two_stage = match &cfg.agent.two_stage {
        Some(ts) => Some(TwoStageFinetune::new(ts.eps, ts.window, ts.stage2_lr)?),
        None => None,
    };
    let batch = cfg.agent.batch_size.unwrap_or(64);
    let reflect = cfg.agent.reflect_augment.unwrap_or(false);
    let warm_start = cfg.agent.warm_start.unwrap_or(false);

    let mut env = SymRunner::new(cfg.env.physics(), cfg.env.difficulty()?);
    let mut pipe = ObsPipeline::new(mode, cfg.env.physics().dt * repeat as f64)?;
    let layout = ObsLayout::for_mode(mode);
    let mut run = RunCtx::new(cfg, dir)?;

    while !run.finished() {
        let ep_mode = policy.select_mode(&mut streams.control);
        let warm = if warm_start { 20 + streams.control.below(21) as u32 } else { 0 };
        let perturbed = match ep_mode {
            EpisodeNoiseMode::Parameter => {
                Some(perturbed_params(&agent.core.actor, param_sigma, &mut streams.control))
            }
            _ => None,
        };
        ou.reset_state();
        let mut walk = walk_proto.clone();
        let mut dist_sq = 0.0f64;
        let mut dist_steps = 0u64;
        let env_seed = streams.env_seeds.next_u64();

        let out = {
            let core = &agent.core;
            let control = &mut streams.control;
            run_episode(
                &mut env,
                &mut pipe,
                layout,
                repeat,
                cfg.env.max_episode_steps,
                env_seed,
                &shaping,
                agent.reward_scale,
                |s, k| {
                    if k < warm {
                        return Ok((0..ACT_DIM)
                            .map(|_| control.uniform(0.0, 1.0) as f32)
                            .collect());
                    }
                    match ep_mode {
                        EpisodeNoiseMode::Off => Ok(core.act_head(s, None)?),
                        EpisodeNoiseMode::Action(kind) => {
                            let clean = core.act_head(s, None)?;
                            let noise = match kind {
                                ActionNoiseKind::RandomWalk => {
                                    walk.as_mut().expect("walk noise configured").sample(control)
                                }
                                _ => ou.sample(control),
                            };
                            Ok(clean
                                .iter()
                                .zip(noise)
                                .map(|(&c, n)| ((c as f64 + n).clamp(0.0, 1.0)) as f32)
                                .collect())
                        }
                        EpisodeNoiseMode::Parameter => {
                            let x: Vec<f64> = s.iter().map(|&v| v as f64).collect();
                            let p = perturbed.as_ref().expect("perturbed params exist");
                            let noisy: Vec<f64> = core
                                .actor_net
                                .forward(p, &x, None)?
                                .into_iter()
                                .map(squash)
                                .collect();
                            let clean: Vec<f64> = core
                                .actor_net
                                .forward(&core.actor, &x, None)?
                                .into_iter()
                                .map(squash)
                                .collect();
                            let ms = noisy
                                .iter()
                                .zip(&clean)
                                .map(|(n, c)| (n - c) * (n - c))
                                .sum::<f64>()
                                / noisy.len() as f64;
                            dist_sq += ms;
                            dist_steps += 1;
                            Ok(noisy.into_iter().map(|v| v.clamp(0.0, 1.0) as f32).collect())
                        }
                    }
                },
            )?
        };

        // Action-space distance controls the parameter-noise scale: push
        // sigma toward matching the action noise level.
        if matches!(ep_mode, EpisodeNoiseMode::Parameter) && dist_steps > 0 {
            let d = (dist_sq / dist_steps as f64).sqrt();
            if d < ou.current_sigma() {
                param_sigma *= PARAM_SIGMA_STEP;
            } else {
                param_sigma /= PARAM_SIGMA_STEP;
            }
            param_sigma = param_sigma.clamp(PARAM_SIGMA_MIN, PARAM_SIGMA_MAX);
        }
        policy.schedule_step(0.0);

        replay.push_episode(&out.transitions)?;
        for _ in 0..out.transitions.len() {
            if replay.len() < batch {
                break;
            }
            if cfg.replay.prioritized {
                let (b, w, ids) = replay.sample_prioritized(
                    batch,
                    cfg.replay.alpha,
                    cfg.replay.beta,
                    &mut streams.train,
                )?;
                let m = agent.update(&b, Some(&w))?;
                replay.update_priorities(&ids, &m.td_errors)?;
            } else {
                let b = replay.sample_uniform(batch, reflect, &mut streams.train)?;
                agent.update(&b, None)?;
            }
        }

        let stage = match &two_stage {
            Some(ts) if ts.stage() == 2 => "sgd",
            _ => "adam",
        };
        run.record(
            out.steps,
            out.return_raw,
            out.return_shaped,
            out.distance,
            out.fell,
            agent.core.actor.version,
            noise_name(ep_mode),
            stage,
        )?;

        if let Some(ts) = &mut two_stage {
            if run.episode % TWO_STAGE_EVAL_EVERY == 0 {
                let r = eval_return(
                    &agent.core,
                    &mut env,
                    &mut pipe,
                    repeat,
                    cfg.env.max_episode_steps,
                    streams.eval_seeds.next_u64(),
                )?;
                ts.observe_and_apply(r, &mut agent.core);
            }
        }

        if run.ckpt_due() || run.finished() {
            write_checkpoints(
                dir,
                mode,
                repeat,
                run.episode,
                &[
                    SavedPart {
                        tag: "",
                        kind: "actor",
                        net: &agent.core.actor_net,
                        params: &agent.core.actor,
                    },
                    SavedPart {
                        tag: "",
                        kind: "critic",
                        net: &agent.core.critic_net,
                        params: &agent.core.critic,
                    },
                ],
            )?;
        }
    }
    Ok(())
}

fn train_ace(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> Result<()> {
    let mode = cfg.env.obs_mode()?;
    let repeat = cfg.action_repeat();
    let mut streams = Streams::new(seed);
    let n_pairs = cfg.agent.n_pairs.unwrap_or(2);
    let mut member_seeds = SplitMix64::new(streams.agent_seed);
    let pairs: Vec<DdpgCore> = (0..n_pairs)
        .map(|_| -> Result<DdpgCore> {
            Ok(DdpgCore::new(&ddpg_config(cfg, member_seeds.next_u64())?)?)
        })
        .collect::<Result<_>>()?;
    let mut ens = EnsembleAgent::new(pairs, n_pairs, EnsembleMode::Training)?;
    let mut replay = ReplayBuffer::new(replay_config(cfg, 1, streams.replay_seed))?;
    let shaping = cfg.shaping.config()?;
    let mut policy = cfg.noise.policy()?;
    let mut ou = cfg.noise.ou(ACT_DIM)?;
    let walk_proto = cfg.noise.walk(ACT_DIM)?;
    let batch = cfg.agent.batch_size.unwrap_or(64);
    let reflect = cfg.agent.reflect_augment.unwrap_or(false);
    let warm_start = cfg.agent.warm_start.unwrap_or(false);
    let store_scale = cfg.agent.reward_scale.unwrap_or(1.0);

    let mut env = SymRunner::new(cfg.env.physics(), cfg.env.difficulty()?);
    let mut pipe = ObsPipeline::new(mode, cfg.env.physics().dt * repeat as f64)?;
    let layout = ObsLayout::for_mode(mode);
    let mut run = RunCtx::new(cfg, dir)?;

    while !run.finished() {
        let ep_mode = policy.select_mode(&mut streams.control);
        let warm = if warm_start { 20 + streams.control.below(21) as u32 } else { 0 };
        ou.reset_state();
        let mut walk = walk_proto.clone();
        let env_seed = streams.env_seeds.next_u64();
        let out = {
            let ens = &ens;
            let control = &mut streams.control;
            run_episode(
                &mut env,
                &mut pipe,
                layout,
                repeat,
                cfg.env.max_episode_steps,
                env_seed,
                &shaping,
                store_scale,
                |s, k| {
                    if k < warm {
                        return Ok((0..ACT_DIM)
                            .map(|_| control.uniform(0.0, 1.0) as f32)
                            .collect());
                    }
                    let (clean, _) = ens.select_action(s)?;
                    match ep_mode {
                        EpisodeNoiseMode::Action(kind) => {
                            let noise = match kind {
                                ActionNoiseKind::RandomWalk => {
                                    walk.as_mut().expect("walk noise configured").sample(control)
                                }
                                _ => ou.sample(control),
                            };
                            Ok(clean
                                .iter()
                                .zip(noise)
                                .map(|(&c, n)| ((c as f64 + n).clamp(0.0, 1.0)) as f32)
                                .collect())
                        }
                        _ => Ok(clean),
                    }
                },
            )?
        };
        policy.schedule_step(0.0);

        replay.push_episode(&out.transitions)?;
        for _ in 0..out.transitions.len() {
            if replay.len() < batch {
                break;
            }
            let b = replay.sample_uniform(batch, reflect, &mut streams.train)?;
            ens.update_all(&b)?;
        }

        run.record(
            out.steps,
            out.return_raw,
            out.return_shaped,
            out.distance,
            out.fell,
            ens.pairs()[0].actor.version,
            noise_name(ep_mode),
            "adam",
        )?;

        if run.ckpt_due() || run.finished() {
            let tags: Vec<String> = (0..n_pairs).map(|m| format!("_m{m}")).collect();
            let mut parts = Vec::with_capacity(2 * n_pairs);
            for (m, pair) in ens.pairs().iter().enumerate() {
                parts.push(SavedPart {
                    tag: &tags[m],
                    kind: "actor",
                    net: &pair.actor_net,
                    params: &pair.actor,
                });
                parts.push(SavedPart {
                    tag: &tags[m],
                    kind: "critic",
                    net: &pair.critic_net,
                    params: &pair.critic,
                });
            }
            write_checkpoints(dir, mode, repeat, run.episode, &parts)?;
        }
    }
    Ok(())
}

fn train_dbddpg(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> Result<()> {
    let mode = cfg.env.obs_mode()?;
    let repeat = cfg.action_repeat();
    let a = &cfg.agent;
    let mut streams = Streams::new(seed);
    let n_heads = a.n_heads.unwrap_or(10);
    let mut dcfg = DbddpgConfig::new(mode.dim(), ACT_DIM, n_heads);
    if let Some(w) = &a.shared_hidden {
        dcfg.shared_widths = w.clone();
    }
    if let Some(w) = &a.head_hidden {
        dcfg.head_widths = w.clone();
    }
    dcfg.activation = cfg.actor_activation()?;
    dcfg.gamma = a.gamma.unwrap_or(0.99);
    dcfg.tau = a.tau.unwrap_or(1e-3);
    if let Some(lr) = a.actor_lr {
        dcfg.actor_lr = lr.schedule();
    }
    if let Some(lr) = a.critic_lr {
        dcfg.critic_lr = lr.schedule();
    }
    dcfg.warmup_episodes = a.warmup_episodes.unwrap_or(0);
    dcfg.action_repeat = repeat;
    dcfg.reward_scale = a.reward_scale.unwrap_or(1.0);
    dcfg.seed = streams.agent_seed;
    let mut agent = DbddpgAgent::new(&dcfg)?;

    let mut replay = ReplayBuffer::new(replay_config(cfg, n_heads, streams.replay_seed))?;
    let shaping = cfg.shaping.config()?;
    let mut ou = cfg.noise.ou(ACT_DIM)?;
    let batch = a.batch_size.unwrap_or(64);
    let reflect = a.reflect_augment.unwrap_or(false);

    let mut env = SymRunner::new(cfg.env.physics(), cfg.env.difficulty()?);
    let mut pipe = ObsPipeline::new(mode, cfg.env.physics().dt * repeat as f64)?;
    let layout = ObsLayout::for_mode(mode);
    let mut run = RunCtx::new(cfg, dir)?;

    while !run.finished() {
        let head = agent.begin_episode();
        ou.reset_state();
        let raw = env.reset(streams.env_seeds.next_u64());
        let mut s = pipe.reset(&raw);
        let mut prev_state = env.state().clone();
        let (mut ret_raw, mut ret_shaped) = (0.0f64, 0.0f64);
        let mut steps = 0u32;
        while !env.is_done() && steps < cfg.env.max_episode_steps {
            let (mut act, _) = agent.select_action(&s)?;
            for (ai, ni) in act.iter_mut().zip(ou.sample(&mut streams.control)) {
                *ai = ((*ai as f64 + ni).clamp(0.0, 1.0)) as f32;
            }
            let step = env.step(&act, repeat)?;
            let next_state = env.state().clone();
            let shaped = shape_reward(step.reward, &prev_state, &next_state, &shaping);
            let s_next = pipe.push(&step.obs);
            ret_raw += shaped.raw;
            ret_shaped += shaped.shaped;
            let t = Transition::new(
                std::mem::replace(&mut s, s_next.clone()),
                act,
                shaped.shaped as f32 * agent.reward_scale,
                s_next,
                step.done,
                layout,
            );
            replay.push_episode(std::slice::from_ref(&t))?;
            prev_state = next_state;
            steps += 1;
            if replay.len() < batch {
                continue;
            }
            if cfg.replay.prioritized {
                let (b, w, ids) = replay.sample_prioritized(
                    batch,
                    cfg.replay.alpha,
                    cfg.replay.beta,
                    &mut streams.train,
                )?;
                let m = agent.core.update_head(&b, Some(head), Some(&w), 1)?;
                replay.update_priorities(&ids, &m.td_errors)?;
            } else {
                let b = replay.sample_uniform(batch, reflect, &mut streams.train)?;
                agent.core.update_head(&b, Some(head), None, 1)?;
            }
        }

        let stage = if agent.in_warmup() { "warmup" } else { "train" };
        run.record(
            steps,
            ret_raw,
            ret_shaped,
            env.state().p_x,
            env.state().fallen,
            agent.core.actor.version,
            "ou",
            stage,
        )?;

        if run.ckpt_due() || run.finished() {
            write_checkpoints(
                dir,
                mode,
                repeat,
                run.episode,
                &[
                    SavedPart {
                        tag: "",
                        kind: "actor",
                        net: &agent.core.actor_net,
                        params: &agent.core.actor,
                    },
                    SavedPart {
                        tag: "",
                        kind: "critic",
                        net: &agent.core.critic_net,
                        params: &agent.core.critic,
                    },
                ],
            )?;
        }
    }
    Ok(())
}

fn train_ppo(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> Result<()> {
    let mode = cfg.env.obs_mode()?;
    let repeat = cfg.action_repeat();
    let a = &cfg.agent;
    let p = a.ppo.clone().unwrap_or_default();
    let mut streams = Streams::new(seed);
    let obs_dim = mode.dim();
    let policy_hidden = a.actor_hidden.clone().unwrap_or_else(|| vec![64, 64]);
    let value_hidden = a.critic_hidden.clone().unwrap_or_else(|| vec![64, 64]);
    let pcfg = PpoConfig {
        policy: cfg.mlp_spec(
            obs_dim,
            ACT_DIM,
            &policy_hidden,
            cfg.actor_activation()?,
            Activation::Tanh,
        ),
        value: cfg.mlp_spec(obs_dim, 1, &value_hidden, cfg.critic_activation()?, Activation::Linear),
        policy_lr: a.actor_lr.map(LrSetting::schedule).unwrap_or(LrSchedule::Constant(3e-4)),
        value_lr: a.critic_lr.map(LrSetting::schedule).unwrap_or(LrSchedule::Constant(1e-3)),
        gamma: a.gamma.unwrap_or(0.99),
        lam: p.lam,
        clip_eps: p.clip_eps,
        epochs: p.epochs,
        minibatch_size: p.minibatch_size,
        init_log_std: p.init_log_std,
        seed: streams.agent_seed,
    };
    pcfg.validate()?;
    let mut agent = PpoAgent::new(pcfg)?;
    let shaping = cfg.shaping.config()?;
    let store_scale = a.reward_scale.unwrap_or(1.0);

    let mut env = SymRunner::new(cfg.env.physics(), cfg.env.difficulty()?);
    let mut pipe = ObsPipeline::new(mode, cfg.env.physics().dt * repeat as f64)?;
    let mut run = RunCtx::new(cfg, dir)?;

    let mut rollout: Vec<RolloutStep> = Vec::with_capacity(p.horizon);
    let raw = env.reset(streams.env_seeds.next_u64());
    let mut s = pipe.reset(&raw);
    let mut prev_state = env.state().clone();
    let (mut ep_raw, mut ep_shaped) = (0.0f64, 0.0f64);
    let mut ep_steps = 0u32;
    let save = |agent: &PpoAgent, episode: u64| -> Result<()> {
        write_checkpoints(
            dir,
            mode,
            repeat,
            episode,
            &[SavedPart { tag: "", kind: "actor", net: &agent.policy_net, params: &agent.policy }],
        )
    };

    'outer: loop {
        while rollout.len() < p.horizon {
            let v = agent.state_value(&s)?;
            let (act, logp) = agent.sample_action(&s, &mut streams.control)?;
            let step = env.step(&act, repeat)?;
            let next_state = env.state().clone();
            let shaped = shape_reward(step.reward, &prev_state, &next_state, &shaping);
            let s_next = pipe.push(&step.obs);
            ep_raw += shaped.raw;
            ep_shaped += shaped.shaped;
            ep_steps += 1;
            rollout.push(RolloutStep {
                s: std::mem::replace(&mut s, s_next),
                a: act,
                r: shaped.shaped as f32 * store_scale,
                done: step.done,
                v,
                logp,
            });
            prev_state = next_state;
            if env.is_done() || ep_steps >= cfg.env.max_episode_steps {
                run.record(
                    ep_steps,
                    ep_raw,
                    ep_shaped,
                    env.state().p_x,
                    env.state().fallen,
                    agent.policy.version,
                    "gaussian",
                    "ppo",
                )?;
                if run.ckpt_due() {
                    save(&agent, run.episode)?;
                }
                if run.finished() {
                    break 'outer;
                }
                let raw = env.reset(streams.env_seeds.next_u64());
                s = pipe.reset(&raw);
                prev_state = env.state().clone();
                ep_raw = 0.0;
                ep_shaped = 0.0;
                ep_steps = 0;
            }
        }
        let tail = if rollout.last().is_some_and(|t| t.done) {
            0.0
        } else {
            agent.state_value(&s)?
        };
        agent.update(&rollout, tail, &mut streams.train)?;
        rollout.clear();
    }
    save(&agent, run.episode)?;
    Ok(())
}

fn train_pattern_dqn(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> Result<()> {
    let mode = cfg.env.obs_mode()?;
    let repeat = cfg.action_repeat();
    let a = &cfg.agent;
    let csv = a.patterns_csv.as_deref().expect("validated");
    let table = read_patterns_csv(Path::new(csv))?;
    if table.patterns.is_empty() {
        return Err(CliError::schema(format!("{csv} holds no patterns")));
    }
    if table.patterns[0].0.len() != ACT_DIM {
        return Err(CliError::schema(format!(
            "patterns are {} bits wide, the env takes {ACT_DIM}",
            table.patterns[0].0.len()
        )));
    }
    let top_m = a.top_m;
    let n_actions = top_m.unwrap_or(table.patterns.len()).min(table.patterns.len());
    let epsilon = a.epsilon.unwrap_or(0.1);
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(CliError::schema(format!("agent.epsilon {epsilon} not in [0,1]")));
    }
    let mut streams = Streams::new(seed);
    let mut core = DdpgCore::new(&ddpg_config(cfg, streams.agent_seed)?)?;
    let mut replay = ReplayBuffer::new(replay_config(cfg, 1, streams.replay_seed))?;
    let shaping = cfg.shaping.config()?;
    let batch = a.batch_size.unwrap_or(64);
    let store_scale = a.reward_scale.unwrap_or(1.0);
    let gamma = a.gamma.unwrap_or(0.99);

    let mut env = SymRunner::new(cfg.env.physics(), cfg.env.difficulty()?);
    let mut pipe = ObsPipeline::new(mode, cfg.env.physics().dt * repeat as f64)?;
    let layout = ObsLayout::for_mode(mode);
    let mut run = RunCtx::new(cfg, dir)?;

    // Greedy value over the playable patterns through the target critic.
    let max_q_target = |core: &DdpgCore, s_next: &[f32]| -> Result<f64> {
        let mut best = f64::NEG_INFINITY;
        for (pattern, _) in &table.patterns[..n_actions] {
            let mut x: Vec<f64> = s_next.iter().map(|&v| v as f64).collect();
            x.extend(pattern.iter().map(|&b| b as f64));
            let q = core.critic_net.forward(&core.critic_target, &x, None)?[0];
            best = best.max(q);
        }
        Ok(best)
    };

    while !run.finished() {
        let env_seed = streams.env_seeds.next_u64();
        let out = {
            let core_ref = &core;
            let control = &mut streams.control;
            let table = &table;
            run_episode(
                &mut env,
                &mut pipe,
                layout,
                repeat,
                cfg.env.max_episode_steps,
                env_seed,
                &shaping,
                store_scale,
                |s, _| {
                    if control.bernoulli(epsilon) {
                        let j = control.below(n_actions as u64) as usize;
                        return Ok(table.patterns[j].0.iter().map(|&b| b as f32).collect());
                    }
                    pattern_dqn_select(&core_ref.critic_net, &core_ref.critic, s, table, top_m)
                        .map_err(CliError::from)
                },
            )?
        };

        replay.push_episode(&out.transitions)?;
        for _ in 0..out.transitions.len() {
            if replay.len() < batch {
                break;
            }
            let b = replay.sample_uniform(batch, false, &mut streams.train)?;
            let mut ys = Vec::with_capacity(b.len());
            for t in &b {
                let bootstrap =
                    if t.done { 0.0 } else { gamma * max_q_target(&core, &t.s_next)? };
                ys.push(t.r as f64 + bootstrap);
            }
            core.critic_step(&b, None, &ys, None)?;
            core.soft_update_head(None)?;
        }

        run.record(
            out.steps,
            out.return_raw,
            out.return_shaped,
            out.distance,
            out.fell,
            core.critic.version,
            "epsilon",
            "dqn",
        )?;

        if run.ckpt_due() || run.finished() {
            write_checkpoints(
                dir,
                mode,
                repeat,
                run.episode,
                &[SavedPart {
                    tag: "",
                    kind: "critic",
                    net: &core.critic_net,
                    params: &core.critic,
                }],
            )?;
        }
    }
    Ok(())
}
