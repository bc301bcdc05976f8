//! Bootstrapped actor/critic heads over shared bodies. Each episode trains
//! one uniformly drawn head on its own bootstrap mask; action selection sums
//! every critic head's value for every actor head's proposal and takes the
//! best column.

use super::ddpg::{DdpgConfig, DdpgCore, UpdateMetrics};
use super::squash;
use crate::env::observe::ObsPipeline;
use crate::env::SymRunner;
use crate::error::CoreError;
use crate::explore::OuNoise;
use crate::nn::{Activation, LayerSpec, LrSchedule, NetworkSpec};
use crate::replay::{ObsLayout, ReplayBuffer, Transition};
use crate::rng::SplitMix64;
use crate::Result;

#[derive(Debug, Clone)]
pub struct DbddpgConfig {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub n_heads: usize,
    pub shared_widths: Vec<usize>,
    pub head_widths: Vec<usize>,
    pub activation: Activation,
    pub gamma: f64,
    pub tau: f64,
    pub actor_lr: LrSchedule,
    pub critic_lr: LrSchedule,
    /// Episodes trained per head, cycling heads, before ensemble selection
    /// kicks in. Heads can instead be drawn at random during warm-up.
    pub warmup_episodes: usize,
    pub random_warmup: bool,
    pub action_repeat: u32,
    pub reward_scale: f32,
    pub seed: u64,
}

impl DbddpgConfig {
    pub fn new(obs_dim: usize, act_dim: usize, n_heads: usize) -> DbddpgConfig {
        DbddpgConfig {
            obs_dim,
            act_dim,
            n_heads,
            shared_widths: vec![128, 64],
            head_widths: vec![64, 32],
            activation: Activation::Elu,
            gamma: 0.99,
            tau: 1e-3,
            actor_lr: LrSchedule::Constant(1e-4),
            critic_lr: LrSchedule::Constant(3e-4),
            warmup_episodes: 20,
            random_warmup: false,
            action_repeat: 1,
            reward_scale: 1.0,
            seed: 0,
        }
    }

    fn ddpg_config(&self) -> DdpgConfig {
        let branch = |out_dim: usize, out_act: Activation| -> Vec<LayerSpec> {
            let mut layers: Vec<LayerSpec> =
                self.head_widths.iter().map(|&w| LayerSpec::dense(w, self.activation)).collect();
            layers.push(LayerSpec::dense(out_dim, out_act));
            layers
        };
        let body: Vec<LayerSpec> =
            self.shared_widths.iter().map(|&w| LayerSpec::dense(w, self.activation)).collect();
        DdpgConfig {
            actor: NetworkSpec::with_heads(
                self.obs_dim,
                body.clone(),
                vec![branch(self.act_dim, Activation::Tanh); self.n_heads],
            ),
            critic: NetworkSpec::with_heads(
                self.obs_dim + self.act_dim,
                body,
                vec![branch(1, Activation::Linear); self.n_heads],
            ),
            gamma: self.gamma,
            tau: self.tau,
            actor_lr: self.actor_lr,
            critic_lr: self.critic_lr,
            trot_repeats: 1,
            action_repeat: self.action_repeat,
            reward_scale: self.reward_scale,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DbddpgAgent {
    pub core: DdpgCore,
    pub n_heads: usize,
    pub active_head: usize,
    pub action_repeat: u32,
    pub reward_scale: f32,
    episodes_started: u64,
    warmup_episodes: usize,
    warmup_active: bool,
    random_warmup: bool,
    /// Head draws come from their own stream so a single-head agent consumes
    /// exactly the rng a plain DDPG run would.
    head_rng: SplitMix64,
}

impl DbddpgAgent {
    pub fn new(cfg: &DbddpgConfig) -> Result<DbddpgAgent> {
        if cfg.n_heads == 0 {
            return Err(CoreError::config("bootstrapped agent needs at least one head"));
        }
        let core = DdpgCore::new(&cfg.ddpg_config())?;
        Ok(DbddpgAgent {
            core,
            n_heads: cfg.n_heads,
            active_head: 0,
            action_repeat: cfg.action_repeat,
            reward_scale: cfg.reward_scale,
            episodes_started: 0,
            warmup_episodes: cfg.warmup_episodes,
            warmup_active: cfg.warmup_episodes > 0,
            random_warmup: cfg.random_warmup,
            head_rng: SplitMix64::new(cfg.seed ^ 0x68ea_dd7a_3b1c_55e9),
        })
    }

    pub fn in_warmup(&self) -> bool {
        self.warmup_active
    }

    /// Draws the episode's training head: warm-up cycles heads (or draws
    /// them, per config) until every head has had `warmup_episodes`, then
    /// heads come uniformly from the agent's own stream.
    pub fn begin_episode(&mut self) -> usize {
        let idx = self.episodes_started;
        self.episodes_started += 1;
        let warmup_total = (self.warmup_episodes * self.n_heads) as u64;
        self.warmup_active = idx < warmup_total;
        self.active_head = if self.warmup_active && !self.random_warmup {
            (idx % self.n_heads as u64) as usize
        } else {
            self.head_rng.below(self.n_heads as u64) as usize
        };
        self.active_head
    }

    /// Every actor head proposes; every critic head scores every proposal;
    /// the proposal with the highest column sum wins, lowest index on ties.
    pub fn ensemble_action(&self, obs: &[f32]) -> Result<(Vec<f32>, usize)> {
        let x: Vec<f64> = obs.iter().map(|&v| v as f64).collect();
        let proposals: Vec<Vec<f64>> = self
            .core
            .actor_net
            .forward_all_heads(&self.core.actor, &x)?
            .into_iter()
            .map(|y| y.into_iter().map(squash).collect())
            .collect();
        let mut col_sums = Vec::with_capacity(self.n_heads);
        for a in &proposals {
            let mut input = x.clone();
            input.extend_from_slice(a);
            let qs = self.core.critic_net.forward_all_heads(&self.core.critic, &input)?;
            col_sums.push(qs.iter().map(|q| q[0]).sum::<f64>());
        }
        let mut best = 0;
        for j in 1..col_sums.len() {
            if col_sums[j] > col_sums[best] {
                best = j;
            }
        }
        #[cfg(debug_assertions)]
        if self.n_heads <= 5 {
            self.assert_column_argmax(&x, &proposals, &col_sums, best)?;
        }
        Ok((proposals[best].iter().map(|&v| v as f32).collect(), best))
    }

    /// Exhaustive entrywise recomputation of the value matrix through
    /// single-head passes; the chosen column must attain the maximal sum.
    #[cfg(debug_assertions)]
    fn assert_column_argmax(
        &self,
        x: &[f64],
        proposals: &[Vec<f64>],
        col_sums: &[f64],
        best: usize,
    ) -> Result<()> {
        let mut brute = vec![0.0; self.n_heads];
        for (j, a) in proposals.iter().enumerate() {
            let mut input = x.to_vec();
            input.extend_from_slice(a);
            for i in 0..self.n_heads {
                brute[j] +=
                    self.core.critic_net.forward(&self.core.critic, &input, Some(i))?[0];
            }
        }
        debug_assert_eq!(col_sums, &brute[..]);
        debug_assert!(
            brute.iter().all(|&s| s <= brute[best]),
            "column {best} sum {} is not maximal in {brute:?}",
            brute[best]
        );
        Ok(())
    }

    /// Exploitation path for the running episode: plain active-head actions
    /// during warm-up, ensemble argmax afterwards.
    pub fn select_action(&self, obs: &[f32]) -> Result<(Vec<f32>, usize)> {
        if self.warmup_active {
            Ok((self.core.act_head(obs, Some(self.active_head))?, self.active_head))
        } else {
            self.ensemble_action(obs)
        }
    }

    /// Trains the active head (and shared bodies) only; per-sample loss
    /// terms are gated by each transition's mask entry for that head.
    pub fn update(&mut self, batch: &[Transition]) -> Result<UpdateMetrics> {
        self.core.update_head(batch, Some(self.active_head), None, 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeMetrics {
    pub return_raw: f64,
    pub distance: f64,
    pub steps: u32,
    pub updates: u32,
    pub head: usize,
    pub fell: bool,
}

/// One full training episode: draw the head, act with exploration noise,
/// store masked transitions, and update the active head once per step as
/// soon as the buffer can fill a batch.
pub fn dbddpg_run_episode(
    agent: &mut DbddpgAgent,
    env: &mut SymRunner,
    pipe: &mut ObsPipeline,
    noise: &mut OuNoise,
    replay: &mut ReplayBuffer,
    batch_size: usize,
    episode_seed: u64,
    rng: &mut SplitMix64,
    train: bool,
) -> Result<EpisodeMetrics> {
    if noise.dim() != agent.core.act_dim() {
        return Err(CoreError::config(format!(
            "noise dim {} != action dim {}",
            noise.dim(),
            agent.core.act_dim()
        )));
    }
    if batch_size == 0 {
        return Err(CoreError::config("batch_size must be positive"));
    }
    let head = agent.begin_episode();
    noise.reset_state();
    let layout = ObsLayout::for_mode(pipe.mode());
    let raw = env.reset(episode_seed);
    let mut s = pipe.reset(&raw);
    let mut metrics = EpisodeMetrics {
        return_raw: 0.0,
        distance: 0.0,
        steps: 0,
        updates: 0,
        head,
        fell: false,
    };
    while !env.is_done() {
        let (mut a, _) = agent.select_action(&s)?;
        for (ai, ni) in a.iter_mut().zip(noise.sample(rng)) {
            *ai = ((*ai as f64 + ni).clamp(0.0, 1.0)) as f32;
        }
        let out = env.step(&a, agent.action_repeat)?;
        let s_next = pipe.push(&out.obs);
        metrics.return_raw += out.reward;
        metrics.steps += 1;
        let t = Transition::new(
            std::mem::replace(&mut s, s_next.clone()),
            a,
            out.reward as f32 * agent.reward_scale,
            s_next,
            out.done,
            layout,
        );
        replay.push_episode(std::slice::from_ref(&t))?;
        if train && replay.len() >= batch_size {
            let batch = replay.sample_uniform(batch_size, false, rng)?;
            agent.update(&batch)?;
            metrics.updates += 1;
        }
    }
    metrics.distance = env.state().p_x;
    metrics.fell = env.state().fallen;
    Ok(metrics)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Difficulty, ObsMode, PhysicsConfig};

    fn tiny_cfg(k: usize, seed: u64) -> DbddpgConfig {
        let mut cfg = DbddpgConfig::new(3, 2, k);
        cfg.shared_widths = vec![16];
        cfg.head_widths = vec![8];
        cfg.activation = Activation::Relu;
        cfg.seed = seed;
        cfg
    }

    fn random_batch(n: usize, k: usize, seed: u64) -> Vec<Transition> {
        let mut rng = SplitMix64::new(seed);
        (0..n)
            .map(|_| {
                let mut t = Transition::new(
                    (0..3).map(|_| rng.uniform(-1.0, 1.0) as f32).collect(),
                    (0..2).map(|_| rng.uniform(0.0, 1.0) as f32).collect(),
                    rng.uniform(-1.0, 1.0) as f32,
                    (0..3).map(|_| rng.uniform(-1.0, 1.0) as f32).collect(),
                    rng.bernoulli(0.2),
                    ObsLayout::Flat(3),
                );
                t.mask = (0..k).map(|_| if rng.bernoulli(0.5) { 1.0 } else { 0.0 }).collect();
                t
            })
            .collect()
    }

    #[test]
    fn zero_heads_rejected() {
        assert!(DbddpgAgent::new(&tiny_cfg(0, 1)).is_err());
    }

    #[test]
    fn warmup_cycles_heads_then_draws() {
        let mut cfg = tiny_cfg(3, 5);
        cfg.warmup_episodes = 2;
        let mut agent = DbddpgAgent::new(&cfg).unwrap();
        let warm: Vec<usize> = (0..6).map(|_| agent.begin_episode()).collect();
        assert_eq!(warm, vec![0, 1, 2, 0, 1, 2]);
        assert!(agent.in_warmup());
        let mut seen = [false; 3];
        for _ in 0..60 {
            seen[agent.begin_episode()] = true;
            assert!(!agent.in_warmup());
        }
        assert!(seen.iter().all(|&s| s), "post-warmup draws missed a head: {seen:?}");
    }

    #[test]
    fn hand_built_linear_critics_pick_the_bruteforce_column() {
        // Scalar action, empty bodies: critic head i computes exactly c_i * a,
        // actor head j proposes a fixed a_j. The winning column of the 3x3
        // value matrix must match exhaustive evaluation.
        let mut cfg = DbddpgConfig::new(1, 1, 3);
        cfg.shared_widths = vec![];
        cfg.head_widths = vec![];
        let mut agent = DbddpgAgent::new(&cfg).unwrap();
        agent.warmup_active = false;
        let a_vals = [0.2f64, 0.9, 0.6];
        for (j, &a) in a_vals.iter().enumerate() {
            // squash(tanh(0*s + b)) = a  =>  b = atanh(2a - 1)
            let b = (2.0 * a - 1.0).atanh();
            let names = &mut agent.core.actor.arrays;
            names.iter_mut().find(|ar| ar.name == format!("head{j}.0.w")).unwrap().data =
                vec![0.0];
            names.iter_mut().find(|ar| ar.name == format!("head{j}.0.b")).unwrap().data =
                vec![b];
        }
        for cs in [[1.0f64, 2.0, -0.5], [-1.0, -1.0, -0.5]] {
            for (i, &c) in cs.iter().enumerate() {
                let arrays = &mut agent.core.critic.arrays;
                arrays.iter_mut().find(|ar| ar.name == format!("head{i}.0.w")).unwrap().data =
                    vec![0.0, c];
                arrays.iter_mut().find(|ar| ar.name == format!("head{i}.0.b")).unwrap().data =
                    vec![0.0];
            }
            let (action, chosen) = agent.ensemble_action(&[0.5]).unwrap();
            // Exhaustive matrix: q[i][j] = c_i * a_j, column sums over i.
            let sums: Vec<f64> = a_vals.iter().map(|a| cs.iter().sum::<f64>() * a).collect();
            let mut want = 0;
            for j in 1..3 {
                if sums[j] > sums[want] {
                    want = j;
                }
            }
            assert_eq!(chosen, want);
            assert!((action[0] as f64 - a_vals[want]).abs() < 1e-6);
        }
    }

    #[test]
    fn masked_out_batch_leaves_critic_untouched_but_actor_moves() {
        let mut agent = DbddpgAgent::new(&tiny_cfg(2, 9)).unwrap();
        agent.active_head = 0;
        let mut batch = random_batch(8, 2, 3);
        for t in &mut batch {
            t.mask = vec![0.0, 1.0];
        }
        let critic_before = agent.core.critic.clone();
        let actor_before = agent.core.actor.clone();
        let m = agent.update(&batch).unwrap();
        assert_eq!(m.critic_loss, 0.0);
        for (b, a) in critic_before.arrays.iter().zip(agent.core.critic.arrays.iter()) {
            assert_eq!(b.data, a.data, "critic array {} moved", b.name);
        }
        assert_ne!(actor_before, agent.core.actor);
    }

    #[test]
    fn update_trains_only_the_active_head_branch() {
        let mut agent = DbddpgAgent::new(&tiny_cfg(3, 13)).unwrap();
        agent.active_head = 1;
        let mut batch = random_batch(16, 3, 7);
        for t in &mut batch {
            t.mask = vec![1.0; 3];
        }
        let before = agent.core.critic.clone();
        agent.update(&batch).unwrap();
        for (b, a) in before.arrays.iter().zip(agent.core.critic.arrays.iter()) {
            let moved = b.data != a.data;
            let is_active_branch = a.name.starts_with("body.") || a.name.starts_with("head1.");
            assert_eq!(moved, is_active_branch, "array {}", a.name);
        }
    }

    #[test]
    fn single_head_matches_plain_ddpg_bitwise() {
        use crate::agents::ddpg::DdpgAgent;
        let k1 = tiny_cfg(1, 33);
        let mut boot = DbddpgAgent::new(&k1).unwrap();
        boot.warmup_active = false;
        let mut plain_cfg =
            DdpgConfig::mlp(3, 2, &[16, 8], &[16, 8], Activation::Relu);
        plain_cfg.seed = 33;
        let mut plain = DdpgAgent::new(plain_cfg).unwrap();
        for step in 0..60 {
            let mut batch = random_batch(8, 1, 100 + step);
            for t in &mut batch {
                t.mask = vec![1.0];
            }
            boot.update(&batch).unwrap();
            plain.update(&batch, None).unwrap();
        }
        for (b, p) in boot.core.critic.arrays.iter().zip(plain.core.critic.arrays.iter()) {
            let eq = b.data.iter().zip(p.data.iter()).all(|(x, y)| x.to_bits() == y.to_bits());
            assert!(eq, "critic array {} diverged from the plain run", b.name);
        }
        for (b, p) in boot.core.actor.arrays.iter().zip(plain.core.actor.arrays.iter()) {
            let eq = b.data.iter().zip(p.data.iter()).all(|(x, y)| x.to_bits() == y.to_bits());
            assert!(eq, "actor array {} diverged from the plain run", b.name);
        }
        let obs = [0.3f32, -0.4, 0.9];
        let (a_boot, _) = boot.ensemble_action(&obs).unwrap();
        let a_plain = plain.core.act_head(&obs, None).unwrap();
        assert_eq!(a_boot, a_plain);
    }

    #[test]
    fn run_episode_fills_replay_and_trains() {
        let mut cfg = tiny_cfg(2, 3);
        cfg.obs_dim = crate::env::observe::RAW_DIM;
        cfg.act_dim = 4;
        cfg.warmup_episodes = 1;
        let mut agent = DbddpgAgent::new(&cfg).unwrap();
        let mut env = SymRunner::new(PhysicsConfig::default(), Difficulty::default());
        let mut pipe = ObsPipeline::new(ObsMode::Raw, 0.01).unwrap();
        let mut noise = OuNoise::new(4, 0.15, 0.0, 0.2, 0.2, 0.01, 0).unwrap();
        let mut replay = ReplayBuffer::new(crate::replay::ReplayConfig {
            n_heads: 2,
            ..Default::default()
        })
        .unwrap();
        let mut rng = SplitMix64::new(40);
        let m =
            dbddpg_run_episode(&mut agent, &mut env, &mut pipe, &mut noise, &mut replay, 8, 77, &mut rng, true)
                .unwrap();
        assert!(m.steps > 0);
        assert_eq!(replay.len(), m.steps as usize);
        assert!(m.updates > 0);
        assert!(m.head < 2);
        assert_eq!(replay.get(0).unwrap().mask.len(), 2);
        // Same seeds, fresh everything: the episode replays identically.
        let mut agent2 = DbddpgAgent::new(&cfg).unwrap();
        let mut env2 = SymRunner::new(PhysicsConfig::default(), Difficulty::default());
        let mut pipe2 = ObsPipeline::new(ObsMode::Raw, 0.01).unwrap();
        let mut noise2 = OuNoise::new(4, 0.15, 0.0, 0.2, 0.2, 0.01, 0).unwrap();
        let mut replay2 = ReplayBuffer::new(crate::replay::ReplayConfig {
            n_heads: 2,
            ..Default::default()
        })
        .unwrap();
        let mut rng2 = SplitMix64::new(40);
        let m2 = dbddpg_run_episode(
            &mut agent2, &mut env2, &mut pipe2, &mut noise2, &mut replay2, 8, 77, &mut rng2, true,
        )
        .unwrap();
        assert_eq!(m, m2);
    }
}
