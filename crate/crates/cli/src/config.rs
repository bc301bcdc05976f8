//! Experiment configuration: strict JSON schemas (unknown keys are errors
//! naming the key), compiled-in presets, and the mapping onto core types.

use crate::{CliError, Result};
use l2r_core::env::{Difficulty, ObsMode, PhysicsConfig, ShapingConfig};
use l2r_core::explore::{ActionNoiseKind, NoisePolicy, OuNoise, RandomWalkNoise};
use l2r_core::nn::{Activation, LayerSpec, LrSchedule, NetworkSpec};
use l2r_core::replay::AdmissionRule;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Ddpg,
    Ace,
    Dbddpg,
    Ppo,
    PatternDqn,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Ddpg => "ddpg",
            Algorithm::Ace => "ace",
            Algorithm::Dbddpg => "dbddpg",
            Algorithm::Ppo => "ppo",
            Algorithm::PatternDqn => "pattern-dqn",
        }
    }
}

/// A learning rate is either a number or a linear ramp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum LrSetting {
    Constant(f64),
    Linear { start: f64, end: f64, steps: u64 },
}

impl LrSetting {
    pub fn schedule(self) -> LrSchedule {
        match self {
            LrSetting::Constant(v) => LrSchedule::Constant(v),
            LrSetting::Linear { start, end, steps } => LrSchedule::Linear { start, end, steps },
        }
    }
}

fn activation(name: &str) -> Result<Activation> {
    match name {
        "linear" => Ok(Activation::Linear),
        "relu" => Ok(Activation::Relu),
        "tanh" => Ok(Activation::Tanh),
        "sigmoid" => Ok(Activation::Sigmoid),
        "elu" => Ok(Activation::Elu),
        "selu" => Ok(Activation::Selu),
        other => Err(CliError::schema(format!("unknown activation \"{other}\""))),
    }
}

pub fn activation_name(a: Activation) -> &'static str {
    match a {
        Activation::Linear => "linear",
        Activation::Relu => "relu",
        Activation::Tanh => "tanh",
        Activation::Sigmoid => "sigmoid",
        Activation::Elu => "elu",
        Activation::Selu => "selu",
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSettings {
    #[serde(default = "d_obstacles")]
    pub obstacles: usize,
    #[serde(default)]
    pub ceiling_margin: f64,
    #[serde(default)]
    pub obstacle_free_probability: f64,
    /// "raw" or "enriched" (three stacked frames plus kinematics).
    #[serde(default = "d_observations")]
    pub observations: String,
    #[serde(default)]
    pub coarse_integrator: bool,
    #[serde(default = "d_max_steps")]
    pub max_episode_steps: u32,
}

fn d_obstacles() -> usize {
    3
}
fn d_observations() -> String {
    "raw".to_string()
}
fn d_max_steps() -> u32 {
    250
}

impl Default for EnvSettings {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty env settings")
    }
}

impl EnvSettings {
    pub fn difficulty(&self) -> Result<Difficulty> {
        if !(0.0..=1.0).contains(&self.obstacle_free_probability) {
            return Err(CliError::schema(format!(
                "env.obstacle_free_probability {} not in [0,1]",
                self.obstacle_free_probability
            )));
        }
        if self.ceiling_margin < 0.0 {
            return Err(CliError::schema("env.ceiling_margin must be >= 0"));
        }
        Ok(Difficulty {
            n_obstacles: self.obstacles,
            ceiling_margin: self.ceiling_margin,
            obstacle_free_probability: self.obstacle_free_probability,
        })
    }

    pub fn obs_mode(&self) -> Result<ObsMode> {
        match self.observations.as_str() {
            "raw" => Ok(ObsMode::Raw),
            "enriched" => Ok(ObsMode::Enriched),
            other => Err(CliError::schema(format!(
                "env.observations must be \"raw\" or \"enriched\", got \"{other}\""
            ))),
        }
    }

    pub fn physics(&self) -> PhysicsConfig {
        PhysicsConfig { integrator_coarse: self.coarse_integrator, ..PhysicsConfig::default() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoStageSettings {
    /// Plateau tolerance on the evaluation return.
    #[serde(default = "d_ts_eps")]
    pub eps: f64,
    /// Consecutive stalled evaluations before the optimizer switch.
    #[serde(default = "d_ts_window")]
    pub window: usize,
    #[serde(default = "d_ts_lr")]
    pub stage2_lr: f64,
}

fn d_ts_eps() -> f64 {
    0.5
}
fn d_ts_window() -> usize {
    5
}
fn d_ts_lr() -> f64 {
    l2r_core::agents::STAGE2_SGD_LR
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PpoSettings {
    #[serde(default = "d_clip")]
    pub clip_eps: f64,
    #[serde(default = "d_lam")]
    pub lam: f64,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_minibatch")]
    pub minibatch_size: usize,
    /// Steps collected per policy update.
    #[serde(default = "d_horizon")]
    pub horizon: usize,
    #[serde(default = "d_init_log_std")]
    pub init_log_std: f64,
}

fn d_clip() -> f64 {
    0.2
}
fn d_lam() -> f64 {
    0.95
}
fn d_epochs() -> usize {
    4
}
fn d_minibatch() -> usize {
    64
}
fn d_horizon() -> usize {
    1024
}
fn d_init_log_std() -> f64 {
    -0.5
}

impl Default for PpoSettings {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty ppo settings")
    }
}

/// Union of every algorithm's knobs; validation rejects settings that do not
/// apply to the configured algorithm.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSettings {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actor_hidden: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub critic_hidden: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actor_activation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub critic_activation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer_norm: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actor_lr: Option<LrSetting>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub critic_lr: Option<LrSetting>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_repeat: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward_scale: Option<f32>,
    /// Trot: feed each update through this many same-batch repeats at a
    /// tenth of the learning rate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trot_repeats: Option<usize>,
    /// Open episodes with 20..=40 uniform random actions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warm_start: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub two_stage: Option<TwoStageSettings>,
    /// Train on mirrored copies of sampled batches.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reflect_augment: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_heads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shared_hidden: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_hidden: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup_episodes: Option<usize>,
    /// Ensemble size for joint actor/critic training.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_pairs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ppo: Option<PpoSettings>,
    /// Mined pattern table driving the discrete-action agent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patterns_csv: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSettings {
    /// "ou", "gaussian" (time-correlated) or "walk" (clipped random walk).
    #[serde(default = "d_noise_kind")]
    pub kind: String,
    /// Share of episodes that perturb parameters instead of actions.
    #[serde(default)]
    pub p_parameter: f64,
    #[serde(default = "d_theta")]
    pub theta: f64,
    #[serde(default)]
    pub mu: f64,
    #[serde(default = "d_sigma")]
    pub sigma: f64,
    #[serde(default)]
    pub sigma_min: f64,
    #[serde(default = "d_dt")]
    pub dt: f64,
    #[serde(default)]
    pub decay_steps: u64,
    #[serde(default = "d_walk_sigma")]
    pub walk_step_sigma: f64,
    #[serde(default = "d_walk_clip")]
    pub walk_clip: f64,
    #[serde(default = "d_param_sigma")]
    pub param_sigma_init: f64,
    /// Episode-level scale decay for the on/off switching schedule.
    #[serde(default = "d_decay")]
    pub scale_decay: f64,
    #[serde(default)]
    pub off_below: f64,
    #[serde(default)]
    pub on_above: f64,
}

fn d_noise_kind() -> String {
    "ou".to_string()
}
fn d_theta() -> f64 {
    0.15
}
fn d_sigma() -> f64 {
    0.2
}
fn d_dt() -> f64 {
    1.0
}
fn d_walk_sigma() -> f64 {
    0.05
}
fn d_walk_clip() -> f64 {
    0.2
}
fn d_param_sigma() -> f64 {
    0.05
}
fn d_decay() -> f64 {
    1.0
}

impl Default for NoiseSettings {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty noise settings")
    }
}

impl NoiseSettings {
    pub fn action_kind(&self) -> Result<ActionNoiseKind> {
        match self.kind.as_str() {
            "ou" => Ok(ActionNoiseKind::Ou),
            "gaussian" => Ok(ActionNoiseKind::CorrelatedGaussian),
            "walk" => Ok(ActionNoiseKind::RandomWalk),
            other => Err(CliError::schema(format!(
                "noise.kind must be \"ou\", \"gaussian\" or \"walk\", got \"{other}\""
            ))),
        }
    }

    pub fn policy(&self) -> Result<NoisePolicy> {
        Ok(NoisePolicy::new(
            self.action_kind()?,
            1.0 - self.p_parameter,
            self.p_parameter,
            self.scale_decay,
            self.off_below,
            self.on_above,
            1.0,
        )?)
    }

    pub fn ou(&self, dim: usize) -> Result<OuNoise> {
        let ou = match self.action_kind()? {
            ActionNoiseKind::CorrelatedGaussian => {
                OuNoise::correlated_gaussian(dim, self.sigma, self.dt)?
            }
            _ => OuNoise::new(
                dim,
                self.theta,
                self.mu,
                self.sigma,
                self.sigma_min,
                self.dt,
                self.decay_steps,
            )?,
        };
        Ok(ou)
    }

    pub fn walk(&self, dim: usize) -> Result<Option<RandomWalkNoise>> {
        if self.action_kind()? == ActionNoiseKind::RandomWalk {
            Ok(Some(RandomWalkNoise::new(dim, self.walk_step_sigma, self.walk_clip)?))
        } else {
            Ok(None)
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplaySettings {
    #[serde(default = "d_capacity")]
    pub capacity: usize,
    #[serde(default)]
    pub prioritized: bool,
    #[serde(default = "d_alpha")]
    pub alpha: f64,
    #[serde(default = "d_beta")]
    pub beta: f64,
    /// Bernoulli mask probability for bootstrapped heads.
    #[serde(default = "d_p_mask")]
    pub p_mask: f64,
    /// Admit an episode only when its return ranks in this top fraction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_fraction: Option<f64>,
    /// Admit only steps with reward at or above this bound.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_step_reward: Option<f32>,
}

fn d_capacity() -> usize {
    1_000_000
}
fn d_alpha() -> f64 {
    0.6
}
fn d_beta() -> f64 {
    0.4
}
fn d_p_mask() -> f64 {
    0.5
}

impl Default for ReplaySettings {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty replay settings")
    }
}

impl ReplaySettings {
    pub fn admission(&self) -> AdmissionRule {
        AdmissionRule { top_fraction: self.top_fraction, min_step_reward: self.min_step_reward }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapingSettings {
    #[serde(default)]
    pub velocity_reward: bool,
    #[serde(default = "d_step_bonus")]
    pub step_bonus: f64,
    #[serde(default)]
    pub knee_bonus_weight: f64,
    #[serde(default = "d_knee_lo")]
    pub knee_low: f64,
    #[serde(default = "d_knee_hi")]
    pub knee_high: f64,
    #[serde(default)]
    pub straight_leg_penalty_weight: f64,
    #[serde(default)]
    pub lean_penalty_weight: f64,
    #[serde(default)]
    pub fall_penalty: f64,
    #[serde(default = "d_shape_scale")]
    pub reward_scale: f64,
}

fn d_step_bonus() -> f64 {
    0.01
}
fn d_knee_lo() -> f64 {
    0.3
}
fn d_knee_hi() -> f64 {
    1.2
}
fn d_shape_scale() -> f64 {
    1.0
}

impl Default for ShapingSettings {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty shaping settings")
    }
}

impl ShapingSettings {
    pub fn config(&self) -> Result<ShapingConfig> {
        let cfg = ShapingConfig {
            velocity_reward: self.velocity_reward,
            step_bonus: self.step_bonus,
            knee_bonus_weight: self.knee_bonus_weight,
            knee_interval: (self.knee_low, self.knee_high),
            straight_leg_penalty_weight: self.straight_leg_penalty_weight,
            lean_penalty_weight: self.lean_penalty_weight,
            fall_penalty: self.fall_penalty,
            reward_scale: self.reward_scale,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSettings {
    /// 0 runs everything in this process.
    #[serde(default)]
    pub samplers: usize,
    #[serde(default = "d_addr")]
    pub addr: String,
    #[serde(default = "d_spu")]
    pub steps_per_update: u32,
    #[serde(default = "d_queue")]
    pub queue_depth: usize,
}

fn d_addr() -> String {
    "127.0.0.1:0".to_string()
}
fn d_spu() -> u32 {
    1
}
fn d_queue() -> usize {
    64
}

impl Default for ClusterSettings {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty cluster settings")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSettings {
    #[serde(default = "d_episodes")]
    pub episodes: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub env_steps: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_seconds: Option<f64>,
    /// Checkpoint cadence in episodes; a final checkpoint always lands.
    #[serde(default = "d_ckpt_every")]
    pub checkpoint_every: u64,
}

fn d_episodes() -> Option<u64> {
    Some(20)
}
fn d_ckpt_every() -> u64 {
    10
}

impl Default for BudgetSettings {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty budget settings")
    }
}

fn d_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    #[serde(default)]
    pub env: EnvSettings,
    #[serde(default)]
    pub agent: AgentSettings,
    #[serde(default)]
    pub noise: NoiseSettings,
    #[serde(default)]
    pub replay: ReplaySettings,
    #[serde(default)]
    pub shaping: ShapingSettings,
    #[serde(default)]
    pub cluster: ClusterSettings,
    #[serde(default = "d_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub budget: BudgetSettings,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| CliError::schema(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Rejects agent settings that do not belong to the configured
    /// algorithm, so typos and misplaced keys fail loudly.
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(CliError::schema("seeds must not be empty"));
        }
        self.env.difficulty()?;
        self.env.obs_mode()?;
        self.noise.policy()?;
        self.shaping.config()?;
        let a = &self.agent;
        let mut misplaced: Vec<&str> = Vec::new();
        let ddpg_like = matches!(self.algorithm, Algorithm::Ddpg | Algorithm::Ace);
        if !matches!(self.algorithm, Algorithm::Dbddpg) {
            if a.n_heads.is_some() {
                misplaced.push("agent.n_heads");
            }
            if a.shared_hidden.is_some() {
                misplaced.push("agent.shared_hidden");
            }
            if a.head_hidden.is_some() {
                misplaced.push("agent.head_hidden");
            }
            if a.warmup_episodes.is_some() {
                misplaced.push("agent.warmup_episodes");
            }
        }
        if !matches!(self.algorithm, Algorithm::Ppo) {
            if a.ppo.is_some() {
                misplaced.push("agent.ppo");
            }
        }
        if !matches!(self.algorithm, Algorithm::PatternDqn) {
            if a.patterns_csv.is_some() {
                misplaced.push("agent.patterns_csv");
            }
            if a.top_m.is_some() {
                misplaced.push("agent.top_m");
            }
            if a.epsilon.is_some() {
                misplaced.push("agent.epsilon");
            }
        }
        if !matches!(self.algorithm, Algorithm::Ace) && a.n_pairs.is_some() {
            misplaced.push("agent.n_pairs");
        }
        if !ddpg_like {
            if a.trot_repeats.is_some() {
                misplaced.push("agent.trot_repeats");
            }
            if a.two_stage.is_some() {
                misplaced.push("agent.two_stage");
            }
        }
        if matches!(self.algorithm, Algorithm::Ppo) {
            for (set, name) in [
                (a.tau.is_some(), "agent.tau"),
                (a.batch_size.is_some(), "agent.batch_size"),
                (a.warm_start.is_some(), "agent.warm_start"),
                (a.reflect_augment.is_some(), "agent.reflect_augment"),
                (a.trot_repeats.is_some(), "agent.trot_repeats"),
                (a.two_stage.is_some(), "agent.two_stage"),
            ] {
                if set {
                    misplaced.push(name);
                }
            }
        }
        if let Some(field) = misplaced.first() {
            return Err(CliError::schema(format!(
                "{field} does not apply to algorithm \"{}\"",
                self.algorithm.name()
            )));
        }
        if let Some(g) = a.gamma {
            if !(0.0..1.0).contains(&g) {
                return Err(CliError::schema(format!("agent.gamma {g} not in [0,1)")));
            }
        }
        if self.cluster.samplers > 0 && !matches!(self.algorithm, Algorithm::Ddpg) {
            return Err(CliError::schema(
                "cluster.samplers > 0 is only supported for algorithm \"ddpg\"",
            ));
        }
        if matches!(self.algorithm, Algorithm::Ace) && self.noise.p_parameter > 0.0 {
            return Err(CliError::schema(
                "noise.p_parameter applies to a single actor; ensembles take action noise only",
            ));
        }
        if self.replay.prioritized
            && !matches!(self.algorithm, Algorithm::Ddpg | Algorithm::Dbddpg)
        {
            return Err(CliError::schema(format!(
                "replay.prioritized is not supported for algorithm \"{}\"",
                self.algorithm.name()
            )));
        }
        if a.reflect_augment == Some(true) && self.replay.prioritized {
            return Err(CliError::schema(
                "agent.reflect_augment needs uniform sampling; disable replay.prioritized",
            ));
        }
        if matches!(self.algorithm, Algorithm::PatternDqn) {
            if a.patterns_csv.is_none() {
                return Err(CliError::schema("agent.patterns_csv is required for pattern-dqn"));
            }
            for (set, name) in [
                (a.warm_start.is_some(), "agent.warm_start"),
                (a.reflect_augment.is_some(), "agent.reflect_augment"),
            ] {
                if set {
                    return Err(CliError::schema(format!(
                        "{name} does not apply to algorithm \"pattern-dqn\""
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn mlp_spec(
        &self,
        input_dim: usize,
        out_dim: usize,
        hidden: &[usize],
        hidden_act: Activation,
        out_act: Activation,
    ) -> NetworkSpec {
        let ln = self.agent.layer_norm.unwrap_or(false);
        let mut layers: Vec<LayerSpec> = hidden
            .iter()
            .map(|&w| {
                if ln {
                    LayerSpec::dense_ln(w, hidden_act)
                } else {
                    LayerSpec::dense(w, hidden_act)
                }
            })
            .collect();
        layers.push(LayerSpec::dense(out_dim, out_act));
        NetworkSpec::plain(input_dim, layers)
    }

    pub fn actor_activation(&self) -> Result<Activation> {
        let name = self
            .agent
            .actor_activation
            .as_deref()
            .or(self.agent.activation.as_deref())
            .unwrap_or("relu");
        activation(name)
    }

    pub fn critic_activation(&self) -> Result<Activation> {
        let name = self
            .agent
            .critic_activation
            .as_deref()
            .or(self.agent.activation.as_deref())
            .unwrap_or("relu");
        activation(name)
    }

    pub fn action_repeat(&self) -> u32 {
        self.agent.action_repeat.unwrap_or(4)
    }
}

/// Built-in presets. Values are the published settings of the four teams
/// the presets are named after.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let text = match name {
        "pku" => {
            r#"{
                "algorithm": "ddpg",
                "agent": {
                    "actor_hidden": [800, 400],
                    "critic_hidden": [800, 400],
                    "activation": "selu",
                    "actor_lr": 3e-4,
                    "critic_lr": 3e-4,
                    "batch_size": 128,
                    "gamma": 0.96,
                    "action_repeat": 4
                },
                "replay": { "capacity": 2000000 }
            }"#
        }
        "reason8" => {
            r#"{
                "algorithm": "ddpg",
                "agent": {
                    "actor_hidden": [64, 64],
                    "actor_activation": "elu",
                    "critic_hidden": [64, 32],
                    "critic_activation": "tanh",
                    "layer_norm": true,
                    "actor_lr": { "start": 1e-3, "end": 5e-5, "steps": 10000000 },
                    "critic_lr": { "start": 2e-3, "end": 5e-5, "steps": 10000000 },
                    "batch_size": 200,
                    "gamma": 0.9,
                    "reward_scale": 10.0,
                    "action_repeat": 5,
                    "reflect_augment": true
                },
                "noise": {
                    "kind": "ou",
                    "p_parameter": 0.3,
                    "theta": 0.1,
                    "mu": 0.0,
                    "sigma": 0.2,
                    "sigma_min": 0.05,
                    "dt": 1e-2,
                    "decay_steps": 1000000
                },
                "replay": { "capacity": 5000000 }
            }"#
        }
        "dbddpg" => {
            r#"{
                "algorithm": "dbddpg",
                "agent": {
                    "n_heads": 10,
                    "shared_hidden": [128, 64],
                    "head_hidden": [64, 32],
                    "activation": "elu",
                    "actor_lr": 1e-4,
                    "critic_lr": 3e-4,
                    "gamma": 0.99,
                    "tau": 1e-3,
                    "batch_size": 64,
                    "action_repeat": 4,
                    "warmup_episodes": 10
                },
                "shaping": { "velocity_reward": true, "step_bonus": 0.0 },
                "replay": { "prioritized": true }
            }"#
        }
        "anton" => {
            r#"{
                "algorithm": "ddpg",
                "env": { "obstacle_free_probability": 0.3, "observations": "enriched" },
                "agent": {
                    "actor_hidden": [512, 512, 512, 512, 512],
                    "critic_hidden": [512, 512, 512, 512, 512],
                    "activation": "relu",
                    "actor_lr": 1e-4,
                    "critic_lr": 1e-4,
                    "batch_size": 64,
                    "gamma": 0.99,
                    "warm_start": true,
                    "two_stage": { "stage2_lr": 5e-5 }
                },
                "replay": { "capacity": 1000000 }
            }"#
        }
        other => {
            return Err(CliError::schema(format!(
                "unknown preset \"{other}\" (have pku, reason8, dbddpg, anton)"
            )))
        }
    };
    ExperimentConfig::from_json(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_key_is_rejected_by_name() {
        let err = ExperimentConfig::from_json(r#"{"algorithm":"ddpg","agent":{"gama":0.9}}"#)
            .unwrap_err();
        assert!(err.to_string().contains("gama"), "{err}");
    }

    #[test]
    fn reason8_preset_loads_the_published_values() {
        let cfg = preset("reason8").unwrap();
        assert_eq!(cfg.agent.gamma, Some(0.9));
        assert_eq!(cfg.replay.capacity, 5_000_000);
        assert_eq!(cfg.noise.theta, 0.1);
        assert_eq!(cfg.noise.sigma, 0.2);
        assert_eq!(cfg.noise.sigma_min, 0.05);
        assert_eq!(cfg.noise.p_parameter, 0.3);
        assert_eq!(cfg.agent.reward_scale, Some(10.0));
        assert_eq!(cfg.agent.action_repeat, Some(5));
        assert_eq!(cfg.agent.batch_size, Some(200));
        assert_eq!(
            cfg.agent.actor_lr,
            Some(LrSetting::Linear { start: 1e-3, end: 5e-5, steps: 10_000_000 })
        );
        assert_eq!(
            cfg.agent.critic_lr,
            Some(LrSetting::Linear { start: 2e-3, end: 5e-5, steps: 10_000_000 })
        );
    }

    #[test]
    fn pku_and_dbddpg_and_anton_presets_load() {
        let pku = preset("pku").unwrap();
        assert_eq!(pku.agent.actor_hidden, Some(vec![800, 400]));
        assert_eq!(pku.agent.gamma, Some(0.96));
        assert_eq!(pku.replay.capacity, 2_000_000);

        let db = preset("dbddpg").unwrap();
        assert_eq!(db.agent.n_heads, Some(10));
        assert_eq!(db.agent.tau, Some(1e-3));
        assert!(db.replay.prioritized);

        let anton = preset("anton").unwrap();
        assert_eq!(anton.agent.batch_size, Some(64));
        assert_eq!(anton.replay.capacity, 1_000_000);
        assert_eq!(anton.env.obstacle_free_probability, 0.3);
        assert_eq!(anton.agent.warm_start, Some(true));
    }

    #[test]
    fn misplaced_fields_name_their_path() {
        let err =
            ExperimentConfig::from_json(r#"{"algorithm":"ppo","agent":{"n_heads":4}}"#)
                .unwrap_err();
        assert!(err.to_string().contains("agent.n_heads"), "{err}");
        let err =
            ExperimentConfig::from_json(r#"{"algorithm":"ddpg","agent":{"top_m":4}}"#)
                .unwrap_err();
        assert!(err.to_string().contains("agent.top_m"), "{err}");
    }

    #[test]
    fn lr_settings_accept_numbers_and_ramps() {
        let cfg = ExperimentConfig::from_json(
            r#"{"algorithm":"ddpg","agent":{"actor_lr":0.001,
                "critic_lr":{"start":0.002,"end":5e-5,"steps":100}}}"#,
        )
        .unwrap();
        assert_eq!(cfg.agent.actor_lr.unwrap().schedule(), LrSchedule::Constant(0.001));
        assert_eq!(
            cfg.agent.critic_lr.unwrap().schedule(),
            LrSchedule::Linear { start: 0.002, end: 5e-5, steps: 100 }
        );
    }
}
