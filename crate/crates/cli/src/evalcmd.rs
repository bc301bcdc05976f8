//! Noise-free policy evaluation, including ensemble compositions over a
//! pool of checkpoints ("A10C10": ten actors propose, ten critics vote).

use crate::ckpt::{load_net, SavedNet, ACTOR_SUFFIX, CRITIC_SUFFIX};
use crate::config::EnvSettings;
use crate::metrics::{print_eval_summary, write_eval_csv, EvalSummary};
use crate::{CliError, Result};
use l2r_core::agents::{ace_select_action, squash};
use l2r_core::env::{ObsMode, ObsPipeline, SymRunner};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Composition {
    pub actors: usize,
    pub critics: usize,
}

/// "A3C2" -> 3 actor stems, 2 critic stems.
pub fn parse_composition(s: &str) -> Result<Composition> {
    let bad = || CliError::schema(format!("ensemble \"{s}\" is not of the form A<num>C<num>"));
    let rest = s.strip_prefix('A').ok_or_else(bad)?;
    let c_pos = rest.find('C').ok_or_else(bad)?;
    let actors: usize = rest[..c_pos].parse().map_err(|_| bad())?;
    let critics: usize = rest[c_pos + 1..].parse().map_err(|_| bad())?;
    if actors == 0 {
        return Err(CliError::schema("ensemble needs at least one actor"));
    }
    Ok(Composition { actors, critics })
}

/// Loaded checkpoints expanded into proposal/vote units: a multi-head net
/// contributes one unit per head, a plain net exactly one.
pub struct PolicyPool {
    actors: Vec<SavedNet>,
    critics: Vec<SavedNet>,
    actor_units: Vec<(usize, Option<usize>)>,
    critic_units: Vec<(usize, Option<usize>)>,
    pub obs_mode: ObsMode,
    pub action_repeat: u32,
    pub act_dim: usize,
}

fn units(nets: &[SavedNet]) -> Vec<(usize, Option<usize>)> {
    let mut out = Vec::new();
    for (i, saved) in nets.iter().enumerate() {
        match saved.net.n_heads() {
            0 => out.push((i, None)),
            k => out.extend((0..k).map(|h| (i, Some(h)))),
        }
    }
    out
}

pub fn load_pool(stems: &[std::path::PathBuf], comp: Composition) -> Result<PolicyPool> {
    if comp.actors > stems.len() || comp.critics > stems.len() {
        return Err(CliError::schema(format!(
            "composition A{}C{} needs more checkpoints than the {} given",
            comp.actors,
            comp.critics,
            stems.len()
        )));
    }
    let actors: Vec<SavedNet> =
        stems[..comp.actors].iter().map(|s| load_net(s, ACTOR_SUFFIX)).collect::<Result<_>>()?;
    let critics: Vec<SavedNet> =
        stems[..comp.critics].iter().map(|s| load_net(s, CRITIC_SUFFIX)).collect::<Result<_>>()?;

    let obs_mode = actors[0].arch.obs_mode()?;
    let action_repeat = actors[0].arch.action_repeat;
    let obs_dim = actors[0].net.input_dim();
    let act_dim = actors[0].net.out_dim();
    for a in &actors {
        if a.net.input_dim() != obs_dim || a.net.out_dim() != act_dim {
            return Err(CliError::checkpoint("actor pool mixes input or output widths"));
        }
        if a.arch.obs_mode()? != obs_mode || a.arch.action_repeat != action_repeat {
            return Err(CliError::checkpoint("actor pool mixes observation pipelines"));
        }
    }
    for c in &critics {
        if c.net.input_dim() != obs_dim + act_dim {
            return Err(CliError::checkpoint(format!(
                "critic expects input {} but the pool produces {}",
                c.net.input_dim(),
                obs_dim + act_dim
            )));
        }
    }
    if obs_dim != obs_mode.dim() {
        return Err(CliError::checkpoint(format!(
            "actor input {} does not match the {} observation width {}",
            obs_dim,
            actors[0].arch.observations,
            obs_mode.dim()
        )));
    }
    let actor_units = units(&actors);
    let critic_units = units(&critics);
    Ok(PolicyPool { actors, critics, actor_units, critic_units, obs_mode, action_repeat, act_dim })
}

impl PolicyPool {
    /// Deterministic ensemble action: every actor unit proposes, the mean
    /// critic vote picks the winner.
    pub fn act(&self, obs: &[f32]) -> Result<Vec<f32>> {
        let x: Vec<f64> = obs.iter().map(|&v| v as f64).collect();
        let mut proposals = Vec::with_capacity(self.actor_units.len());
        for &(i, head) in &self.actor_units {
            let saved = &self.actors[i];
            let y = saved.net.forward(&saved.params, &x, head)?;
            proposals.push(y.into_iter().map(squash).collect::<Vec<f64>>());
        }
        let (action, _) = ace_select_action(&proposals, self.critic_units.len(), |i, a| {
            let (net_idx, head) = self.critic_units[i];
            let saved = &self.critics[net_idx];
            let mut input = x.clone();
            input.extend_from_slice(a);
            Ok(saved.net.forward(&saved.params, &input, head)?[0])
        })?;
        Ok(action.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
    }
}

/// Per-episode (raw return, fell) pairs over consecutive seeds.
pub fn rollout_returns(
    pool: &PolicyPool,
    env_settings: &EnvSettings,
    episodes: u32,
    seed: u64,
) -> Result<Vec<(f64, bool)>> {
    let mut env = SymRunner::new(env_settings.physics(), env_settings.difficulty()?);
    let dt_frame = env_settings.physics().dt * pool.action_repeat as f64;
    let mut pipe = ObsPipeline::new(pool.obs_mode, dt_frame)?;
    let mut out = Vec::with_capacity(episodes as usize);
    for ep in 0..episodes as u64 {
        let raw = env.reset(seed.wrapping_add(ep));
        let mut s = pipe.reset(&raw);
        let mut ret = 0.0f64;
        let mut steps = 0u32;
        while !env.is_done() && steps < env_settings.max_episode_steps {
            let a = pool.act(&s)?;
            let step = env.step(&a, pool.action_repeat)?;
            ret += step.reward;
            s = pipe.push(&step.obs);
            steps += 1;
        }
        out.push((ret, env.state().fallen));
    }
    Ok(out)
}

pub fn cmd_eval(
    stems: &[std::path::PathBuf],
    ensemble: Option<&str>,
    episodes: u32,
    seed: u64,
    env_settings: &EnvSettings,
    out: Option<&Path>,
) -> Result<()> {
    let label = ensemble.unwrap_or("A1C0");
    let comp = parse_composition(label)?;
    let pool = load_pool(stems, comp)?;
    let results = rollout_returns(&pool, env_settings, episodes, seed)?;
    let summary = EvalSummary::from_episodes(label, &results);
    print_eval_summary(std::slice::from_ref(&summary));
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        write_eval_csv(&dir.join("eval.csv"), std::slice::from_ref(&summary))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn composition_notation_parses() {
        assert_eq!(parse_composition("A10C10").unwrap(), Composition { actors: 10, critics: 10 });
        assert_eq!(parse_composition("A1C0").unwrap(), Composition { actors: 1, critics: 0 });
        assert!(parse_composition("A0C3").is_err());
        assert!(parse_composition("10C10").is_err());
        assert!(parse_composition("AxCy").is_err());
        assert!(parse_composition("A2").is_err());
    }
}
