//! Pattern mining command: roll out a saved actor, binarize its actions,
//! and tabulate the distinct patterns.

use crate::ckpt::{load_net, ACTOR_SUFFIX};
use crate::config::EnvSettings;
use crate::metrics::write_patterns_csv;
use crate::{CliError, Result};
use l2r_core::agents::{mine_patterns, squash, FnPolicy};
use l2r_core::env::{ObsPipeline, SymRunner};
use std::path::Path;

pub fn cmd_mine(
    stem: &Path,
    episodes: u32,
    threshold: f64,
    seed: u64,
    env_settings: &EnvSettings,
    out: &Path,
) -> Result<()> {
    let actor = load_net(stem, ACTOR_SUFFIX)?;
    if actor.net.n_heads() != 0 {
        return Err(CliError::checkpoint("mining expects a single-headed actor"));
    }
    let mode = actor.arch.obs_mode()?;
    if actor.net.input_dim() != mode.dim() {
        return Err(CliError::checkpoint(format!(
            "actor input {} does not match the {} observation width {}",
            actor.net.input_dim(),
            actor.arch.observations,
            mode.dim()
        )));
    }
    let repeat = actor.arch.action_repeat;
    let mut env = SymRunner::new(env_settings.physics(), env_settings.difficulty()?);
    let mut pipe = ObsPipeline::new(mode, env_settings.physics().dt * repeat as f64)?;
    let mut policy = FnPolicy(|obs: &[f32]| {
        let x: Vec<f64> = obs.iter().map(|&v| v as f64).collect();
        let y = actor.net.forward(&actor.params, &x, None)?;
        Ok(y.into_iter().map(|v| squash(v) as f32).collect())
    });
    let table =
        mine_patterns(&mut policy, &mut env, &mut pipe, episodes as usize, repeat, seed, threshold)?;
    std::fs::create_dir_all(out)?;
    write_patterns_csv(&out.join("patterns.csv"), &table)?;
    println!(
        "{} patterns over {} steps, saturation {:.1}%",
        table.patterns.len(),
        table.total_steps,
        100.0 * table.saturation()
    );
    Ok(())
}
