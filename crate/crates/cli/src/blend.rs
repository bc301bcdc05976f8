//! Blending command: evaluate a fixed convex mix of two saved policies, or
//! the scheduled hand-over that walks from one to the other over n steps.

use crate::ckpt::{load_net, SavedNet, ACTOR_SUFFIX};
use crate::config::EnvSettings;
use crate::metrics::{print_eval_summary, write_eval_csv, EvalSummary};
use crate::{CliError, Result};
use l2r_core::agents::{blend_actions, squash, transition_alpha};
use l2r_core::env::{ObsPipeline, SymRunner};
use std::path::Path;

fn act(saved: &SavedNet, obs: &[f32]) -> Result<Vec<f32>> {
    let x: Vec<f64> = obs.iter().map(|&v| v as f64).collect();
    let y = saved.net.forward(&saved.params, &x, None)?;
    Ok(y.into_iter().map(|v| squash(v) as f32).collect())
}

/// Rolls episodes where the action at decision k is
/// `alpha(k) * pi + (1 - alpha(k)) * eta`.
fn blend_rollouts(
    pi: &SavedNet,
    eta: &SavedNet,
    env_settings: &EnvSettings,
    episodes: u32,
    seed: u64,
    mut alpha_at: impl FnMut(u32) -> Result<f64>,
) -> Result<Vec<(f64, bool)>> {
    let mode = pi.arch.obs_mode()?;
    let repeat = pi.arch.action_repeat;
    let mut env = SymRunner::new(env_settings.physics(), env_settings.difficulty()?);
    let mut pipe = ObsPipeline::new(mode, env_settings.physics().dt * repeat as f64)?;
    let mut out = Vec::with_capacity(episodes as usize);
    for ep in 0..episodes as u64 {
        let raw = env.reset(seed.wrapping_add(ep));
        let mut s = pipe.reset(&raw);
        let mut ret = 0.0f64;
        let mut k = 0u32;
        while !env.is_done() && k < env_settings.max_episode_steps {
            let a_pi = act(pi, &s)?;
            let a_eta = act(eta, &s)?;
            let a = blend_actions(&a_pi, &a_eta, alpha_at(k)?)?;
            let step = env.step(&a, repeat)?;
            ret += step.reward;
            s = pipe.push(&step.obs);
            k += 1;
        }
        out.push((ret, env.state().fallen));
    }
    Ok(out)
}

pub fn cmd_blend(
    pi_stem: &Path,
    eta_stem: &Path,
    alpha: Option<f64>,
    schedule: Option<u32>,
    episodes: u32,
    seed: u64,
    env_settings: &EnvSettings,
    out: Option<&Path>,
) -> Result<()> {
    let pi = load_net(pi_stem, ACTOR_SUFFIX)?;
    let eta = load_net(eta_stem, ACTOR_SUFFIX)?;
    if pi.net.out_dim() != eta.net.out_dim() {
        return Err(CliError::schema(format!(
            "action widths differ: {} vs {}",
            pi.net.out_dim(),
            eta.net.out_dim()
        )));
    }
    if pi.net.n_heads() != 0 || eta.net.n_heads() != 0 {
        return Err(CliError::checkpoint("blending expects single-headed actors"));
    }
    if pi.arch.obs_mode()? != eta.arch.obs_mode()? || pi.arch.action_repeat != eta.arch.action_repeat
    {
        return Err(CliError::checkpoint("blending policies from different pipelines"));
    }
    let (label, results) = match (alpha, schedule) {
        (Some(a), None) => {
            let r = blend_rollouts(&pi, &eta, env_settings, episodes, seed, |_| Ok(a))?;
            (format!("alpha={a}"), r)
        }
        (None, Some(n)) => {
            // Hand-over: eta carries weight 1-k/n early, pi takes over by
            // step n and keeps the episode afterwards.
            let r = blend_rollouts(&pi, &eta, env_settings, episodes, seed, move |k| {
                Ok(1.0 - transition_alpha(k.min(n), n)?)
            })?;
            (format!("schedule n={n}"), r)
        }
        _ => return Err(CliError::schema("pass exactly one of --alpha or --schedule")),
    };
    let summary = EvalSummary::from_episodes(&label, &results);
    print_eval_summary(std::slice::from_ref(&summary));
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        write_eval_csv(&dir.join("eval.csv"), std::slice::from_ref(&summary))?;
    }
    Ok(())
}
