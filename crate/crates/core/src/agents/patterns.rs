//! Binary action-pattern mining from saturated actors, and critic-scored
//! pattern selection at decision time.

use super::Policy;
use crate::env::observe::ObsPipeline;
use crate::env::SymRunner;
use crate::error::CoreError;
use crate::nn::{Net, NetworkParams};
use crate::Result;
use std::collections::HashMap;

/// Components this close to 0 or 1 count as saturated.
const SATURATION_TOL: f64 = 0.05;

/// Unique binarized action patterns with occurrence counts, sorted by count
/// descending (ties by pattern bits ascending, for stable output).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternTable {
    pub patterns: Vec<(Vec<u8>, u64)>,
    pub total_steps: u64,
    /// Diagnostic: share of raw action components within 0.05 of 0 or 1.
    /// NaN-free; 0 when nothing saturates.
    pub saturation_bits: u64,
}

impl PatternTable {
    pub fn saturation(&self) -> f64 {
        let dims: u64 =
            self.total_steps * self.patterns.first().map_or(0, |(p, _)| p.len() as u64);
        if dims == 0 {
            0.0
        } else {
            self.saturation_bits as f64 / dims as f64
        }
    }

    /// Occurrence frequencies in percent, aligned with `patterns`.
    pub fn frequencies_percent(&self) -> Vec<f64> {
        self.patterns
            .iter()
            .map(|&(_, c)| 100.0 * c as f64 / self.total_steps as f64)
            .collect()
    }
}

/// Rolls out a deterministic policy and tallies its actions binarized at
/// `threshold`. The raw (unbinarized) action is what drives the simulator.
pub fn mine_patterns(
    policy: &mut dyn Policy,
    env: &mut SymRunner,
    pipe: &mut ObsPipeline,
    episodes: usize,
    action_repeat: u32,
    seed_base: u64,
    threshold: f64,
) -> Result<PatternTable> {
    if episodes == 0 {
        return Err(CoreError::config("mining needs at least one episode"));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(CoreError::config(format!("binarize threshold {threshold} not in (0,1)")));
    }
    let mut counts: HashMap<Vec<u8>, u64> = HashMap::new();
    let mut total_steps = 0u64;
    let mut saturation_bits = 0u64;
    for ep in 0..episodes {
        let raw = env.reset(seed_base.wrapping_add(ep as u64));
        let mut s = pipe.reset(&raw);
        while !env.is_done() {
            let a = policy.act(&s)?;
            let pattern: Vec<u8> =
                a.iter().map(|&v| u8::from(v as f64 >= threshold)).collect();
            saturation_bits += a
                .iter()
                .filter(|&&v| {
                    let v = v as f64;
                    v.abs() <= SATURATION_TOL || (v - 1.0).abs() <= SATURATION_TOL
                })
                .count() as u64;
            *counts.entry(pattern).or_insert(0) += 1;
            total_steps += 1;
            let out = env.step(&a, action_repeat)?;
            s = pipe.push(&out.obs);
        }
    }
    let mut patterns: Vec<(Vec<u8>, u64)> = counts.into_iter().collect();
    patterns.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(PatternTable { patterns, total_steps, saturation_bits })
}

/// Scores stored patterns with Q(s, pattern) and returns the best one as an
/// action. `top_m` restricts the search to the most frequent entries; ties
/// go to the more frequent pattern.
pub fn pattern_dqn_select(
    critic_net: &Net,
    critic: &NetworkParams<f64>,
    obs: &[f32],
    table: &PatternTable,
    top_m: Option<usize>,
) -> Result<Vec<f32>> {
    if table.patterns.is_empty() {
        return Err(CoreError::contract("pattern table is empty"));
    }
    if top_m == Some(0) {
        return Err(CoreError::config("top_m must be positive"));
    }
    let m = top_m.unwrap_or(table.patterns.len()).min(table.patterns.len());
    let mut best = 0;
    let mut best_q = f64::NEG_INFINITY;
    for (j, (pattern, _)) in table.patterns[..m].iter().enumerate() {
        let mut x: Vec<f64> = obs.iter().map(|&v| v as f64).collect();
        x.extend(pattern.iter().map(|&b| b as f64));
        let q = critic_net.forward(critic, &x, None)?[0];
        if j == 0 || q > best_q {
            best = j;
            best_q = q;
        }
    }
    Ok(table.patterns[best].0.iter().map(|&b| b as f32).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::FnPolicy;
    use crate::env::observe::ObsMode;
    use crate::env::{Difficulty, PhysicsConfig};
    use crate::nn::{Activation, LayerSpec, NetworkSpec};

    fn runner() -> (SymRunner, ObsPipeline) {
        (
            SymRunner::new(PhysicsConfig::default(), Difficulty::default()),
            ObsPipeline::new(ObsMode::Raw, 0.01).unwrap(),
        )
    }

    #[test]
    fn constant_policy_yields_one_pattern() {
        let (mut env, mut pipe) = runner();
        let mut policy = FnPolicy(|_: &[f32]| Ok(vec![1.0f32, 0.0, 1.0, 0.0]));
        let table =
            mine_patterns(&mut policy, &mut env, &mut pipe, 2, 1, 7, 0.5).unwrap();
        assert_eq!(table.patterns.len(), 1);
        assert_eq!(table.patterns[0].0, vec![1, 0, 1, 0]);
        assert_eq!(table.patterns[0].1, table.total_steps);
        assert_eq!(table.saturation(), 1.0);
        assert_eq!(table.frequencies_percent(), vec![100.0]);
    }

    #[test]
    fn alternating_policy_splits_the_counts() {
        let (mut env, mut pipe) = runner();
        let mut step = 0usize;
        let mut policy = FnPolicy(move |_: &[f32]| {
            step += 1;
            Ok(if step % 2 == 0 {
                vec![1.0f32, 0.0, 0.0, 0.0]
            } else {
                vec![0.0f32, 1.0, 0.0, 0.0]
            })
        });
        let table =
            mine_patterns(&mut policy, &mut env, &mut pipe, 1, 1, 3, 0.5).unwrap();
        assert_eq!(table.patterns.len(), 2);
        let diff = table.patterns[0].1 as i64 - table.patterns[1].1 as i64;
        assert!(diff.abs() <= 1, "counts {:?}", table.patterns);
        assert_eq!(table.patterns[0].1 + table.patterns[1].1, table.total_steps);
    }

    #[test]
    fn midrange_actions_do_not_count_as_saturated() {
        let (mut env, mut pipe) = runner();
        let mut policy = FnPolicy(|_: &[f32]| Ok(vec![0.5f32, 0.4, 0.6, 0.5]));
        let table =
            mine_patterns(&mut policy, &mut env, &mut pipe, 1, 2, 1, 0.5).unwrap();
        assert_eq!(table.saturation(), 0.0);
        // Binarization still applies: >= threshold maps to 1.
        assert_eq!(table.patterns[0].0, vec![1, 0, 1, 1]);
    }

    #[test]
    fn frequencies_sum_to_one_hundred() {
        let (mut env, mut pipe) = runner();
        let mut step = 0usize;
        let mut policy = FnPolicy(move |_: &[f32]| {
            step += 1;
            let v = (step % 3) as f32 / 2.0;
            Ok(vec![v, 1.0 - v, 0.9, 0.1])
        });
        let table =
            mine_patterns(&mut policy, &mut env, &mut pipe, 3, 1, 11, 0.5).unwrap();
        let sum: f64 = table.frequencies_percent().iter().sum();
        assert!((sum - 100.0).abs() < 1e-9);
        // Sorted by count descending.
        for w in table.patterns.windows(2) {
            assert!(w[0].1 >= w[1].1);
        }
    }

    fn linear_critic(obs_dim: usize, act_dim: usize, w_act: &[f64], bias: f64) -> (Net, NetworkParams<f64>) {
        let net = Net::new(NetworkSpec::plain(
            obs_dim + act_dim,
            vec![LayerSpec::dense(1, Activation::Linear)],
        ))
        .unwrap();
        let mut params: NetworkParams<f64> = net.init(0, 1.0);
        let mut w = vec![0.0; obs_dim];
        w.extend_from_slice(w_act);
        params.arrays[0].data = w;
        params.arrays[1].data = vec![bias];
        (net, params)
    }

    #[test]
    fn quadratic_distance_critic_selects_its_target_pattern() {
        // On binary inputs, -(p - p2)^2 is exactly the linear form
        // sum(p_i (2 p2_i - 1)) - sum(p2_i), so a dense layer encodes it.
        let p2 = [1u8, 0, 1, 1];
        let w: Vec<f64> = p2.iter().map(|&b| 2.0 * b as f64 - 1.0).collect();
        let bias = -(p2.iter().filter(|&&b| b == 1).count() as f64);
        let (net, params) = linear_critic(2, 4, &w, bias);
        let tables = [
            vec![(vec![0, 0, 0, 0], 9u64), (p2.to_vec(), 5), (vec![1, 1, 1, 1], 3)],
            vec![(p2.to_vec(), 2), (vec![0, 1, 0, 0], 50)],
        ];
        for patterns in tables {
            let table = PatternTable {
                total_steps: patterns.iter().map(|&(_, c)| c).sum(),
                patterns,
                saturation_bits: 0,
            };
            let a = pattern_dqn_select(&net, &params, &[0.2, -0.4], &table, None).unwrap();
            assert_eq!(a, vec![1.0f32, 0.0, 1.0, 1.0]);
            // Exhaustive oracle: the chosen pattern maximizes the hand
            // formula over the whole table.
            for (p, _) in &table.patterns {
                let q: f64 = p.iter().zip(w.iter()).map(|(&b, &wi)| b as f64 * wi).sum::<f64>()
                    + bias;
                let q2: f64 = -p
                    .iter()
                    .zip(p2.iter())
                    .map(|(&b, &t)| (b as f64 - t as f64).powi(2))
                    .sum::<f64>();
                assert!((q - q2).abs() < 1e-12);
                assert!(q <= 0.0 + 1e-12);
            }
        }
    }

    #[test]
    fn budget_of_one_returns_the_most_frequent_pattern() {
        let p2 = [0u8, 0, 1, 0];
        let w: Vec<f64> = p2.iter().map(|&b| 2.0 * b as f64 - 1.0).collect();
        let (net, params) = linear_critic(2, 4, &w, -1.0);
        let table = PatternTable {
            patterns: vec![(vec![1, 1, 0, 0], 80), (p2.to_vec(), 20)],
            total_steps: 100,
            saturation_bits: 0,
        };
        let a = pattern_dqn_select(&net, &params, &[0.0, 0.0], &table, Some(1)).unwrap();
        assert_eq!(a, vec![1.0f32, 1.0, 0.0, 0.0]);
        // Without the budget the critic's favorite wins.
        let a = pattern_dqn_select(&net, &params, &[0.0, 0.0], &table, Some(2)).unwrap();
        assert_eq!(a, vec![0.0f32, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn flat_critic_ties_to_the_most_frequent() {
        let (net, params) = linear_critic(1, 2, &[0.0, 0.0], 0.0);
        let table = PatternTable {
            patterns: vec![(vec![1, 0], 10), (vec![0, 1], 5)],
            total_steps: 15,
            saturation_bits: 0,
        };
        let a = pattern_dqn_select(&net, &params, &[0.3], &table, None).unwrap();
        assert_eq!(a, vec![1.0f32, 0.0]);
    }

    #[test]
    fn select_contracts() {
        let (net, params) = linear_critic(1, 2, &[0.0, 0.0], 0.0);
        let empty =
            PatternTable { patterns: vec![], total_steps: 0, saturation_bits: 0 };
        assert!(pattern_dqn_select(&net, &params, &[0.1], &empty, None).is_err());
        let table = PatternTable {
            patterns: vec![(vec![1, 0], 1)],
            total_steps: 1,
            saturation_bits: 0,
        };
        assert!(pattern_dqn_select(&net, &params, &[0.1], &table, Some(0)).is_err());
    }
}
