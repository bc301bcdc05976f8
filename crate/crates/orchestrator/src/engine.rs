//! What the learner loop drives: something that ingests episodes, performs
//! update steps and publishes versioned weight snapshots.

use crate::Result;
use l2r_core::agents::DdpgAgent;
use l2r_core::nn::save_arrays;
use l2r_core::replay::{ReplayBuffer, ReplayConfig, Transition};
use l2r_core::rng::SplitMix64;

pub trait LearnerEngine: Send {
    /// Pushes one whole episode; returns the number of transitions admitted.
    fn ingest(&mut self, episode: &[Transition]) -> Result<usize>;

    /// Performs up to `updates` training steps (fewer when the replay buffer
    /// cannot fill a batch yet); returns how many actually ran.
    fn train(&mut self, updates: usize) -> Result<usize>;

    /// Current policy weights as (version, checkpoint bytes). The version
    /// changes only when training moved the parameters.
    fn snapshot(&self) -> Result<(u64, Vec<u8>)>;

    fn replay_len(&self) -> usize;
}

/// The standard engine: a deterministic-policy agent over a replay buffer.
/// Snapshots carry the online actor only; critics stay learner-side.
pub struct DdpgEngine {
    pub agent: DdpgAgent,
    pub replay: ReplayBuffer,
    pub batch_size: usize,
    pub reflect_augment: bool,
    rng: SplitMix64,
}

impl DdpgEngine {
    pub fn new(
        agent: DdpgAgent,
        replay_cfg: ReplayConfig,
        batch_size: usize,
        reflect_augment: bool,
        seed: u64,
    ) -> Result<DdpgEngine> {
        if batch_size == 0 {
            return Err(l2r_core::error::CoreError::config("batch_size must be positive").into());
        }
        Ok(DdpgEngine {
            agent,
            replay: ReplayBuffer::new(replay_cfg)?,
            batch_size,
            reflect_augment,
            rng: SplitMix64::new(seed),
        })
    }
}

impl LearnerEngine for DdpgEngine {
    fn ingest(&mut self, episode: &[Transition]) -> Result<usize> {
        Ok(self.replay.push_episode(episode)?)
    }

    fn train(&mut self, updates: usize) -> Result<usize> {
        let mut performed = 0;
        for _ in 0..updates {
            if self.replay.len() < self.batch_size {
                break;
            }
            let batch =
                self.replay.sample_uniform(self.batch_size, self.reflect_augment, &mut self.rng)?;
            self.agent.update(&batch, None)?;
            performed += 1;
        }
        Ok(performed)
    }

    fn snapshot(&self) -> Result<(u64, Vec<u8>)> {
        let actor = &self.agent.core.actor;
        Ok((actor.version, save_arrays(&actor.arrays)))
    }

    fn replay_len(&self) -> usize {
        self.replay.len()
    }
}
