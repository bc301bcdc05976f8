//! Single-process mode: the same sampler code drives a `LearnerState`
//! directly. Every message still round-trips through the codec in both
//! directions, so weights see the identical f32 truncation and a local run
//! fills the replay buffer bitwise the same as a one-sampler TCP run.

use crate::engine::LearnerEngine;
use crate::learner::LearnerState;
use crate::link::Link;
use crate::sampler::{SamplerConfig, SamplerReport, SamplerSession};
use crate::wire::{decode_message, encode_message, WireMessage};
use crate::{OrchError, Result};

pub struct LocalLink<'a, E> {
    state: &'a mut LearnerState<E>,
}

impl<'a, E: LearnerEngine> LocalLink<'a, E> {
    pub fn new(state: &'a mut LearnerState<E>) -> Result<LocalLink<'a, E>> {
        let mut link = LocalLink { state };
        link.deliver(&WireMessage::Hello)?;
        Ok(link)
    }

    fn deliver(&mut self, msg: &WireMessage) -> Result<Option<WireMessage>> {
        let decoded = decode_message(&encode_message(msg))?;
        self.state.handle(decoded)
    }
}

impl<E: LearnerEngine> Link for LocalLink<'_, E> {
    fn send(&mut self, msg: &WireMessage) -> Result<()> {
        match self.deliver(msg)? {
            None => Ok(()),
            Some(reply) => Err(OrchError::protocol(format!(
                "unexpected reply {reply:?} to a one-way message"
            ))),
        }
    }

    fn fetch_weights(&mut self) -> Result<(u64, Vec<u8>)> {
        match self.deliver(&WireMessage::GetWeights)? {
            Some(reply) => match decode_message(&encode_message(&reply))? {
                WireMessage::Weights { version, checkpoint } => Ok((version, checkpoint)),
                other => Err(OrchError::protocol(format!("expected WEIGHTS, got {other:?}"))),
            },
            None => Err(OrchError::protocol("no reply to GET_WEIGHTS")),
        }
    }
}

/// One sampler, one in-process learner, full episode budget.
pub fn run_local_sampler<E: LearnerEngine>(
    cfg: &SamplerConfig,
    state: &mut LearnerState<E>,
) -> Result<SamplerReport> {
    let mut session = SamplerSession::new(cfg)?;
    let mut link = LocalLink::new(state)?;
    while !session.finished() {
        session.run_one_episode(&mut link)?;
    }
    Ok(session.report)
}

/// Several sampler configurations over one learner, round-robin one episode
/// per turn, mirroring how a fair TCP sweep interleaves them.
pub fn run_local_cluster<E: LearnerEngine>(
    cfgs: &[SamplerConfig],
    state: &mut LearnerState<E>,
) -> Result<Vec<SamplerReport>> {
    let mut sessions = cfgs.iter().map(SamplerSession::new).collect::<Result<Vec<_>>>()?;
    let mut link = LocalLink::new(state)?;
    loop {
        let mut progressed = false;
        for session in sessions.iter_mut() {
            if !session.finished() {
                session.run_one_episode(&mut link)?;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    Ok(sessions.into_iter().map(|s| s.report).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::tests::RecordingEngine;
    use crate::sampler::tests::{base_cfg, zero_checkpoint};

    #[test]
    fn local_link_round_trips_weights_through_the_codec() {
        let mut state =
            LearnerState::new(RecordingEngine::new(3, vec![5, 6, 7]), 1).unwrap();
        let mut link = LocalLink::new(&mut state).unwrap();
        assert_eq!(link.fetch_weights().unwrap(), (3, vec![5, 6, 7]));
    }

    #[test]
    fn cluster_interleaves_episode_submissions() {
        let cfg = base_cfg(21);
        let ckpt = zero_checkpoint(&cfg.actor);
        let mut state = LearnerState::new(RecordingEngine::new(0, ckpt), 1).unwrap();
        let mut a = base_cfg(21);
        a.episodes = 2;
        let mut b = base_cfg(22);
        b.episodes = 3;
        let reports = run_local_cluster(&[a, b], &mut state).unwrap();
        assert_eq!(reports[0].episodes_sent, 2);
        assert_eq!(reports[1].episodes_sent, 3);
        assert_eq!(state.stats.episodes, 5);
        // Round-robin order: a, b, a, b, b.
        let lens: Vec<usize> = state.engine.episodes.iter().map(|e| e.len()).collect();
        assert_eq!(lens.len(), 5);
        assert_eq!(state.stats.weight_requests, 5);
    }
}
