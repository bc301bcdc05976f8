//! Distributed sampling harness: a length-prefixed TCP protocol between one
//! learner and many samplers/evaluators, plus an in-process mode that drives
//! the identical code paths for single-machine runs.

pub mod engine;
pub mod evaluator;
pub mod learner;
pub mod link;
pub mod local;
pub mod sampler;
pub mod wire;

pub use engine::{DdpgEngine, LearnerEngine};
pub use evaluator::{eval_episodes, run_evaluator, EvalJob};
pub use learner::{
    pick_addr, serve_learner, EvalRecord, LearnerConfig, LearnerState, LearnerStats,
    RunningLearner, ADDR_ENV_VAR,
};
pub use link::{Backoff, Link, TcpLink};
pub use local::{run_local_cluster, run_local_sampler, LocalLink};
pub use sampler::{run_sampler, SamplerConfig, SamplerReport, SamplerSession};
pub use wire::{
    decode_from, decode_message, encode_message, Decoded, WireMessage, MAX_FRAME_BYTES,
};

use l2r_core::CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OrchError {
    /// The peer violated the framing or message rules; the connection is
    /// dropped rather than retried.
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl OrchError {
    pub fn protocol(msg: impl Into<String>) -> OrchError {
        OrchError::Protocol(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, OrchError>;
