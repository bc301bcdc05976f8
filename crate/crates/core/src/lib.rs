//! Core building blocks for the l2r locomotion suite: a small self-contained
//! neural network stack with hand-written gradients, the SymRunner planar
//! locomotion environment, experience replay, exploration noise processes and
//! the training agents built on top of them.

pub mod agents;
pub mod env;
pub mod error;
pub mod explore;
pub mod nn;
pub mod replay;
pub mod rng;

pub use error::CoreError;
pub use rng::SplitMix64;

/// Shorthand used throughout the crate.
pub type Result<T> = std::result::Result<T, CoreError>;
