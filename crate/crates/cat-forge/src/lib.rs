//! cat-forge: reference-free supervision from parallel rollouts.
//!
//! The engine samples a group of rollouts from a policy, lets a frozen anchor
//! synthesize a single estimated reference from the rollout set alone, and
//! converts that reference into rewards: a programmatic answer check in
//! verifiable domains, or self-proposed rubric criteria scored by an LLM
//! judge in non-verifiable ones. Those rewards drive a group-relative policy
//! gradient (GRPO) trainer that runs end-to-end on a built-in toy world with
//! exact gradients, and the same synthesis step doubles as an inference-time
//! tool against real chat-completions endpoints.

pub mod backend;
pub mod error;
pub mod grpo;
pub mod harness;
pub mod prompts;
pub mod rubric;
pub mod select;
pub mod synthesis;
pub mod toyworld;
pub mod verify;

pub use error::{Error, Result};
