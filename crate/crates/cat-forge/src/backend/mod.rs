//! Uniform access to text-generation endpoints.
//!
//! Policy, anchor, and judge are plain [`EndpointHandle`]s; everything that
//! talks to an endpoint goes through a [`Backend`] — either the live
//! chat-completions client in [`http`] or the scripted [`mock`] used by tests.
//! No other module builds wire requests.

mod http;
mod mock;

pub use http::HttpBackend;
pub use mock::{Matcher, MockBackend, MockScript, ScoreScript};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Message { role: Role::System, content: content.into() }
    }
    pub fn user(content: impl Into<String>) -> Self {
        Message { role: Role::User, content: content.into() }
    }
}

/// A role-tagged endpoint: policy, anchor, and judge are all handles.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EndpointHandle {
    pub base_url: String,
    pub model_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
}

fn default_timeout() -> f64 {
    120.0
}
fn default_retries() -> u32 {
    2
}

impl EndpointHandle {
    pub fn new(base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        EndpointHandle {
            base_url: base_url.into(),
            model_name: model_name.into(),
            api_key: None,
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_url.is_empty() {
            return Err(Error::InvalidConfig("base_url is empty".into()));
        }
        if self.timeout_secs <= 0.0 {
            return Err(Error::InvalidConfig("timeout must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_k: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_p: Option<f64>,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn default_temperature() -> f64 {
    1.0
}
fn default_max_tokens() -> u32 {
    1024
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams {
            temperature: default_temperature(),
            top_k: None,
            top_p: None,
            max_tokens: default_max_tokens(),
            seed: None,
        }
    }
}

impl SamplingParams {
    /// Greedy decoding, used for the anchor and judge by default.
    pub fn greedy() -> Self {
        SamplingParams { temperature: 0.0, ..SamplingParams::default() }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.temperature < 0.0 {
            return Err(Error::InvalidConfig("temperature must be >= 0".into()));
        }
        if let Some(p) = self.top_p {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::InvalidConfig("top_p must be in (0,1]".into()));
            }
        }
        if self.max_tokens < 1 {
            return Err(Error::InvalidConfig("max_tokens must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    /// (token, logprob) pairs; tokens concatenate to `text` when present.
    pub token_logprobs: Option<Vec<(String, f64)>>,
    pub finish_reason: FinishReason,
}

impl Completion {
    pub fn stop(text: impl Into<String>) -> Self {
        Completion { text: text.into(), token_logprobs: None, finish_reason: FinishReason::Stop }
    }

    pub fn logprob_values(&self) -> Option<Vec<f64>> {
        self.token_logprobs.as_ref().map(|lp| lp.iter().map(|(_, p)| *p).collect())
    }
}

/// One batch item; each item carries its own handle so partial failures stay
/// isolated per item.
#[derive(Debug, Clone)]
pub struct GenRequest {
    pub handle: EndpointHandle,
    pub messages: Vec<Message>,
    pub params: SamplingParams,
}

pub trait Backend: Send + Sync {
    fn generate(
        &self,
        handle: &EndpointHandle,
        messages: &[Message],
        params: &SamplingParams,
        want_logprobs: bool,
    ) -> Result<Completion>;

    /// Token logprobs of `continuation` when the endpoint is conditioned on
    /// `prompt` (fixed-continuation scoring, used by mutual predictability).
    fn score(&self, handle: &EndpointHandle, prompt: &str, continuation: &str) -> Result<Vec<f64>>;

    /// Bound on concurrently in-flight requests for `generate_batch`.
    fn max_in_flight(&self) -> usize {
        16
    }

    /// Fan a batch out, results in request order, one error slot per failed item.
    fn generate_batch(&self, requests: &[GenRequest], want_logprobs: bool) -> Vec<Result<Completion>> {
        let cap = self.max_in_flight().max(1);
        let mut results: Vec<Option<Result<Completion>>> = (0..requests.len()).map(|_| None).collect();
        for chunk_start in (0..requests.len()).step_by(cap) {
            let chunk_end = (chunk_start + cap).min(requests.len());
            let chunk = &requests[chunk_start..chunk_end];
            let mut outs: Vec<Option<Result<Completion>>> = (0..chunk.len()).map(|_| None).collect();
            std::thread::scope(|scope| {
                for (slot, req) in outs.iter_mut().zip(chunk.iter()) {
                    scope.spawn(move || {
                        *slot = Some(self.generate(&req.handle, &req.messages, &req.params, want_logprobs));
                    });
                }
            });
            for (i, out) in outs.into_iter().enumerate() {
                results[chunk_start + i] = out;
            }
        }
        results
            .into_iter()
            .map(|r| r.unwrap_or_else(|| Err(Error::Protocol("batch slot never filled".into()))))
            .collect()
    }
}
