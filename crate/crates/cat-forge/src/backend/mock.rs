//! Deterministic scripted backend for tests.
//!
//! A registry maps matchers over the last message content to canned
//! responses. With `seed_variation` enabled, the response text gets a suffix
//! derived from (seed, messages) so seeded runs produce distinct but
//! reproducible texts. Identical inputs always yield byte-identical output.

use sha2::{Digest, Sha256};

use super::{Backend, Completion, EndpointHandle, FinishReason, Message, SamplingParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub enum Matcher {
    Any,
    Contains(String),
    Exact(String),
}

impl Matcher {
    fn matches(&self, content: &str) -> bool {
        match self {
            Matcher::Any => true,
            Matcher::Contains(needle) => content.contains(needle),
            Matcher::Exact(s) => content == s,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MockScript {
    pub matcher: Matcher,
    pub text: String,
    pub token_logprobs: Option<Vec<(String, f64)>>,
    pub seed_variation: bool,
}

impl MockScript {
    pub fn reply(matcher: Matcher, text: impl Into<String>) -> Self {
        MockScript { matcher, text: text.into(), token_logprobs: None, seed_variation: false }
    }

    pub fn with_logprobs(mut self, token_logprobs: Vec<(String, f64)>) -> Self {
        self.token_logprobs = Some(token_logprobs);
        self
    }

    pub fn with_seed_variation(mut self) -> Self {
        self.seed_variation = true;
        self
    }
}

/// Canned logprobs for fixed-continuation scoring.
#[derive(Debug, Clone)]
pub struct ScoreScript {
    pub prompt_contains: Option<String>,
    pub continuation: String,
    pub logprobs: Vec<f64>,
}

#[derive(Debug, Default)]
pub struct MockBackend {
    scripts: Vec<MockScript>,
    score_scripts: Vec<ScoreScript>,
}

impl MockBackend {
    pub fn new() -> Self {
        MockBackend::default()
    }

    /// Mock that echoes a fixed reply for any input.
    pub fn echo(text: impl Into<String>) -> Self {
        let mut m = MockBackend::new();
        m.add_script(MockScript::reply(Matcher::Any, text));
        m
    }

    pub fn add_script(&mut self, script: MockScript) -> &mut Self {
        self.scripts.push(script);
        self
    }

    pub fn add_score_script(&mut self, script: ScoreScript) -> &mut Self {
        self.score_scripts.push(script);
        self
    }

    /// Handles whose base_url contains this marker simulate a dead endpoint.
    pub const UNREACHABLE: &'static str = "unreachable";
}

fn seed_suffix(seed: u64, content: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(content.as_bytes());
    let digest = hasher.finalize();
    format!("{:02x}{:02x}{:02x}{:02x}", digest[0], digest[1], digest[2], digest[3])
}

impl Backend for MockBackend {
    fn generate(
        &self,
        handle: &EndpointHandle,
        messages: &[Message],
        params: &SamplingParams,
        want_logprobs: bool,
    ) -> Result<Completion> {
        if messages.is_empty() {
            return Err(Error::InvalidInput("messages must be non-empty".into()));
        }
        if handle.base_url.contains(Self::UNREACHABLE) {
            return Err(Error::Transport {
                attempts: handle.max_retries + 1,
                message: format!("mock endpoint {} is unreachable", handle.base_url),
            });
        }
        let last = &messages.last().unwrap().content;
        let script = self
            .scripts
            .iter()
            .find(|s| s.matcher.matches(last))
            .ok_or_else(|| Error::Protocol(format!("no mock script matches: {:?}", &last[..last.len().min(80)])))?;

        let mut text = script.text.clone();
        if script.seed_variation {
            text = format!("{} [{}]", text, seed_suffix(params.seed.unwrap_or(0), last));
        }

        let token_logprobs = if want_logprobs {
            match &script.token_logprobs {
                Some(lp) => {
                    let joined: String = lp.iter().map(|(t, _)| t.as_str()).collect();
                    if joined != text {
                        return Err(Error::Protocol("mock logprob tokens do not concatenate to text".into()));
                    }
                    if lp.iter().any(|(_, p)| *p > 0.0) {
                        return Err(Error::Protocol("mock logprob > 0".into()));
                    }
                    Some(lp.clone())
                }
                None => return Err(Error::LogprobsUnavailable),
            }
        } else {
            None
        };

        Ok(Completion { text, token_logprobs, finish_reason: FinishReason::Stop })
    }

    fn score(&self, handle: &EndpointHandle, prompt: &str, continuation: &str) -> Result<Vec<f64>> {
        if handle.base_url.contains(Self::UNREACHABLE) {
            return Err(Error::Transport {
                attempts: 1,
                message: format!("mock endpoint {} is unreachable", handle.base_url),
            });
        }
        for s in &self.score_scripts {
            let prompt_ok = s.prompt_contains.as_deref().is_none_or(|n| prompt.contains(n));
            if prompt_ok && s.continuation == continuation {
                return Ok(s.logprobs.clone());
            }
        }
        // Fallback: deterministic pseudo-logprobs from a hash of the pair, one
        // per whitespace token of the continuation.
        let mut hasher = Sha256::new();
        hasher.update(prompt.as_bytes());
        hasher.update([0u8]);
        hasher.update(continuation.as_bytes());
        let digest = hasher.finalize();
        let n = continuation.split_whitespace().count().max(1);
        Ok((0..n).map(|i| -0.01 - f64::from(digest[i % digest.len()]) / 64.0).collect())
    }
}
