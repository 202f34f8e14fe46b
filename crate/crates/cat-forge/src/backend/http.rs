//! Live client for OpenAI-compatible chat-completions servers.
//!
//! `POST {base_url}/v1/chat/completions` with retries and exponential backoff
//! on transient failures. `top_k` rides along as a vendor extension; if the
//! server rejects the request over it, the request is retried once without it
//! and a warning is logged. Fixed-continuation scoring goes through
//! `/v1/completions` with `echo` when the server supports it.

use std::time::Duration;

use rand::Rng;
use serde_json::{json, Value};

use super::{Backend, Completion, EndpointHandle, FinishReason, Message, Role, SamplingParams};
use crate::error::{Error, Result};

/// Env var that overrides any api_key configured on a handle.
pub const API_KEY_ENV: &str = "CAT_FORGE_API_KEY";

pub struct HttpBackend {
    client: reqwest::blocking::Client,
    /// First backoff delay; doubles per retry, jittered ±20%.
    retry_base: Duration,
    max_in_flight: usize,
}

impl Default for HttpBackend {
    fn default() -> Self {
        HttpBackend::new()
    }
}

impl HttpBackend {
    pub fn new() -> Self {
        HttpBackend {
            client: reqwest::blocking::Client::new(),
            retry_base: Duration::from_secs(1),
            max_in_flight: 16,
        }
    }

    pub fn with_retry_base(mut self, base: Duration) -> Self {
        self.retry_base = base;
        self
    }

    pub fn with_max_in_flight(mut self, cap: usize) -> Self {
        self.max_in_flight = cap;
        self
    }

    fn api_key(handle: &EndpointHandle) -> Option<String> {
        std::env::var(API_KEY_ENV).ok().or_else(|| handle.api_key.clone())
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let base = self.retry_base.as_secs_f64() * f64::from(2u32.saturating_pow(attempt));
        let jitter = rand::thread_rng().gen_range(0.8..1.2);
        Duration::from_secs_f64(base * jitter)
    }

    /// POST with retry on transport errors and 5xx. 4xx is not retried.
    fn post_with_retries(&self, handle: &EndpointHandle, url: &str, body: &Value) -> Result<Value> {
        let mut last_err = String::new();
        let attempts = handle.max_retries + 1;
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.backoff(attempt - 1));
            }
            let mut req = self
                .client
                .post(url)
                .timeout(Duration::from_secs_f64(handle.timeout_secs))
                .json(body);
            if let Some(key) = Self::api_key(handle) {
                req = req.bearer_auth(key);
            }
            match req.send() {
                Ok(resp) => {
                    let status = resp.status();
                    let text = resp.text().unwrap_or_default();
                    if status.is_success() {
                        return serde_json::from_str(&text)
                            .map_err(|e| Error::Protocol(format!("bad JSON from {url}: {e}")));
                    }
                    if status.is_server_error() {
                        last_err = format!("{status}: {text}");
                        continue;
                    }
                    return Err(Error::Protocol(format!("{status}: {text}")));
                }
                Err(e) => {
                    last_err = e.to_string();
                }
            }
        }
        Err(Error::Transport { attempts, message: last_err })
    }

    fn chat_body(
        handle: &EndpointHandle,
        messages: &[Message],
        params: &SamplingParams,
        want_logprobs: bool,
        include_top_k: bool,
    ) -> Value {
        let msgs: Vec<Value> = messages
            .iter()
            .map(|m| {
                let role = match m.role {
                    Role::System => "system",
                    Role::User => "user",
                    Role::Assistant => "assistant",
                };
                json!({ "role": role, "content": m.content })
            })
            .collect();
        let mut body = json!({
            "model": handle.model_name,
            "messages": msgs,
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        });
        if let Some(p) = params.top_p {
            body["top_p"] = json!(p);
        }
        if include_top_k {
            if let Some(k) = params.top_k {
                body["top_k"] = json!(k);
            }
        }
        if let Some(seed) = params.seed {
            body["seed"] = json!(seed);
        }
        if want_logprobs {
            body["logprobs"] = json!(true);
        }
        body
    }

    fn parse_completion(value: &Value, want_logprobs: bool) -> Result<Completion> {
        let choice = value
            .get("choices")
            .and_then(|c| c.get(0))
            .ok_or_else(|| Error::Protocol("response has no choices".into()))?;
        let text = choice
            .pointer("/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Protocol("choice has no message content".into()))?
            .to_string();
        let finish_reason = match choice.get("finish_reason").and_then(Value::as_str) {
            Some("stop") => FinishReason::Stop,
            Some("length") => FinishReason::Length,
            _ => FinishReason::Error,
        };
        let token_logprobs = if want_logprobs {
            let entries = choice
                .pointer("/logprobs/content")
                .and_then(Value::as_array)
                .ok_or(Error::LogprobsUnavailable)?;
            let mut out = Vec::with_capacity(entries.len());
            for e in entries {
                let token = e
                    .get("token")
                    .and_then(Value::as_str)
                    .ok_or_else(|| Error::Protocol("logprob entry missing token".into()))?;
                let lp = e
                    .get("logprob")
                    .and_then(Value::as_f64)
                    .ok_or_else(|| Error::Protocol("logprob entry missing logprob".into()))?;
                out.push((token.to_string(), lp));
            }
            Some(out)
        } else {
            None
        };
        Ok(Completion { text, token_logprobs, finish_reason })
    }
}

impl Backend for HttpBackend {
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
        handle.validate()?;
        params.validate()?;
        let url = format!("{}/v1/chat/completions", handle.base_url.trim_end_matches('/'));
        let body = Self::chat_body(handle, messages, params, want_logprobs, true);
        let result = self.post_with_retries(handle, &url, &body);
        let value = match result {
            // Some servers reject unknown fields; drop top_k and try once more.
            Err(Error::Protocol(msg)) if params.top_k.is_some() && msg.contains("top_k") => {
                log::warn!("server rejected top_k; retrying without it: {msg}");
                let body = Self::chat_body(handle, messages, params, want_logprobs, false);
                self.post_with_retries(handle, &url, &body)?
            }
            other => other?,
        };
        Self::parse_completion(&value, want_logprobs)
    }

    fn score(&self, handle: &EndpointHandle, prompt: &str, continuation: &str) -> Result<Vec<f64>> {
        handle.validate()?;
        let url = format!("{}/v1/completions", handle.base_url.trim_end_matches('/'));
        let full = format!("{prompt}{continuation}");
        let body = json!({
            "model": handle.model_name,
            "prompt": full,
            "max_tokens": 0,
            "echo": true,
            "logprobs": 0,
        });
        let value = self.post_with_retries(handle, &url, &body)?;
        let choice = value
            .get("choices")
            .and_then(|c| c.get(0))
            .ok_or_else(|| Error::Protocol("response has no choices".into()))?;
        let lp = choice.get("logprobs").filter(|v| !v.is_null()).ok_or(Error::LogprobsUnavailable)?;
        let token_logprobs = lp
            .get("token_logprobs")
            .and_then(Value::as_array)
            .ok_or(Error::LogprobsUnavailable)?;
        let offsets = lp
            .get("text_offset")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Protocol("echo response lacks text_offset".into()))?;
        // Keep only tokens that start inside the continuation.
        let boundary = prompt.len();
        let mut out = Vec::new();
        for (lp_v, off_v) in token_logprobs.iter().zip(offsets.iter()) {
            let off = off_v.as_u64().unwrap_or(0) as usize;
            if off >= boundary {
                if let Some(v) = lp_v.as_f64() {
                    out.push(v);
                }
            }
        }
        if out.is_empty() {
            return Err(Error::LogprobsUnavailable);
        }
        Ok(out)
    }

    fn max_in_flight(&self) -> usize {
        self.max_in_flight
    }
}
