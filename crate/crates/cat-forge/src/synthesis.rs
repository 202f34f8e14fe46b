//! The synthesis core: sample a group of rollouts from the policy, then have
//! the frozen anchor reconcile them into one estimated reference without ever
//! seeing the question.

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, Completion, EndpointHandle, GenRequest, Message, SamplingParams};
use crate::error::{Error, Result};
use crate::prompts::{PromptName, PromptSet};
use crate::verify;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Verifiable,
    NonVerifiable,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
    pub domain: Domain,
}

impl Question {
    pub fn new(id: impl Into<String>, text: impl Into<String>, domain: Domain) -> Result<Self> {
        let q = Question { id: id.into(), text: text.into(), domain };
        if q.text.is_empty() {
            return Err(Error::InvalidInput("question text is empty".into()));
        }
        Ok(q)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Rollout {
    pub text: String,
    /// Per-token logprobs when the backend returned them; length equals
    /// `token_count` when present.
    pub token_logprobs: Option<Vec<f64>>,
    pub token_count: usize,
}

impl Rollout {
    pub fn plain(text: impl Into<String>, token_count: usize) -> Self {
        Rollout { text: text.into(), token_logprobs: None, token_count }
    }

    pub fn with_logprobs(text: impl Into<String>, logprobs: Vec<f64>) -> Self {
        let token_count = logprobs.len();
        Rollout { text: text.into(), token_logprobs: Some(logprobs), token_count }
    }

    pub fn from_completion(c: &Completion) -> Self {
        match c.logprob_values() {
            Some(lp) => Rollout::with_logprobs(c.text.clone(), lp),
            None => Rollout::plain(c.text.clone(), c.text.split_whitespace().count()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub question_id: String,
    pub rollouts: Vec<Rollout>,
    pub sampling: SamplingParams,
}

impl RolloutGroup {
    pub fn len(&self) -> usize {
        self.rollouts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rollouts.is_empty()
    }

    pub fn texts(&self) -> Vec<String> {
        self.rollouts.iter().map(|r| r.text.clone()).collect()
    }
}

/// The anchor's reconciled answer `s`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthesizedReference {
    pub text: String,
    pub extracted_answer: Option<String>,
    pub source_group: String,
    pub anchor_model: String,
}

pub const UNIFIED_MARKER: &str = "# UNIFIED RESPONSE";

/// Draw `g` independent rollouts for one question at the given params.
///
/// The group fails only if every draw fails; partial failures are dropped
/// with a log line so a single transport hiccup cannot sink the step.
pub fn sample_group(
    backend: &dyn Backend,
    policy: &EndpointHandle,
    q: &Question,
    g: usize,
    params: &SamplingParams,
    want_logprobs: bool,
) -> Result<RolloutGroup> {
    if g < 1 {
        return Err(Error::InvalidInput("group size must be >= 1".into()));
    }
    let requests: Vec<GenRequest> = (0..g)
        .map(|i| {
            let mut p = params.clone();
            // distinct per-rollout seeds keep seeded mocks diverse
            if let Some(seed) = params.seed {
                p.seed = Some(seed.wrapping_add(i as u64));
            }
            GenRequest { handle: policy.clone(), messages: vec![Message::user(&q.text)], params: p }
        })
        .collect();
    let results = backend.generate_batch(&requests, want_logprobs);
    let mut rollouts = Vec::with_capacity(g);
    let mut last_err = None;
    for (i, res) in results.into_iter().enumerate() {
        match res {
            Ok(c) => rollouts.push(Rollout::from_completion(&c)),
            Err(e) => {
                log::warn!("rollout {i} for question {} failed: {e}", q.id);
                last_err = Some(e);
            }
        }
    }
    if rollouts.is_empty() {
        return Err(last_err.unwrap_or_else(|| Error::Protocol("all rollouts failed".into())));
    }
    Ok(RolloutGroup { question_id: q.id.clone(), rollouts, sampling: params.clone() })
}

/// Everything after the last `# UNIFIED RESPONSE` marker; tolerant of the
/// CoT prompt's preceding `# SUMMARY` section.
pub fn extract_unified(output: &str) -> Option<String> {
    output
        .rfind(UNIFIED_MARKER)
        .map(|pos| output[pos + UNIFIED_MARKER.len()..].trim().to_string())
}

/// Ask the anchor to synthesize one estimated reference from the rollout set.
///
/// The prompt is built from rollout texts only; the question is structurally
/// not an input. The anchor is called greedily unless `params` says otherwise.
/// One retry on a missing marker, then `SynthesisParse`.
pub fn synthesize(
    backend: &dyn Backend,
    anchor: &EndpointHandle,
    prompts: &PromptSet,
    group: &RolloutGroup,
    domain: Domain,
    params: &SamplingParams,
) -> Result<SynthesizedReference> {
    if group.is_empty() {
        return Err(Error::EmptyRollouts);
    }
    let template = match domain {
        Domain::Verifiable => PromptName::SynCot,
        Domain::NonVerifiable => PromptName::SynFreeform,
    };
    let prompt = prompts.render_synthesis(template, &group.texts())?;
    let messages = vec![Message::user(prompt)];

    let mut text = None;
    for attempt in 0..2 {
        let completion = backend.generate(anchor, &messages, params, false)?;
        match extract_unified(&completion.text) {
            Some(t) => {
                text = Some(t);
                break;
            }
            None if attempt == 0 => {
                log::warn!("anchor output lacked the unified-response marker; retrying once");
            }
            None => {}
        }
    }
    let text = text.ok_or(Error::SynthesisParse)?;

    let extracted_answer = match domain {
        Domain::Verifiable => verify::extract_boxed(&text).map(|a| a.normalized),
        Domain::NonVerifiable => None,
    };
    Ok(SynthesizedReference {
        text,
        extracted_answer,
        source_group: group.question_id.clone(),
        anchor_model: anchor.model_name.clone(),
    })
}
