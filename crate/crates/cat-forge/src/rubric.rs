//! Non-verifiable reward: self-proposed rubric generation from the estimated
//! reference, per-criterion yes/no judging, the fraction-satisfied reward
//! with the over-length penalty, and the model-as-judge baseline.
//!
//! Judge fan-out is one call per criterion. A verdict that fails to parse
//! maps to "no" and is flagged as an anomaly rather than crashing a training
//! step.

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, EndpointHandle, Message, SamplingParams};
use crate::error::{Error, Result};
use crate::prompts::PromptSet;
use crate::synthesis::{Rollout, SynthesizedReference};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Criterion {
    pub text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Rubric {
    pub criteria: Vec<Criterion>,
    pub source_reference: String,
}

impl Rubric {
    pub fn len(&self) -> usize {
        self.criteria.len()
    }

    pub fn is_empty(&self) -> bool {
        self.criteria.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Yes,
    No,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Verdict {
    pub criterion_index: usize,
    pub decision: Decision,
    pub reasoning: String,
    /// True when the judge reply could not be parsed and "no" was assumed.
    pub anomaly: bool,
}

/// Reward plus the audit trail that produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RubricScore {
    pub reward: f64,
    pub verdicts: Vec<Verdict>,
    pub anomalies: usize,
    pub length_penalty_applied: bool,
}

fn strip_markdown_fences(text: &str) -> String {
    text.lines()
        .filter(|line| !line.trim_start().starts_with("```"))
        .collect::<Vec<_>>()
        .join("\n")
}

fn extract_tag(text: &str, tag: &str) -> Option<String> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let start = text.find(&open)? + open.len();
    let end = text[start..].find(&close)? + start;
    Some(text[start..end].trim().to_string())
}

/// All `<criterion>...</criterion>` elements, tolerant of surrounding prose
/// and markdown fences.
pub fn parse_criteria(output: &str) -> Vec<Criterion> {
    let cleaned = strip_markdown_fences(output);
    let mut criteria = Vec::new();
    let mut rest = cleaned.as_str();
    while let Some(start) = rest.find("<criterion>") {
        let after = &rest[start + "<criterion>".len()..];
        let Some(end) = after.find("</criterion>") else { break };
        let text = after[..end].trim();
        if !text.is_empty() {
            criteria.push(Criterion { text: text.to_string() });
        }
        rest = &after[end + "</criterion>".len()..];
    }
    criteria
}

/// Have the anchor propose a rubric for the estimated reference. One retry on
/// unparseable output. Rubrics below five criteria are accepted with a
/// warning; the prompt asks for five or more but the parser does not enforce
/// it.
pub fn generate_rubric(
    backend: &dyn Backend,
    anchor: &EndpointHandle,
    prompts: &PromptSet,
    reference: &SynthesizedReference,
) -> Result<Rubric> {
    if reference.text.is_empty() {
        return Err(Error::EmptySubstitution("response"));
    }
    let prompt = prompts.render_rubric_gen(&reference.text)?;
    let messages = vec![Message::user(prompt)];
    for attempt in 0..2 {
        let completion = backend.generate(anchor, &messages, &SamplingParams::greedy(), false)?;
        let criteria = parse_criteria(&completion.text);
        if !criteria.is_empty() {
            if criteria.len() < 5 {
                log::warn!(
                    "rubric for {} has only {} criteria",
                    reference.source_group,
                    criteria.len()
                );
            }
            return Ok(Rubric { criteria, source_reference: reference.source_group.clone() });
        }
        if attempt == 0 {
            log::warn!("no parseable rubric criteria in anchor output; retrying once");
        }
    }
    Err(Error::RubricParse)
}

/// One judge call for one (rollout, criterion) pair.
///
/// An empty rollout is a failure by the judge prompt's own convention, so it
/// short-circuits to "no" without a call.
pub fn judge_criterion(
    backend: &dyn Backend,
    judge: &EndpointHandle,
    prompts: &PromptSet,
    rollout_text: &str,
    criterion: &Criterion,
    criterion_index: usize,
) -> Verdict {
    if rollout_text.trim().is_empty() {
        return Verdict {
            criterion_index,
            decision: Decision::No,
            reasoning: "no answer provided".into(),
            anomaly: false,
        };
    }
    let prompt = match prompts.render_rubric_judge(&criterion.text, rollout_text) {
        Ok(p) => p,
        Err(e) => {
            log::warn!("JudgeParseAnomaly: could not render judge prompt: {e}");
            return Verdict {
                criterion_index,
                decision: Decision::No,
                reasoning: format!("render failure: {e}"),
                anomaly: true,
            };
        }
    };
    let reply = backend.generate(judge, &[Message::user(prompt)], &SamplingParams::greedy(), false);
    match reply {
        Ok(c) => {
            let reasoning = extract_tag(&c.text, "reasoning").unwrap_or_default();
            match extract_tag(&c.text, "decision").as_deref().map(str::trim) {
                Some(d) if d.eq_ignore_ascii_case("yes") => {
                    Verdict { criterion_index, decision: Decision::Yes, reasoning, anomaly: false }
                }
                Some(d) if d.eq_ignore_ascii_case("no") => {
                    Verdict { criterion_index, decision: Decision::No, reasoning, anomaly: false }
                }
                other => {
                    log::warn!("JudgeParseAnomaly: invalid decision {other:?}");
                    Verdict { criterion_index, decision: Decision::No, reasoning, anomaly: true }
                }
            }
        }
        Err(e) => {
            log::warn!("JudgeParseAnomaly: judge call failed: {e}");
            Verdict {
                criterion_index,
                decision: Decision::No,
                reasoning: format!("judge call failed: {e}"),
                anomaly: true,
            }
        }
    }
}

/// Fraction of criteria satisfied, in [0,1]; exactly −1 when the rollout
/// exceeds `length_limit` tokens (penalty applied before judging, saving the
/// judge calls).
pub fn reward_rubric(
    backend: &dyn Backend,
    judge: &EndpointHandle,
    prompts: &PromptSet,
    rollout: &Rollout,
    rubric: &Rubric,
    length_limit: Option<usize>,
) -> Result<RubricScore> {
    if rubric.is_empty() {
        return Err(Error::EmptyRubric);
    }
    if let Some(limit) = length_limit {
        if rollout.token_count > limit {
            return Ok(RubricScore {
                reward: -1.0,
                verdicts: Vec::new(),
                anomalies: 0,
                length_penalty_applied: true,
            });
        }
    }
    let verdicts: Vec<Verdict> = rubric
        .criteria
        .iter()
        .enumerate()
        .map(|(i, c)| judge_criterion(backend, judge, prompts, &rollout.text, c, i))
        .collect();
    let yes = verdicts.iter().filter(|v| v.decision == Decision::Yes).count();
    let anomalies = verdicts.iter().filter(|v| v.anomaly).count();
    Ok(RubricScore {
        reward: yes as f64 / rubric.len() as f64,
        verdicts,
        anomalies,
        length_penalty_applied: false,
    })
}

/// Binary semantic-equivalence baseline: 1 iff the judge's reply concludes
/// with "FINAL DECISION: YES" (last occurrence wins).
pub fn model_as_judge(
    backend: &dyn Backend,
    judge: &EndpointHandle,
    prompts: &PromptSet,
    rollout_text: &str,
    reference_text: &str,
) -> Result<f64> {
    let prompt = prompts.render_model_judge(rollout_text, reference_text)?;
    let reply = backend.generate(judge, &[Message::user(prompt)], &SamplingParams::greedy(), false)?;
    let yes = reply.text.rfind("FINAL DECISION: YES");
    let no = reply.text.rfind("FINAL DECISION: NO");
    Ok(match (yes, no) {
        (Some(y), Some(n)) => {
            if y > n {
                1.0
            } else {
                0.0
            }
        }
        (Some(_), None) => 1.0,
        (None, Some(_)) => 0.0,
        (None, None) => {
            log::warn!("JudgeParseAnomaly: model-as-judge reply has no FINAL DECISION marker");
            0.0
        }
    })
}
