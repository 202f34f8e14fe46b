//! Inference-time selection baselines: Single, self-selected best-of-N,
//! minimum trajectory perplexity, and mutual predictability.
//!
//! Every selector returns text byte-equal to some rollout in the group;
//! selection never synthesizes. That is the structural contrast to the
//! synthesis path, which may leave the rollout set entirely.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{Backend, EndpointHandle, Message, SamplingParams};
use crate::error::{Error, Result};
use crate::prompts::PromptSet;
use crate::synthesis::RolloutGroup;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMethod {
    Single,
    SelfBon,
    MinPpl,
    Mp,
    Majority,
    Cat,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionResult {
    pub method: SelectionMethod,
    pub chosen_index: Option<usize>,
    pub chosen_text: String,
    pub score: Option<f64>,
}

/// exp(−mean logprob); 1.0 for a certain sequence.
pub fn perplexity(logprobs: &[f64]) -> Result<f64> {
    if logprobs.is_empty() {
        return Err(Error::EmptyLogprobs);
    }
    let mean = logprobs.iter().sum::<f64>() / logprobs.len() as f64;
    Ok((-mean).exp())
}

/// The first rollout, as a one-sample baseline.
pub fn select_single(group: &RolloutGroup) -> Result<SelectionResult> {
    let first = group.rollouts.first().ok_or(Error::GroupTooSmall(0))?;
    Ok(SelectionResult {
        method: SelectionMethod::Single,
        chosen_index: Some(0),
        chosen_text: first.text.clone(),
        score: None,
    })
}

/// Argmin of trajectory perplexity; ties go to the lowest index.
pub fn select_min_ppl(group: &RolloutGroup) -> Result<SelectionResult> {
    let mut best: Option<(usize, f64)> = None;
    for (i, rollout) in group.rollouts.iter().enumerate() {
        let logprobs = rollout
            .token_logprobs
            .as_deref()
            .ok_or(Error::MissingLogprobs(i))?;
        let ppl = perplexity(logprobs)?;
        if best.is_none_or(|(_, b)| ppl < b) {
            best = Some((i, ppl));
        }
    }
    let (index, ppl) = best.ok_or(Error::GroupTooSmall(0))?;
    Ok(SelectionResult {
        method: SelectionMethod::MinPpl,
        chosen_index: Some(index),
        chosen_text: group.rollouts[index].text.clone(),
        score: Some(ppl),
    })
}

/// The conditioning prefix for mutual predictability: all other rollouts in
/// the given order, then a header for the candidate.
pub fn mp_prompt(others: &[String]) -> String {
    format!(
        "Here are several responses to the same question.\n\n{}\n## Response {}\n",
        PromptSet::rollout_block(others),
        others.len() + 1
    )
}

/// Seeded ordering of the other rollouts for candidate `j`.
fn mp_order(group_len: usize, j: usize, seed: u64) -> Vec<usize> {
    let mut others: Vec<usize> = (0..group_len).filter(|&k| k != j).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(j as u64));
    others.shuffle(&mut rng);
    others
}

/// Mutual predictability: pick the rollout whose tokens are most likely when
/// the policy is conditioned on all the others. Deterministic given the seed.
pub fn select_mp(
    backend: &dyn Backend,
    policy: &EndpointHandle,
    group: &RolloutGroup,
    seed: u64,
) -> Result<SelectionResult> {
    if group.len() < 2 {
        return Err(Error::GroupTooSmall(group.len()));
    }
    let texts = group.texts();
    let mut best: Option<(usize, f64)> = None;
    for j in 0..texts.len() {
        let order = mp_order(texts.len(), j, seed);
        let others: Vec<String> = order.iter().map(|&k| texts[k].clone()).collect();
        let prefix = mp_prompt(&others);
        let logprobs = backend.score(policy, &prefix, &texts[j])?;
        let ppl = perplexity(&logprobs)?;
        if best.is_none_or(|(_, b)| ppl < b) {
            best = Some((j, ppl));
        }
    }
    let (index, ppl) = best.unwrap();
    Ok(SelectionResult {
        method: SelectionMethod::Mp,
        chosen_index: Some(index),
        chosen_text: texts[index].clone(),
        score: Some(ppl),
    })
}

fn first_in_range_integer(reply: &str, g: usize) -> Option<usize> {
    let mut digits = String::new();
    for c in reply.chars().chain(std::iter::once(' ')) {
        if c.is_ascii_digit() {
            digits.push(c);
        } else if !digits.is_empty() {
            if let Ok(n) = digits.parse::<usize>() {
                if (1..=g).contains(&n) {
                    return Some(n - 1);
                }
            }
            digits.clear();
        }
    }
    None
}

/// Self-selected best-of-N: the policy picks its own best response by number.
/// Replies are 1-indexed; the result is 0-indexed. One retry on a reply with
/// no in-range integer.
pub fn select_self_bon(
    backend: &dyn Backend,
    policy: &EndpointHandle,
    prompts: &PromptSet,
    group: &RolloutGroup,
) -> Result<SelectionResult> {
    if group.is_empty() {
        return Err(Error::GroupTooSmall(0));
    }
    let prompt = prompts.render_self_bon(&group.texts())?;
    let messages = vec![Message::user(prompt)];
    let mut last_reply = String::new();
    for _ in 0..2 {
        let reply = backend.generate(policy, &messages, &SamplingParams::greedy(), false)?;
        if let Some(index) = first_in_range_integer(&reply.text, group.len()) {
            return Ok(SelectionResult {
                method: SelectionMethod::SelfBon,
                chosen_index: Some(index),
                chosen_text: group.rollouts[index].text.clone(),
                score: None,
            });
        }
        last_reply = reply.text;
    }
    Err(Error::SelectionParse(last_reply))
}
