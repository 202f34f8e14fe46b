//! Verifiable-domain reward: boxed-answer extraction, string normalization,
//! the equivalence check, and majority vote over extracted answers.
//!
//! Equivalence is string normalization only, no symbolic evaluation: the
//! normal forms of `0.5` and `\frac{1}{2}` stay distinct by design, which
//! trades some false negatives for a fully auditable check.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthesis::{Rollout, RolloutGroup, SynthesizedReference};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractedAnswer {
    /// Contents of the boxed expression, verbatim.
    pub raw: String,
    pub normalized: String,
}

impl ExtractedAnswer {
    pub fn from_raw(raw: impl Into<String>) -> Self {
        let raw = raw.into();
        let normalized = normalize(&raw);
        ExtractedAnswer { raw, normalized }
    }
}

const BOXED: &str = "\\boxed{";

/// Contents of the last `\boxed{...}` in `text`, balanced-brace matched.
/// Absence (including an unbalanced box) is a value, not an error.
pub fn extract_boxed(text: &str) -> Option<ExtractedAnswer> {
    let start = text.rfind(BOXED)? + BOXED.len();
    let mut depth = 1usize;
    for (i, c) in text[start..].char_indices() {
        match c {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(ExtractedAnswer::from_raw(&text[start..start + i]));
                }
            }
            _ => {}
        }
    }
    None
}

/// Deterministic, idempotent normal form: trim, drop outer `$` pairs and
/// trailing periods, remove all whitespace, lowercase letters outside TeX
/// commands, map `\dfrac` to `\frac`, drop `\left`/`\right`.
pub fn normalize(raw: &str) -> String {
    let mut s = raw.trim().to_string();
    loop {
        let before = s.len();
        while s.ends_with('.') {
            s.pop();
        }
        s = s.trim().to_string();
        if s.len() >= 2 && s.starts_with('$') && s.ends_with('$') {
            s = s[1..s.len() - 1].to_string();
        }
        if s.len() == before {
            break;
        }
    }

    let chars: Vec<char> = s.chars().collect();
    let mut out = String::with_capacity(s.len());
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c == '\\' {
            let mut j = i + 1;
            while j < chars.len() && chars[j].is_ascii_alphabetic() {
                j += 1;
            }
            let cmd: String = chars[i..j].iter().collect();
            match cmd.as_str() {
                "\\dfrac" => out.push_str("\\frac"),
                "\\left" | "\\right" => {}
                _ => out.push_str(&cmd),
            }
            i = j;
        } else if c.is_ascii_alphabetic() {
            out.push(c.to_ascii_lowercase());
            i += 1;
        } else {
            out.push(c);
            i += 1;
        }
    }
    out
}

pub fn answers_equal(a: &ExtractedAnswer, b: &ExtractedAnswer) -> bool {
    a.normalized == b.normalized
}

/// `v(o, s)`: 1 iff the rollout's extracted answer matches the reference's.
/// A rollout without a boxed answer scores 0, never errors — the optimizer
/// needs a reward for every group member.
pub fn reward_verifiable(rollout: &Rollout, reference: &SynthesizedReference) -> Result<f64> {
    let ref_answer = reference
        .extracted_answer
        .as_deref()
        .ok_or(Error::MissingReferenceAnswer)?;
    let ref_answer = ExtractedAnswer::from_raw(ref_answer);
    Ok(match extract_boxed(&rollout.text) {
        Some(ans) if answers_equal(&ans, &ref_answer) => 1.0,
        _ => 0.0,
    })
}

/// Mode of normalized extracted answers; ties go to the earliest rollout
/// index holding a tied answer. Empty when no rollout produced a box.
pub fn majority_answer(group: &RolloutGroup) -> Option<ExtractedAnswer> {
    let mut counts: HashMap<String, usize> = HashMap::new();
    let mut first_index: HashMap<String, usize> = HashMap::new();
    let mut first_answer: HashMap<String, ExtractedAnswer> = HashMap::new();
    for (i, r) in group.rollouts.iter().enumerate() {
        if let Some(ans) = extract_boxed(&r.text) {
            *counts.entry(ans.normalized.clone()).or_insert(0) += 1;
            first_index.entry(ans.normalized.clone()).or_insert(i);
            first_answer.entry(ans.normalized.clone()).or_insert(ans);
        }
    }
    let best = counts
        .iter()
        .min_by_key(|(key, count)| (std::cmp::Reverse(**count), first_index[*key]))?;
    Some(first_answer[best.0].clone())
}
