//! Desk-scale substrate: a synthetic verifiable task over fixed-length
//! symbol strings, an exactly-differentiable factorized categorical policy,
//! a scripted reconciling anchor, and a positional rubric judge. Everything
//! here has closed-form log-probabilities and gradients, so the optimizer is
//! verified against ground truth rather than another learned system.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::SamplingParams;
use crate::error::{Error, Result};
use crate::rubric::{Decision, Verdict};
use crate::synthesis::{Rollout, RolloutGroup, SynthesizedReference};

const CHARSET: &[u8] = b"0123456789abcdefghijklmnopqrstuvwxyz";

pub fn symbol_char(sym: usize) -> char {
    CHARSET[sym] as char
}

pub fn decode_symbols(text: &str) -> Result<Vec<usize>> {
    text.bytes()
        .map(|b| {
            CHARSET
                .iter()
                .position(|&c| c == b)
                .ok_or_else(|| Error::InvalidInput(format!("symbol {:?} outside toy alphabet", b as char)))
        })
        .collect()
}

pub fn encode_symbols(symbols: &[usize]) -> String {
    symbols.iter().map(|&s| symbol_char(s)).collect()
}

fn mix_seed(seed: u64, tag: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(tag.as_bytes());
    hasher.update(index.to_le_bytes());
    let d = hasher.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

/// The hidden task: one truth string per question in a small pool, stable
/// across runs for a fixed seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToyTask {
    pub answer_len: usize,
    pub alphabet: usize,
    pub pool: usize,
    pub seed: u64,
}

impl Default for ToyTask {
    fn default() -> Self {
        ToyTask { answer_len: 4, alphabet: 10, pool: 64, seed: 0 }
    }
}

impl ToyTask {
    pub fn truth(&self, question: usize) -> Vec<usize> {
        let mut rng = ChaCha20Rng::seed_from_u64(mix_seed(self.seed, "truth", question as u64));
        (0..self.answer_len).map(|_| rng.gen_range(0..self.alphabet)).collect()
    }

    pub fn truth_string(&self, question: usize) -> String {
        encode_symbols(&self.truth(question))
    }
}

/// Factorized categorical policy: independent per-position distributions
/// conditioned on a one-hot question feature. Log-probabilities and their
/// gradients are closed-form.
#[derive(Debug, Clone)]
pub struct ToyPolicy {
    pub pool: usize,
    pub answer_len: usize,
    pub alphabet: usize,
    /// Flat [pool × answer_len × alphabet] logit tensor.
    pub logits: Vec<f64>,
}

impl ToyPolicy {
    pub fn uniform(task: &ToyTask) -> Self {
        ToyPolicy {
            pool: task.pool,
            answer_len: task.answer_len,
            alphabet: task.alphabet,
            logits: vec![0.0; task.pool * task.answer_len * task.alphabet],
        }
    }

    /// A partially-competent starting point: the true symbol gets a logit
    /// head start plus small seeded noise everywhere.
    pub fn biased_toward_truth(task: &ToyTask, truth_logit: f64, noise: f64, seed: u64) -> Self {
        let mut policy = ToyPolicy::uniform(task);
        let mut rng = ChaCha20Rng::seed_from_u64(mix_seed(seed, "init", 0));
        for q in 0..task.pool {
            let truth = task.truth(q);
            for (pos, &true_sym) in truth.iter().enumerate() {
                for sym in 0..task.alphabet {
                    let mut v = (rng.gen::<f64>() - 0.5) * 2.0 * noise;
                    if sym == true_sym {
                        v += truth_logit;
                    }
                    let idx = policy.index(q, pos, sym);
                    policy.logits[idx] = v;
                }
            }
        }
        policy
    }

    #[inline]
    pub fn index(&self, q: usize, pos: usize, sym: usize) -> usize {
        (q * self.answer_len + pos) * self.alphabet + sym
    }

    pub fn param_count(&self) -> usize {
        self.logits.len()
    }

    pub fn probs(&self, q: usize, pos: usize) -> Vec<f64> {
        let base = (q * self.answer_len + pos) * self.alphabet;
        let row = &self.logits[base..base + self.alphabet];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&l| (l - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / sum).collect()
    }

    pub fn logprob(&self, q: usize, pos: usize, sym: usize) -> f64 {
        let base = (q * self.answer_len + pos) * self.alphabet;
        let row = &self.logits[base..base + self.alphabet];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_sum: f64 = row.iter().map(|&l| (l - max).exp()).sum::<f64>().ln() + max;
        row[sym] - log_sum
    }

    pub fn sample_answer(&self, q: usize, rng: &mut impl Rng) -> (Vec<usize>, Vec<f64>) {
        let mut symbols = Vec::with_capacity(self.answer_len);
        let mut logprobs = Vec::with_capacity(self.answer_len);
        for pos in 0..self.answer_len {
            let probs = self.probs(q, pos);
            let sym = WeightedIndex::new(&probs).unwrap().sample(rng);
            symbols.push(sym);
            logprobs.push(self.logprob(q, pos, sym));
        }
        (symbols, logprobs)
    }

    /// Exact probability that one sampled answer equals `answer`.
    pub fn answer_prob(&self, q: usize, answer: &[usize]) -> f64 {
        answer
            .iter()
            .enumerate()
            .map(|(pos, &sym)| self.probs(q, pos)[sym])
            .product()
    }

    /// grad[θ_{q,pos,k}] += weight · ∂logπ(sym | q,pos)/∂θ_{q,pos,k}
    ///                    = weight · (1[k=sym] − p_k)
    pub fn accumulate_logprob_grad(&self, q: usize, pos: usize, sym: usize, weight: f64, grad: &mut [f64]) {
        let probs = self.probs(q, pos);
        for (k, &p) in probs.iter().enumerate() {
            let indicator = if k == sym { 1.0 } else { 0.0 };
            grad[self.index(q, pos, k)] += weight * (indicator - p);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorRule {
    PerPositionPlurality,
    Identity,
    /// With probability p return the truth, otherwise plurality.
    OracleBlend(f64),
}

/// Desk-scale stand-in for the frozen anchor: a pure function of the rollout
/// set and its seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptedAnchor {
    pub rule: AnchorRule,
    pub seed: u64,
}

impl ScriptedAnchor {
    pub fn plurality() -> Self {
        ScriptedAnchor { rule: AnchorRule::PerPositionPlurality, seed: 0 }
    }

    pub fn identity() -> Self {
        ScriptedAnchor { rule: AnchorRule::Identity, seed: 0 }
    }

    pub fn label(&self) -> String {
        match self.rule {
            AnchorRule::PerPositionPlurality => "toy-anchor:plurality".into(),
            AnchorRule::Identity => "toy-anchor:identity".into(),
            AnchorRule::OracleBlend(p) => format!("toy-anchor:oracle_blend({p})"),
        }
    }
}

/// Sample a toy rollout group with exact per-token logprobs attached.
pub fn toy_sample(policy: &ToyPolicy, question: usize, g: usize, rng_seed: u64) -> Result<RolloutGroup> {
    if g < 1 {
        return Err(Error::InvalidInput("group size must be >= 1".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(mix_seed(rng_seed, "sample", question as u64));
    let rollouts = (0..g)
        .map(|_| {
            let (symbols, logprobs) = policy.sample_answer(question, &mut rng);
            Rollout::with_logprobs(encode_symbols(&symbols), logprobs)
        })
        .collect();
    Ok(RolloutGroup {
        question_id: format!("toy-{question}"),
        rollouts,
        sampling: SamplingParams::default(),
    })
}

/// Per-position plurality symbol; ties go to the symbol held by the lowest
/// rollout index at that position.
fn plurality_string(answers: &[Vec<usize>]) -> Vec<usize> {
    let len = answers[0].len();
    let mut out = Vec::with_capacity(len);
    for pos in 0..len {
        let mut counts = std::collections::HashMap::new();
        for a in answers {
            *counts.entry(a[pos]).or_insert(0usize) += 1;
        }
        let max = *counts.values().max().unwrap();
        let winner = answers
            .iter()
            .map(|a| a[pos])
            .find(|sym| counts[sym] == max)
            .unwrap();
        out.push(winner);
    }
    out
}

/// Whole-string majority vote: mode of the rollout strings, ties to the
/// earliest rollout index.
pub fn majority_string(group: &RolloutGroup) -> String {
    let texts = group.texts();
    let mut counts = std::collections::HashMap::new();
    for t in &texts {
        *counts.entry(t.clone()).or_insert(0usize) += 1;
    }
    let max = *counts.values().max().unwrap();
    texts.iter().find(|t| counts[*t] == max).unwrap().clone()
}

/// The scripted anchor's synthesis step over a rollout group of equal-length
/// answers. `truth` feeds the oracle_blend rule only.
pub fn toy_synthesize(
    anchor: &ScriptedAnchor,
    group: &RolloutGroup,
    truth: Option<&[usize]>,
) -> Result<SynthesizedReference> {
    if group.is_empty() {
        return Err(Error::EmptyRollouts);
    }
    let answers: Vec<Vec<usize>> = group
        .texts()
        .iter()
        .map(|t| decode_symbols(t))
        .collect::<Result<_>>()?;
    let len = answers[0].len();
    if answers.iter().any(|a| a.len() != len) {
        return Err(Error::UnequalLengths);
    }

    let symbols = match anchor.rule {
        AnchorRule::Identity => answers[0].clone(),
        AnchorRule::PerPositionPlurality => plurality_string(&answers),
        AnchorRule::OracleBlend(p) => {
            let truth =
                truth.ok_or_else(|| Error::InvalidInput("oracle_blend needs the truth string".into()))?;
            let mut hasher = Sha256::new();
            hasher.update(group.question_id.as_bytes());
            let d = hasher.finalize();
            let mut rng = ChaCha20Rng::seed_from_u64(
                anchor.seed ^ u64::from_le_bytes(d[..8].try_into().unwrap()),
            );
            if rng.gen::<f64>() < p {
                truth.to_vec()
            } else {
                plurality_string(&answers)
            }
        }
    };
    let text = encode_symbols(&symbols);
    Ok(SynthesizedReference {
        extracted_answer: Some(text.clone()),
        text,
        source_group: group.question_id.clone(),
        anchor_model: anchor.label(),
    })
}

/// A positional criterion derived from the synthesized reference:
/// "position `pos` holds symbol `sym`".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositionCriterion {
    pub pos: usize,
    pub sym: usize,
}

pub fn toy_rubric(reference: &SynthesizedReference) -> Result<Vec<PositionCriterion>> {
    let symbols = decode_symbols(&reference.text)?;
    Ok(symbols
        .iter()
        .enumerate()
        .map(|(pos, &sym)| PositionCriterion { pos, sym })
        .collect())
}

/// Deterministic positional judge; rubric reward over all criteria equals
/// per-position agreement with the reference.
pub fn toy_judge(rollout_text: &str, criterion: PositionCriterion) -> Verdict {
    let holds = decode_symbols(rollout_text)
        .ok()
        .and_then(|symbols| symbols.get(criterion.pos).copied()) == Some(criterion.sym);
    Verdict {
        criterion_index: criterion.pos,
        decision: if holds { Decision::Yes } else { Decision::No },
        reasoning: format!("position {} vs symbol {}", criterion.pos, symbol_char(criterion.sym)),
        anomaly: false,
    }
}

/// Fraction of positional criteria satisfied.
pub fn toy_rubric_reward(rollout_text: &str, reference: &SynthesizedReference) -> Result<f64> {
    let rubric = toy_rubric(reference)?;
    if rubric.is_empty() {
        return Err(Error::EmptyRubric);
    }
    let yes = rubric
        .iter()
        .filter(|&&c| toy_judge(rollout_text, c).decision == Decision::Yes)
        .count();
    Ok(yes as f64 / rubric.len() as f64)
}
