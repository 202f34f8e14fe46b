//! Inference-time runs: toy-world synthesis-vs-selection comparisons, the
//! group-size sweep with coupled prefixes, and the endpoint-facing pipeline
//! behind the `infer` and `evaluate` commands.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::RunConfig;
use super::report::write_summary;
use crate::backend::Backend;
use crate::error::{Error, Result};
use crate::prompts::PromptSet;
use crate::select::{self, SelectionMethod, SelectionResult};
use crate::synthesis::{self, Domain, Question, RolloutGroup, SynthesizedReference};
use crate::toyworld::{majority_string, toy_sample, toy_synthesize, ToyPolicy, ToyTask};
use crate::verify::{self, ExtractedAnswer};

fn mix(seed: u64, tag: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(tag.as_bytes());
    hasher.update(index.to_le_bytes());
    let d = hasher.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

/// Aggregate outcome of many seeded toy groups under the frozen initial
/// policy: how often each reference-producing strategy hits the truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToyInferSummary {
    pub groups: usize,
    pub g: usize,
    /// Per-position plurality synthesis hits the truth.
    pub synthesis_accuracy: f64,
    /// Whole-string majority vote hits the truth.
    pub majority_accuracy: f64,
    /// Rollout 0 hits the truth.
    pub single_accuracy: f64,
    /// Synthesis differs from the majority-vote string.
    pub frac_synthesis_neq_majority: f64,
    /// Synthesis is correct while every rollout in the group is wrong —
    /// the signature of a teacher that leaves the rollout set.
    pub frac_synthesis_correct_all_wrong: f64,
}

/// Compare plurality synthesis against the in-group selection ceilings over
/// `groups` independently seeded toy rollout groups.
pub fn toy_infer(config: &RunConfig, groups: usize) -> Result<ToyInferSummary> {
    config.validate()?;
    if groups == 0 {
        return Err(Error::InvalidInput("need at least one group".into()));
    }
    let task = ToyTask {
        answer_len: config.toy.answer_len,
        alphabet: config.toy.alphabet,
        pool: config.toy.pool,
        seed: config.seed,
    };
    let policy =
        ToyPolicy::biased_toward_truth(&task, config.toy.init_truth_logit, config.toy.init_noise, config.seed);
    let anchor = crate::toyworld::ScriptedAnchor::plurality();

    let mut synthesis_hits = 0usize;
    let mut majority_hits = 0usize;
    let mut single_hits = 0usize;
    let mut differs = 0usize;
    let mut rescued = 0usize;
    for i in 0..groups {
        let q = i % task.pool;
        let truth = task.truth_string(q);
        let group = toy_sample(&policy, q, config.g, mix(config.seed, "infer", i as u64))?;
        let synth = toy_synthesize(&anchor, &group, None)?;
        let majority = majority_string(&group);
        if synth.text == truth {
            synthesis_hits += 1;
            if group.texts().iter().all(|t| *t != truth) {
                rescued += 1;
            }
        }
        if majority == truth {
            majority_hits += 1;
        }
        if group.rollouts[0].text == truth {
            single_hits += 1;
        }
        if synth.text != majority {
            differs += 1;
        }
    }

    let n = groups as f64;
    let summary = ToyInferSummary {
        groups,
        g: config.g,
        synthesis_accuracy: synthesis_hits as f64 / n,
        majority_accuracy: majority_hits as f64 / n,
        single_accuracy: single_hits as f64 / n,
        frac_synthesis_neq_majority: differs as f64 / n,
        frac_synthesis_correct_all_wrong: rescued as f64 / n,
    };
    std::fs::create_dir_all(&config.out_dir)?;
    write_summary(&config.out_dir.join("toy_infer.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub g: usize,
    pub teacher_accuracy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub trials: usize,
    pub rows: Vec<SweepRow>,
    /// Rollout-0 accuracy over the same trials; the G=1 row coincides with it
    /// by construction.
    pub single_accuracy: f64,
}

/// Teacher accuracy as a function of group size, with coupled samples: each
/// trial draws the maximum-G group once and every smaller G scores a prefix
/// of it, so rows differ only in how many rollouts the anchor sees.
pub fn sweep_g(config: &RunConfig, values: &[usize], trials: usize) -> Result<SweepReport> {
    config.validate()?;
    if values.is_empty() {
        return Err(Error::InvalidInput("sweep needs at least one group size".into()));
    }
    if values.contains(&0) {
        return Err(Error::InvalidInput("group sizes must be >= 1".into()));
    }
    if trials == 0 {
        return Err(Error::InvalidInput("need at least one trial".into()));
    }
    let mut values = values.to_vec();
    values.sort_unstable();
    values.dedup();
    let max_g = *values.last().unwrap();

    let task = ToyTask {
        answer_len: config.toy.answer_len,
        alphabet: config.toy.alphabet,
        pool: config.toy.pool,
        seed: config.seed,
    };
    let policy =
        ToyPolicy::biased_toward_truth(&task, config.toy.init_truth_logit, config.toy.init_noise, config.seed);
    let anchor = crate::toyworld::ScriptedAnchor::plurality();

    let mut hits = vec![0usize; values.len()];
    let mut single_hits = 0usize;
    for t in 0..trials {
        let q = t % task.pool;
        let truth = task.truth_string(q);
        let full = toy_sample(&policy, q, max_g, mix(config.seed, "sweep", t as u64))?;
        if full.rollouts[0].text == truth {
            single_hits += 1;
        }
        for (vi, &g) in values.iter().enumerate() {
            let prefix = RolloutGroup {
                question_id: full.question_id.clone(),
                rollouts: full.rollouts[..g].to_vec(),
                sampling: full.sampling.clone(),
            };
            if toy_synthesize(&anchor, &prefix, None)?.text == truth {
                hits[vi] += 1;
            }
        }
    }

    let report = SweepReport {
        trials,
        rows: values
            .iter()
            .zip(hits.iter())
            .map(|(&g, &h)| SweepRow { g, teacher_accuracy: h as f64 / trials as f64 })
            .collect(),
        single_accuracy: single_hits as f64 / trials as f64,
    };
    std::fs::create_dir_all(&config.out_dir)?;
    write_summary(&config.out_dir.join("sweep.json"), &report)?;
    write_sweep_csv(&config.out_dir.join("sweep.csv"), &report)?;
    Ok(report)
}

fn write_sweep_csv(path: &Path, report: &SweepReport) -> Result<()> {
    let mut csv = String::from("g,teacher_accuracy\n");
    for row in &report.rows {
        csv.push_str(&format!("{},{:.6}\n", row.g, row.teacher_accuracy));
    }
    std::fs::write(path, csv)?;
    Ok(())
}

/// One question's outcome in an endpoint-facing run: the synthesized
/// reference next to each requested baseline's pick.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuestionOutcome {
    pub question_id: String,
    pub reference: SynthesizedReference,
    pub selections: Vec<SelectionResult>,
    /// method label → matched the gold answer, when one was provided.
    pub correct: BTreeMap<String, bool>,
    /// method label → why it produced nothing for this question.
    pub skipped: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CatInferReport {
    pub questions: usize,
    pub g: usize,
    pub rows: Vec<QuestionOutcome>,
    /// method label → accuracy over questions with gold answers, absent when
    /// no question carried one or the method never ran.
    pub method_accuracy: BTreeMap<String, f64>,
}

fn method_label(m: SelectionMethod) -> &'static str {
    match m {
        SelectionMethod::Single => "single",
        SelectionMethod::SelfBon => "self_bon",
        SelectionMethod::MinPpl => "min_ppl",
        SelectionMethod::Mp => "mp",
        SelectionMethod::Majority => "majority",
        SelectionMethod::Cat => "cat",
    }
}

/// A question record in the input JSONL; `answer` is optional gold for
/// accuracy scoring.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub id: String,
    pub text: String,
    pub domain: Domain,
    #[serde(default)]
    pub answer: Option<String>,
}

pub fn load_questions(path: &Path) -> Result<Vec<QuestionRecord>> {
    let text = std::fs::read_to_string(path)?;
    let records: Vec<QuestionRecord> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect::<std::result::Result<_, _>>()?;
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(records)
}

fn answer_of(text: &str, domain: Domain) -> ExtractedAnswer {
    // synthesis stores an already-extracted answer; selections carry full
    // rollout text, so extract for verifiable questions
    match domain {
        Domain::Verifiable => {
            verify::extract_boxed(text).unwrap_or_else(|| ExtractedAnswer::from_raw(""))
        }
        Domain::NonVerifiable => ExtractedAnswer::from_raw(text),
    }
}

/// Sample a group per question, synthesize the reference, and run every
/// requested selection baseline against the same group. Baselines that
/// cannot run (missing logprobs, group too small) are recorded per question
/// rather than failing the run.
pub fn cat_infer(
    config: &RunConfig,
    backend: &dyn Backend,
    questions: &[QuestionRecord],
    baselines: &[SelectionMethod],
) -> Result<CatInferReport> {
    config.validate()?;
    let backend_config = config
        .backend
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("endpoint-facing run needs a [backend] section".into()))?;
    if questions.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let prompts = match &config.prompts_dir {
        Some(dir) => PromptSet::with_overrides(dir)?,
        None => PromptSet::embedded(),
    };

    let mut rows = Vec::with_capacity(questions.len());
    let mut correct_counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (qi, record) in questions.iter().enumerate() {
        let question = Question::new(&record.id, &record.text, record.domain)?;
        let mut params = config.sampling.clone();
        params.seed = Some(mix(config.seed, "gen", qi as u64));
        let want_logprobs = baselines.contains(&SelectionMethod::MinPpl);
        let group = synthesis::sample_group(
            backend,
            &backend_config.policy,
            &question,
            config.g,
            &params,
            want_logprobs,
        )?;
        let reference = synthesis::synthesize(
            backend,
            &backend_config.anchor,
            &prompts,
            &group,
            record.domain,
            &crate::backend::SamplingParams::greedy(),
        )?;

        let mut selections = Vec::new();
        let mut skipped = BTreeMap::new();
        for &method in baselines {
            let outcome = match method {
                SelectionMethod::Single => select::select_single(&group),
                SelectionMethod::MinPpl => select::select_min_ppl(&group),
                SelectionMethod::Mp => {
                    select::select_mp(backend, &backend_config.policy, &group, mix(config.seed, "mp", qi as u64))
                }
                SelectionMethod::SelfBon => {
                    select::select_self_bon(backend, &backend_config.policy, &prompts, &group)
                }
                SelectionMethod::Majority => {
                    let answer = verify::majority_answer(&group);
                    Ok(SelectionResult {
                        method,
                        chosen_index: None,
                        chosen_text: answer.map(|a| a.normalized).unwrap_or_default(),
                        score: None,
                    })
                }
                SelectionMethod::Cat => continue, // always present as the reference
            };
            match outcome {
                Ok(selection) => selections.push(selection),
                Err(e) => {
                    log::warn!("{} skipped on {}: {e}", method_label(method), record.id);
                    skipped.insert(method_label(method).to_string(), e.to_string());
                }
            }
        }

        let mut correct = BTreeMap::new();
        if let Some(gold_raw) = &record.answer {
            let gold = ExtractedAnswer::from_raw(gold_raw);
            let cat_answer = match record.domain {
                Domain::Verifiable => reference
                    .extracted_answer
                    .clone()
                    .map(|a| ExtractedAnswer { raw: a.clone(), normalized: a })
                    .unwrap_or_else(|| ExtractedAnswer::from_raw("")),
                Domain::NonVerifiable => ExtractedAnswer::from_raw(&reference.text),
            };
            correct.insert("cat".to_string(), verify::answers_equal(&cat_answer, &gold));
            for selection in &selections {
                let answer = if selection.method == SelectionMethod::Majority {
                    ExtractedAnswer { raw: selection.chosen_text.clone(), normalized: selection.chosen_text.clone() }
                } else {
                    answer_of(&selection.chosen_text, record.domain)
                };
                correct.insert(
                    method_label(selection.method).to_string(),
                    verify::answers_equal(&answer, &gold),
                );
            }
            for (label, hit) in &correct {
                let entry = correct_counts.entry(label.clone()).or_insert((0, 0));
                entry.1 += 1;
                if *hit {
                    entry.0 += 1;
                }
            }
        }
        rows.push(QuestionOutcome {
            question_id: record.id.clone(),
            reference,
            selections,
            correct,
            skipped,
        });
    }

    let method_accuracy = correct_counts
        .into_iter()
        .map(|(label, (hits, total))| (label, hits as f64 / total as f64))
        .collect();
    let report = CatInferReport { questions: questions.len(), g: config.g, rows, method_accuracy };

    std::fs::create_dir_all(&config.out_dir)?;
    write_summary(&config.out_dir.join("infer.json"), &report)?;
    let mut csv = String::from("method,accuracy\n");
    for (label, acc) in &report.method_accuracy {
        csv.push_str(&format!("{label},{acc:.6}\n"));
    }
    std::fs::write(config.out_dir.join("accuracy.csv"), csv)?;
    Ok(report)
}
