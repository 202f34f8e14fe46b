//! Storage and rendering of the prompt templates.
//!
//! The five templates ship embedded in the binary and can be overridden by a
//! directory of UTF-8 text files (config key `prompts.dir`). Rendering is
//! pure placeholder substitution; the synthesis renderers never receive the
//! question, so the rendered prompt cannot contain it unless a rollout does.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};

pub const SYN_FREEFORM: &str = include_str!("../templates/syn_freeform.txt");
pub const SYN_COT: &str = include_str!("../templates/syn_cot.txt");
pub const RUBRIC_GEN: &str = include_str!("../templates/rubric_gen.txt");
pub const RUBRIC_JUDGE: &str = include_str!("../templates/rubric_judge.txt");
pub const MODEL_JUDGE: &str = include_str!("../templates/model_judge.txt");
/// Best-of-N self-selection prompt. Not from the source material; a minimal
/// fixed wording kept beside the other templates.
pub const SELF_BON: &str = include_str!("../templates/self_bon.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PromptName {
    SynFreeform,
    SynCot,
    RubricGen,
    RubricJudge,
    ModelJudge,
    SelfBon,
}

impl PromptName {
    pub const ALL: [PromptName; 6] = [
        PromptName::SynFreeform,
        PromptName::SynCot,
        PromptName::RubricGen,
        PromptName::RubricJudge,
        PromptName::ModelJudge,
        PromptName::SelfBon,
    ];

    pub fn file_stem(self) -> &'static str {
        match self {
            PromptName::SynFreeform => "syn_freeform",
            PromptName::SynCot => "syn_cot",
            PromptName::RubricGen => "rubric_gen",
            PromptName::RubricJudge => "rubric_judge",
            PromptName::ModelJudge => "model_judge",
            PromptName::SelfBon => "self_bon",
        }
    }

    fn default_body(self) -> &'static str {
        match self {
            PromptName::SynFreeform => SYN_FREEFORM,
            PromptName::SynCot => SYN_COT,
            PromptName::RubricGen => RUBRIC_GEN,
            PromptName::RubricJudge => RUBRIC_JUDGE,
            PromptName::ModelJudge => MODEL_JUDGE,
            PromptName::SelfBon => SELF_BON,
        }
    }
}

impl fmt::Display for PromptName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.file_stem())
    }
}

#[derive(Debug, Clone)]
pub struct PromptSet {
    bodies: HashMap<PromptName, String>,
}

impl Default for PromptSet {
    fn default() -> Self {
        PromptSet::embedded()
    }
}

impl PromptSet {
    pub fn embedded() -> Self {
        let bodies = PromptName::ALL
            .iter()
            .map(|&n| (n, n.default_body().to_string()))
            .collect();
        PromptSet { bodies }
    }

    /// Embedded defaults, with any `<stem>.txt` found in `dir` taking over.
    pub fn with_overrides(dir: &Path) -> Result<Self> {
        let mut set = PromptSet::embedded();
        for name in PromptName::ALL {
            let path = dir.join(format!("{}.txt", name.file_stem()));
            if path.is_file() {
                set.bodies.insert(name, std::fs::read_to_string(&path)?);
            }
        }
        Ok(set)
    }

    pub fn body(&self, name: PromptName) -> &str {
        &self.bodies[&name]
    }

    /// Rollouts rendered as numbered sections, 1-indexed, in sampling order.
    pub fn rollout_block(rollouts: &[String]) -> String {
        rollouts
            .iter()
            .enumerate()
            .map(|(i, text)| format!("## Response {}\n{}\n", i + 1, text))
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Render a synthesis prompt from the rollout texts alone.
    pub fn render_synthesis(&self, name: PromptName, rollouts: &[String]) -> Result<String> {
        if !matches!(name, PromptName::SynFreeform | PromptName::SynCot) {
            return Err(Error::InvalidInput(format!("{name} is not a synthesis template")));
        }
        if rollouts.is_empty() {
            return Err(Error::EmptyRollouts);
        }
        Ok(self.body(name).replace("{rollouts}", &Self::rollout_block(rollouts)))
    }

    pub fn render_rubric_gen(&self, reference: &str) -> Result<String> {
        if reference.is_empty() {
            return Err(Error::EmptySubstitution("response"));
        }
        Ok(self.body(PromptName::RubricGen).replace("{response}", reference))
    }

    pub fn render_rubric_judge(&self, criterion: &str, predicted_answer: &str) -> Result<String> {
        if criterion.is_empty() {
            return Err(Error::EmptySubstitution("rubric"));
        }
        if predicted_answer.is_empty() {
            return Err(Error::EmptySubstitution("predicted_answer"));
        }
        Ok(self
            .body(PromptName::RubricJudge)
            .replace("{rubric}", criterion)
            .replace("{predicted_answer}", predicted_answer))
    }

    /// The model-as-judge template has no placeholders; the two answers are
    /// appended after it in labelled sections.
    pub fn render_model_judge(&self, predicted: &str, reference: &str) -> Result<String> {
        if predicted.is_empty() {
            return Err(Error::EmptySubstitution("predicted_answer"));
        }
        if reference.is_empty() {
            return Err(Error::EmptySubstitution("reference"));
        }
        Ok(format!(
            "{}\n\nPredicted answer:\n{predicted}\n\nGround truth answer:\n{reference}",
            self.body(PromptName::ModelJudge).trim_end()
        ))
    }

    pub fn render_self_bon(&self, rollouts: &[String]) -> Result<String> {
        if rollouts.is_empty() {
            return Err(Error::EmptyRollouts);
        }
        Ok(self.body(PromptName::SelfBon).replace("{rollouts}", &Self::rollout_block(rollouts)))
    }
}
