//! Run configuration: a TOML file with env overrides for backend secrets.
//! Optimizer defaults mirror the shared training hyperparameters; the toy
//! trainer carries its own desk-scale learning rate.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::{EndpointHandle, SamplingParams};
use crate::error::{Error, Result};
use crate::grpo::GrpoConfig;
use crate::synthesis::Domain;
use crate::toyworld::{AnchorRule, ScriptedAnchor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Infer,
    Evaluate,
    TrainToy,
    SweepG,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Http,
    /// Deterministic scripted backend; scripts are installed by tests or the
    /// built-in echo used for smoke runs.
    Mock,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub policy: EndpointHandle,
    pub anchor: EndpointHandle,
    pub judge: EndpointHandle,
}

/// How the toy trainer's teacher signal is produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Teacher {
    Plurality,
    Identity,
    /// Whole-string majority vote over the group, the selection baseline.
    Majority,
    OracleBlend { p: f64 },
}

impl Teacher {
    pub fn as_anchor(&self) -> Option<ScriptedAnchor> {
        match self {
            Teacher::Plurality => Some(ScriptedAnchor::plurality()),
            Teacher::Identity => Some(ScriptedAnchor::identity()),
            Teacher::OracleBlend { p } => {
                Some(ScriptedAnchor { rule: AnchorRule::OracleBlend(*p), seed: 0 })
            }
            Teacher::Majority => None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SftConfig {
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_sft_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_sft_epochs")]
    pub max_epochs: usize,
}

fn default_val_fraction() -> f64 {
    0.25
}
fn default_patience() -> usize {
    20
}
fn default_sft_lr() -> f64 {
    20.0
}
fn default_sft_epochs() -> usize {
    300
}

impl Default for SftConfig {
    fn default() -> Self {
        SftConfig {
            val_fraction: default_val_fraction(),
            patience: default_patience(),
            learning_rate: default_sft_lr(),
            max_epochs: default_sft_epochs(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToyConfig {
    #[serde(default = "default_answer_len")]
    pub answer_len: usize,
    #[serde(default = "default_alphabet")]
    pub alphabet: usize,
    #[serde(default = "default_pool")]
    pub pool: usize,
    #[serde(default = "default_teacher")]
    pub teacher: Teacher,
    #[serde(default = "default_domain")]
    pub domain: Domain,
    /// Initial logit head start of the true symbol; controls starting accuracy.
    #[serde(default = "default_truth_logit")]
    pub init_truth_logit: f64,
    #[serde(default = "default_init_noise")]
    pub init_noise: f64,
    #[serde(default = "default_batch_questions")]
    pub batch_questions: usize,
    /// Desk-scale step size for the toy logit tensor.
    #[serde(default = "default_toy_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub length_limit: Option<usize>,
    #[serde(default)]
    pub sft: SftConfig,
}

fn default_answer_len() -> usize {
    4
}
fn default_alphabet() -> usize {
    10
}
fn default_pool() -> usize {
    64
}
fn default_teacher() -> Teacher {
    Teacher::Plurality
}
fn default_domain() -> Domain {
    Domain::Verifiable
}
fn default_truth_logit() -> f64 {
    2.0
}
fn default_init_noise() -> f64 {
    0.5
}
fn default_batch_questions() -> usize {
    32
}
fn default_toy_lr() -> f64 {
    30.0
}
fn default_steps() -> usize {
    300
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            answer_len: default_answer_len(),
            alphabet: default_alphabet(),
            pool: default_pool(),
            teacher: default_teacher(),
            domain: default_domain(),
            init_truth_logit: default_truth_logit(),
            init_noise: default_init_noise(),
            batch_questions: default_batch_questions(),
            learning_rate: default_toy_lr(),
            steps: default_steps(),
            length_limit: None,
            sft: SftConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "default_g")]
    pub g: usize,
    #[serde(default)]
    pub grpo: GrpoConfig,
    #[serde(default)]
    pub toy: ToyConfig,
    #[serde(default)]
    pub backend: Option<BackendConfig>,
    #[serde(default)]
    pub prompts_dir: Option<PathBuf>,
    #[serde(default)]
    pub sampling: SamplingParams,
    /// JSONL file of questions (`{"id":..,"text":..,"domain":..}`) for the
    /// endpoint-facing modes.
    #[serde(default)]
    pub questions: Option<PathBuf>,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}
fn default_g() -> usize {
    8
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: RunConfig =
            toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.g < 1 {
            return Err(Error::InvalidConfig("g must be >= 1".into()));
        }
        if self.toy.answer_len < 1 || self.toy.alphabet < 2 || self.toy.pool < 1 {
            return Err(Error::InvalidConfig("toy dimensions out of range".into()));
        }
        if self.toy.batch_questions < 1 {
            return Err(Error::InvalidConfig("batch_questions must be >= 1".into()));
        }
        if !(self.grpo.clip_epsilon > 0.0 && self.grpo.clip_epsilon < 1.0) {
            return Err(Error::InvalidConfig("clip_epsilon must be in (0,1)".into()));
        }
        if let Some(b) = &self.backend {
            b.policy.validate()?;
            b.anchor.validate()?;
            b.judge.validate()?;
        }
        self.sampling.validate()?;
        Ok(())
    }

    pub fn for_mode(mode: Mode) -> Self {
        RunConfig {
            mode,
            seed: 0,
            out_dir: default_out_dir(),
            g: default_g(),
            grpo: GrpoConfig::default(),
            toy: ToyConfig::default(),
            backend: None,
            prompts_dir: None,
            sampling: SamplingParams::default(),
            questions: None,
        }
    }
}
