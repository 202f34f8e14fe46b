use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // transport / protocol
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("malformed endpoint response: {0}")]
    Protocol(String),
    #[error("endpoint cannot return token logprobs")]
    LogprobsUnavailable,

    // prompt rendering
    #[error("rollout list is empty")]
    EmptyRollouts,
    #[error("empty substitution for placeholder {0}")]
    EmptySubstitution(&'static str),

    // synthesis / rubric parsing
    #[error("no \"# UNIFIED RESPONSE\" marker in anchor output")]
    SynthesisParse,
    #[error("could not parse rubric criteria from anchor output")]
    RubricParse,
    #[error("rubric has no criteria")]
    EmptyRubric,
    #[error("reference carries no extracted answer")]
    MissingReferenceAnswer,

    // selection baselines
    #[error("logprob list is empty")]
    EmptyLogprobs,
    #[error("rollout {0} is missing token logprobs")]
    MissingLogprobs(usize),
    #[error("group of {0} is too small for this operation")]
    GroupTooSmall(usize),
    #[error("no in-range selection in endpoint reply: {0:?}")]
    SelectionParse(String),

    // grpo math
    #[error("importance ratio must be positive, got {0}")]
    NonPositiveRatio(f64),
    #[error("token batch misaligned: {0}")]
    MisalignedBatch(String),
    #[error("objective became non-finite at step {0}")]
    DivergenceHalt(usize),

    // toy world
    #[error("rollout answers have unequal lengths")]
    UnequalLengths,
    #[error("training dataset is empty")]
    EmptyDataset,

    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Machine-readable form for the CLI's nonzero-exit path.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({ "error": self.variant_name(), "message": self.to_string() })
    }

    fn variant_name(&self) -> &'static str {
        match self {
            Error::Transport { .. } => "transport",
            Error::Protocol(_) => "protocol",
            Error::LogprobsUnavailable => "logprobs_unavailable",
            Error::EmptyRollouts => "empty_rollouts",
            Error::EmptySubstitution(_) => "empty_substitution",
            Error::SynthesisParse => "synthesis_parse",
            Error::RubricParse => "rubric_parse",
            Error::EmptyRubric => "empty_rubric",
            Error::MissingReferenceAnswer => "missing_reference_answer",
            Error::EmptyLogprobs => "empty_logprobs",
            Error::MissingLogprobs(_) => "missing_logprobs",
            Error::GroupTooSmall(_) => "group_too_small",
            Error::SelectionParse(_) => "selection_parse",
            Error::NonPositiveRatio(_) => "non_positive_ratio",
            Error::MisalignedBatch(_) => "misaligned_batch",
            Error::DivergenceHalt(_) => "divergence_halt",
            Error::UnequalLengths => "unequal_lengths",
            Error::EmptyDataset => "empty_dataset",
            Error::InvalidInput(_) => "invalid_input",
            Error::InvalidConfig(_) => "invalid_config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
