/// Errors surfaced by the harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid rubric: {0}")]
    RubricInvalid(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("no judgment object found in grader output: {0}")]
    ParseFailure(String),

    #[error("judgment field has the wrong type: {0}")]
    TypeMismatch(String),

    /// Grading failed after exhausting retries. `partial` holds whatever
    /// judgments completed before the failure, aligned by criterion position.
    #[error("grading unavailable: {reason}")]
    GradingUnavailable {
        reason: String,
        partial: Option<PartialJudgments>,
    },

    #[error("oracle backend cannot grade free-text criterion `{0}`")]
    OracleUnsupported(String),

    #[error("bad configuration: {0}")]
    BadConfig(String),

    #[error("criterion `{0}` is not part of the task rubric")]
    SubsetNotInRubric(String),

    #[error("advantage normalization needs a group of at least 2, got {0}")]
    BadGroup(usize),

    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("diversity needs at least 2 responses, got {0}")]
    TooFewResponses(usize),

    #[error("embedder unavailable: {0}")]
    EmbedderUnavailable(String),

    #[error("bad synthetic task spec: {0}")]
    BadSpec(String),

    #[error("validation failed: {}", .0.join("; "))]
    ValidationFailure(Vec<String>),

    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Judgments completed before a grading failure.
#[derive(Debug, Clone)]
pub struct PartialJudgments {
    pub task_id: String,
    /// `None` where the criterion was not (successfully) graded.
    pub met: Vec<Option<bool>>,
}

impl PartialJudgments {
    pub fn completed(&self) -> usize {
        self.met.iter().filter(|m| m.is_some()).count()
    }
}

impl Error {
    /// True for failures of an external service (judge or embedder) as
    /// opposed to bad input or configuration.
    pub fn is_backend(&self) -> bool {
        matches!(
            self,
            Error::GradingUnavailable { .. } | Error::EmbedderUnavailable(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
