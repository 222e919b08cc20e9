use std::path::PathBuf;

use crate::llm::LlmError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Schema {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: record references unknown question_id `{question_id}`")]
    UnknownQuestion {
        path: PathBuf,
        line: usize,
        question_id: String,
    },

    #[error("{path}:{line}: is_correct disagrees with the item's correct option for question `{question_id}`")]
    CorrectnessMismatch {
        path: PathBuf,
        line: usize,
        question_id: String,
    },

    #[error("dense-core filtering removed every record (min responses per question {min_responses}, min attempts per student {min_attempts})")]
    EmptyCore { min_responses: usize, min_attempts: usize },

    #[error("partition produced an empty {0} set")]
    EmptyPartition(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("ability variance is zero; the scale cannot be anchored")]
    ZeroAbilityVariance,

    #[error("k = {k} exceeds the number of students ({n_students})")]
    TooManyClasses { k: usize, n_students: usize },

    #[error("student row {0} has no observed responses")]
    EmptyStudentRow(usize),

    #[error("cluster {cluster} has {available} scored questions, {shortfall} short of the {required} needed")]
    InsufficientQuestions {
        cluster: usize,
        available: usize,
        required: usize,
        shortfall: usize,
    },

    #[error("question `{0}` is missing from the item bank or has no text")]
    MissingItemText(String),

    #[error("option row sums to zero")]
    ZeroRow,

    #[error("option probabilities must be finite and non-negative")]
    NegativeProbability,

    #[error("simulation matrix for `{question_id}` is incomplete: {message}")]
    IncompleteMatrix { question_id: String, message: String },

    #[error("normal equations are singular at lambda = {0}")]
    Singular(f64),

    #[error("fold {fold} has {size} rows; at least 2 are required")]
    FoldTooSmall { fold: usize, size: usize },

    #[error("test fold {0} has constant targets; R^2 is undefined")]
    ConstantFold(usize),

    #[error(transparent)]
    Llm(#[from] LlmError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
