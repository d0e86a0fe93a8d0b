use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown variable {0}")]
    UnknownVariable(String),
    #[error("variable {name} is not available at stage {stage}")]
    FutureVariable { name: String, stage: usize },
    #[error("treatment code {code} is not an option at stage {stage}")]
    InvalidTreatment { code: u32, stage: usize },
    #[error("stage {0} has no catch-all clause")]
    MissingCatchAll(usize),
    #[error("regime defines {found} stage(s) but the design has {expected}")]
    StageCount { expected: usize, found: usize },
    #[error("invalid design: {0}")]
    InvalidDesign(String),
    #[error("row {row}: {message}")]
    MalformedRow { row: usize, message: String },
    #[error("subject {id}: {message}")]
    InvalidSubject { id: String, message: String },
    #[error("duplicate subject id {0}")]
    DuplicateId(String),
    #[error("no events at or before L = {0}")]
    EmptyGrid(f64),
    #[error("positivity violation: subject {subject}, stage {stage} has zero probability of the regime's option")]
    PositivityViolation { subject: String, stage: usize },
    #[error("stratum {0} contains no subjects")]
    EmptyStratum(String),
    #[error("stratum {stratum}: no subjects received option {option}")]
    DegenerateStratum { stratum: String, option: u32 },
    #[error("logistic fit for stratum {stratum} did not converge after {iterations} iterations")]
    NonConvergence { stratum: String, iterations: usize },
    #[error("separation detected in logistic fit for stratum {0}")]
    SeparationDetected(String),
    #[error("logistic design for stratum {0} is rank deficient")]
    RankDeficient(String),
    #[error("covariance matrix has rank zero")]
    AllZeroMatrix,
    #[error("baseline hazard is undefined when lambda2 == lambda3")]
    SingularParameterization,
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("config: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Broad failure classes used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Data,
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::EmptyGrid(_)
            | Error::PositivityViolation { .. }
            | Error::NonConvergence { .. }
            | Error::SeparationDetected(_)
            | Error::RankDeficient(_)
            | Error::AllZeroMatrix
            | Error::SingularParameterization
            | Error::EmptyStratum(_)
            | Error::DegenerateStratum { .. } => ErrorClass::Numerical,
            _ => ErrorClass::Data,
        }
    }
}
