use std::path::PathBuf;

use crate::corpus::{ArticleId, UserId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown typology `{0}`")]
    UnknownTypology(String),

    #[error("topic {topic} has {available} articles but {needed} are required per topic")]
    InsufficientTopic {
        topic: String,
        available: usize,
        needed: usize,
    },

    #[error("candidate pool exhausted for user {user}: {available} unexposed articles, {needed} needed")]
    Exhausted {
        user: UserId,
        available: usize,
        needed: usize,
    },

    #[error("training failed: {0}")]
    Training(String),

    #[error("{kind} id {id} out of range (size {size})")]
    OutOfRange {
        kind: &'static str,
        id: u64,
        size: usize,
    },

    #[error("undefined stance distribution: no observations and zero smoothing")]
    UndefinedDistribution,

    #[error("length mismatch: {stances} stances vs {clicks} click flags")]
    LengthMismatch { stances: usize, clicks: usize },

    #[error("too few candidates: {available} available, {needed} needed")]
    TooFewCandidates { available: usize, needed: usize },

    #[error("run with seed {seed} failed at iteration {iteration}: {source}")]
    Run {
        seed: u64,
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed data in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("article {0} is not present in the corpus")]
    MissingArticle(ArticleId),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
