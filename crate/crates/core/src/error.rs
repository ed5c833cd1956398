//! Error types shared across the crate.

use thiserror::Error;

/// Everything that can go wrong while parsing, validating or analysing a model.
#[derive(Debug, Error)]
pub enum Error {
    #[error("JSON syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("model schema error: {0}")]
    Schema(String),

    #[error("unknown state `{name}` referenced {context}")]
    UnknownState { name: String, context: String },

    #[error("unknown action `{name}` referenced {context}")]
    UnknownAction { name: String, context: String },

    #[error("duplicate transition entry for state `{state}` and action `{action}`")]
    DuplicateTransition { state: String, action: String },

    #[error("probabilities for state `{state}`, action `{action}` sum to {sum}, expected 1")]
    DistributionSum {
        state: String,
        action: String,
        sum: String,
    },

    #[error("invalid probability literal `{0}`")]
    BadProbability(String),

    #[error("name `{0}` collides with a reserved name introduced by a transformation")]
    NameCollision(String),

    #[error("invalid query: {0}")]
    InvalidQuery(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("model contains end components; state-action frequencies are not finite")]
    EndComponents,

    #[error("frequency vector violates the balance constraints: {0}")]
    InfeasibleFrequencies(String),

    #[error("star parameter {p} outside (0, {p_star}]")]
    StarParameter { p: String, p_star: String },

    #[error("measure `{0}` is undefined for almost every sampled policy")]
    MeasureUndefinedEverywhere(String),

    #[error("linear system is singular")]
    SingularSystem,

    #[error("{0}")]
    Other(String),
}

pub type Result<T> = std::result::Result<T, Error>;
