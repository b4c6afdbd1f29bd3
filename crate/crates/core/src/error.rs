use std::path::PathBuf;

use thiserror::Error;

use crate::concept::Concept;
use crate::env::{Action, SimulateError};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no legal plan between the requested states")]
    Unreachable,
    #[error("task generation exhausted {attempts} attempts at level {level}")]
    GenerationExhausted { level: u8, attempts: usize },
    #[error("unsupported request: {0}")]
    Unsupported(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("could not place {concept} centroid {value} at separation {min_sep} after {attempts} draws")]
    SeparationUnachievable { concept: Concept, value: usize, min_sep: f64, attempts: usize },
    #[error("{concept} value {value} is outside the codebook (cardinality {cardinality})")]
    UnknownValue { concept: Concept, value: usize, cardinality: usize },
    #[error("k-means needs at least {k} points, got {points}")]
    InsufficientPoints { k: usize, points: usize },
    #[error("all probability mass eliminated for {concept} under {action}")]
    DeadDistribution { concept: Concept, action: Action },
    #[error("no plan found within {l_max} steps")]
    NoPlanFound { l_max: usize },
    #[error("{key} has {pairs} training pairs, need at least {floor}")]
    InsufficientPairs { key: String, pairs: usize, floor: usize },
    #[error("no transition map for {key}{}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    UnknownAction { key: String, step: Option<usize> },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("missing artifact {}", .0.display())]
    MissingArtifact(PathBuf),
    #[error(transparent)]
    Simulate(#[from] SimulateError),
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
