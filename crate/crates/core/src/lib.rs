//! Goal-conditioned planning over disentangled concept tokens.

pub mod artifact;
pub mod concept;
pub mod env;
pub mod error;
pub mod eval;
pub mod mdp;
pub mod pipeline;
pub mod rng;
pub mod symbol;
pub mod taskgen;
pub mod transition;

pub use error::{Error, Result};
