//! Adversarial spatio-temporal network for freezing-of-gait detection from
//! footstep pressure sequences.

pub mod autograd;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod model;
pub mod training;
pub mod verification;

pub use error::{AstnError, Result};
