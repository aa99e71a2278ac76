//! Contamination attacks against multi-party machine learning and an
//! adversarial-training defense.
//!
//! The crate provides a small multilayer perceptron with manual
//! backpropagation, tabular and bag-of-words datasets, the contamination
//! attack, a central training server with a model-release policy, the
//! party-adversarial defense, and statistical and information-theoretic
//! analysis tools.

pub mod analysis;
pub mod attack;
pub mod data;
pub mod defense;
pub mod error;
pub mod nn;
pub mod seed;
pub mod server;

pub use error::{Error, Result};
