//! Knowledge-grounded question answering over screencast tutorials.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod cues;
pub mod encoders;
pub mod error;
pub mod evaluator;
pub mod fusion;
pub mod graphembed;
pub mod kb;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
