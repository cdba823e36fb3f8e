//! Continual next-POI recommendation engine.
//!
//! The crate ingests temporally blocked check-in streams, maintains a
//! per-user interest memory of context keys and sparse prediction
//! distributions, retrieves sustained interests through generatively
//! produced query keys, and fuses them with a finetuned backbone's recent
//! predictions using consistency-weighted adaptive rules.

pub mod backbone;
pub mod config;
pub mod diffmath;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod fusion;
pub mod ingest;
pub mod keyenc;
pub mod keygen;
pub mod memory;
pub mod retrieval;
pub mod rng;
pub mod synth;
pub mod vocab;

pub use error::{Error, Result};
