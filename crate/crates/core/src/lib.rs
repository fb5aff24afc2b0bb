//! Empathetic response generation with a discrete latent intent.
//!
//! The crate covers the whole pipeline: corpus ingestion and tokenization,
//! TF-IDF intent keywords, a recurrent intent classifier, the
//! intent/emotion-conditioned generator with keyword copying, its training
//! objective, and the evaluation and intent-bias audit tooling.

pub mod autograd;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod error;
pub mod evalsuite;
pub mod fixtures;
pub mod intent_classifier;
pub mod keywords;
pub mod labels;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
pub use labels::{EmotionLabel, IntentLabel, NUM_EMOTIONS, NUM_INTENTS};
