//! Synthetic patient-record toolkit: probabilistic condition-symptom
//! knowledge bases, a deterministic record generator, realistic-scenario
//! transforms, feature encoding, hybrid Naive Bayes and Random Forest
//! classifiers, and a differential-diagnosis evaluation harness.
//!
//! The pipeline runs end to end from a knowledge-base JSON file:
//! validate, generate labeled records, optionally transform the knowledge
//! base (probability perturbation, similarity-based symptom injection),
//! encode into model-ready matrices, train, and evaluate with Top-k,
//! precision, posterior-confidence, and threshold analyses. Every stage
//! is seeded and reproducible.

pub mod encoding;
pub mod evaluation;
pub mod generator;
pub mod kb;
pub mod models;
pub mod pipeline;
pub mod rng;
pub mod transforms;

pub use kb::{ConditionDef, KbMode, KnowledgeBase, SymptomDef, SymptomExpression};
