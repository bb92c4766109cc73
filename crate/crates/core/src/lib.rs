//! Interpretability tooling for step-by-step math solutions written by
//! language models: reasoning-flow extraction, prompt ablation, divergence
//! scoring, retrieval-augmented prompting and report generation.

pub mod ablation;
pub mod config;
pub mod digest;
pub mod divergence;
pub mod exam;
pub mod flow;
pub mod gateway;
pub mod lexicon;
pub mod mathtok;
pub mod metrics;
pub mod par;
pub mod pipeline;
pub mod report;
pub mod retrieval;
