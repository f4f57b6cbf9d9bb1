//! Hallucination verification from token-level log-probability traces.
//!
//! Traces from several models are turned into entropy, rank, log-probability
//! and pairwise KL features, scored by a stacking classifier, checked by an
//! LLM judge and combined by an arbitration table into a triage plan.

pub mod arbitration;
pub mod classifier;
pub mod features;
pub mod ingest;
pub mod judge;
pub mod planner;
pub mod providers;
pub mod trace;
