//! Multi-lingual, multi-label implicit discourse relation recognition.
//!
//! The crate is organized around the PDTB 3.0 three-level sense hierarchy:
//!
//! * [`hierarchy`] — the 4/17/28 sense taxonomy, probability distributions
//!   over each level, level projections and the connective bijection.
//! * [`corpus`] — DiscoGeM-style corpus ingestion with per-level gold
//!   distributions and corpus statistics.
//! * [`model`] — the HArch network (shared trunk, three classification
//!   heads, augmentation blocks, learnable mixing scalars) together with
//!   the single-head ablation variant.
//! * [`training`] — MAE loss, Adam, multi-seed experiment driver.
//! * [`evaluation`] — Jensen-Shannon distance and report aggregation.
//! * [`prompting`] — the few-shot connective-proxy protocol for
//!   benchmarking chat LLMs, with transcript caching and replay.

pub mod corpus;
pub mod evaluation;
pub mod hierarchy;
pub mod model;
pub mod prompting;
pub mod training;

pub use hierarchy::{Language, Level, SenseDistribution, SenseHierarchy};
