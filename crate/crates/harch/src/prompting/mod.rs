//! Few-shot connective-proxy benchmarking of chat LLMs.
//!
//! The prompt mirrors the corpus annotation task: the model is shown the
//! ordered list of 28 discourse connectives and asked to return a 28-entry
//! probability vector for each argument pair. Responses are parsed,
//! retried on format failures (bounded budget), converted through the
//! connective bijection into three-level sense distributions and scored
//! with Jensen-Shannon distance. Full transcripts are cached so any run
//! can be replayed without network access.

mod cache;
mod client;
mod eval;
mod parse;
mod template;

pub use cache::{cache_key, Attempt, CacheRecord, TranscriptCache};
pub use client::{ChatClient, FnClient, HttpChatClient, LlmClientConfig, ScriptedClient};
pub use eval::{evaluate_llm, query_instance, LlmEvalResult, QueryOutcome};
pub use parse::{parse_vector, ConnectiveVector, ParseFailure};
pub use template::{
    build_prompt, gold_answer_vector, render_answer_vector, FewShotExample, LanguageSetting,
    Message, PromptTemplate, Role, ScaffoldStrings, TemplateConfig,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("no connective map loaded for {0}")]
    MissingConnectiveMap(String),
    #[error("training split has {available} instances, {requested} examples requested")]
    InsufficientExamples { available: usize, requested: usize },
    #[error("retries exhausted after {0} requests")]
    ExhaustedRetries(usize),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("invalid client config: {0}")]
    InvalidClientConfig(String),
    #[error("cache error: {0}")]
    Cache(String),
    #[error(transparent)]
    Parse(#[from] ParseFailure),
    #[error(transparent)]
    Hierarchy(#[from] crate::hierarchy::HierarchyError),
    #[error(transparent)]
    Eval(#[from] crate::evaluation::EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
