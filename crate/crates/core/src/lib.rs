//! Commit policies for incremental simultaneous speech translation.
//!
//! An offline translator is turned into a streaming one by re-decoding a
//! growing source prefix chunk by chunk and committing only the part of the
//! output a policy deems stable. This crate provides:
//!
//! - [`engine`]: the incremental decoding loop, the translator contract and
//!   chunking.
//! - [`policies`]: Hold-n, local agreement (LA-n) and regularized batched
//!   inputs (R-BI).
//! - [`regularize`]: waveform perturbations used to build R-BI batches.
//! - [`ctc`]: CTC greedy / prefix beam search and attention rescoring, which
//!   produce the n-best transcript batch of a cascaded system.
//! - [`metrics`]: BLEU and the AL / AP / DAL latency measures.
//! - [`harness`]: corpus evaluation, chunk-size sweeps and deterministic
//!   synthetic backends.

pub mod audio;
pub mod ctc;
pub mod engine;
pub mod harness;
pub mod metrics;
pub mod policies;
pub mod regularize;

pub use audio::AudioBuffer;
pub use engine::{
    chunk_boundaries, run_incremental, CommitRecord, EngineConfig, EngineError, Hypothesis,
    IncrementalTranslator, ModelInput, UtteranceResult,
};
pub use policies::{longest_common_prefix, PolicySpec};
pub use regularize::RegularizerSpec;
