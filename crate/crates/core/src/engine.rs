//! Incremental decoding loop.
//!
//! The source is split into fixed-size chunks. After each chunk arrives the
//! translator re-decodes the whole prefix, forced to begin with the tokens
//! committed so far, and the active policy decides which new tokens become
//! final. Committed tokens are never revised.

use std::fmt;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::AudioBuffer;
use crate::ctc::CtcError;
use crate::policies::{PolicyError, PolicySpec, PolicyState, PrefixGranularity};
use crate::regularize::{self, RegularizeError, RegularizerSpec};

pub const MIN_CHUNK_MS: u32 = 50;
pub const MAX_CHUNK_MS: u32 = 10_000;

/// Failure reported by a translator backend.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("backend `{backend}` failed: {message}")]
pub struct BackendError {
    pub backend: String,
    pub message: String,
}

impl BackendError {
    pub fn new(backend: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            backend: backend.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("empty input")]
    EmptyInput,
    #[error("invalid engine config: {0}")]
    InvalidConfig(String),
    #[error("translator output violates forced prefix: expected it to start with {forced:?}, got {output:?}")]
    PrefixViolation {
        forced: Vec<String>,
        output: Vec<String>,
    },
    #[error("invalid hypothesis: {0}")]
    InvalidHypothesis(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Regularize(#[from] RegularizeError),
    #[error(transparent)]
    Ctc(#[from] CtcError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("stream already finished")]
    AlreadyFinished,
}

/// A scored token sequence returned by one decode call.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Hypothesis {
    pub tokens: Vec<String>,
    /// Log-probability-like score; `None` when the backend does not score.
    pub score: Option<f64>,
}

impl Hypothesis {
    pub fn new(tokens: Vec<String>) -> Self {
        Self {
            tokens,
            score: None,
        }
    }

    pub fn scored(tokens: Vec<String>, score: f64) -> Self {
        Self {
            tokens,
            score: Some(score),
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if let Some(i) = self.tokens.iter().position(String::is_empty) {
            return Err(EngineError::InvalidHypothesis(format!(
                "token {i} is the empty string"
            )));
        }
        match self.score {
            Some(s) if !s.is_finite() => Err(EngineError::InvalidHypothesis(format!(
                "score {s} is not finite"
            ))),
            _ => Ok(()),
        }
    }

    pub fn starts_with(&self, prefix: &[String]) -> bool {
        self.tokens.starts_with(prefix)
    }
}

/// What a translator consumes: a source-audio prefix (end-to-end systems) or
/// one ASR transcript (the MT stage of a cascade).
#[derive(Debug, Clone, PartialEq)]
pub enum ModelInput {
    Audio(AudioBuffer),
    Transcript(Vec<String>),
}

/// An offline translator driven incrementally.
///
/// Implementations must return a hypothesis whose tokens begin with
/// `forced_prefix` exactly; the engine treats anything else as
/// [`EngineError::PrefixViolation`].
pub trait IncrementalTranslator: Send + Sync {
    fn translate(
        &self,
        input: &ModelInput,
        forced_prefix: &[String],
    ) -> Result<Hypothesis, BackendError>;

    /// Whether concurrent `translate` calls are safe.
    fn concurrency_safe(&self) -> bool {
        false
    }

    fn name(&self) -> &str {
        "translator"
    }
}

/// Decodes once and enforces the forced-prefix contract.
pub fn forced_decode(
    translator: &dyn IncrementalTranslator,
    input: &ModelInput,
    forced_prefix: &[String],
) -> Result<Hypothesis, EngineError> {
    let hyp = translator.translate(input, forced_prefix)?;
    hyp.validate()?;
    if !hyp.starts_with(forced_prefix) {
        return Err(EngineError::PrefixViolation {
            forced: forced_prefix.to_vec(),
            output: hyp.tokens,
        });
    }
    Ok(hyp)
}

/// One committed target token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommitRecord {
    pub token: String,
    /// Milliseconds of source consumed when the token was committed.
    pub consumed_ms: f64,
    pub chunk_index: usize,
}

/// Mutable per-utterance state. Records are append-only.
#[derive(Debug, Default)]
pub struct StreamState {
    committed: Vec<CommitRecord>,
    tokens: Vec<String>,
    chunk_index: usize,
    finished: bool,
}

impl StreamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn committed(&self) -> &[CommitRecord] {
        &self.committed
    }

    pub fn committed_tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn chunk_index(&self) -> usize {
        self.chunk_index
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn commit(
        &mut self,
        new_tokens: Vec<String>,
        consumed_ms: f64,
        chunk_index: usize,
    ) -> Result<(), EngineError> {
        if self.finished {
            return Err(EngineError::AlreadyFinished);
        }
        debug_assert!(chunk_index >= self.chunk_index);
        self.chunk_index = chunk_index;
        for token in new_tokens {
            self.tokens.push(token.clone());
            self.committed.push(CommitRecord {
                token,
                consumed_ms,
                chunk_index,
            });
        }
        Ok(())
    }

    pub fn finish(&mut self) -> Result<(), EngineError> {
        if self.finished {
            return Err(EngineError::AlreadyFinished);
        }
        self.finished = true;
        Ok(())
    }

    fn into_records(self) -> Vec<CommitRecord> {
        self.committed
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub chunk_size_ms: u32,
    pub policy: PolicySpec,
    pub seed: u64,
    pub finalize_on_last_chunk: bool,
    /// Unit at which LA-n and R-BI compare hypotheses.
    pub granularity: PrefixGranularity,
}

impl EngineConfig {
    pub fn new(chunk_size_ms: u32, policy: PolicySpec) -> Self {
        Self {
            chunk_size_ms,
            policy,
            seed: 0,
            finalize_on_last_chunk: true,
            granularity: PrefixGranularity::Token,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if !(MIN_CHUNK_MS..=MAX_CHUNK_MS).contains(&self.chunk_size_ms) {
            return Err(EngineError::InvalidConfig(format!(
                "chunk size {} ms outside [{MIN_CHUNK_MS}, {MAX_CHUNK_MS}]",
                self.chunk_size_ms
            )));
        }
        self.policy.validate()?;
        Ok(())
    }
}

/// Outcome of running one utterance through the engine.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceResult {
    pub committed: Vec<CommitRecord>,
    pub src_duration_ms: f64,
    pub num_chunks: usize,
    pub decode_calls: usize,
    /// Number of leading records committed by the policy; the remainder
    /// came from end-of-stream finalization.
    pub policy_committed: usize,
    /// Committed length after each chunk's policy step.
    pub committed_lengths: Vec<usize>,
    /// Best hypothesis of the last chunk.
    pub final_hypothesis: Vec<String>,
}

impl UtteranceResult {
    pub fn tokens(&self) -> Vec<String> {
        self.committed.iter().map(|r| r.token.clone()).collect()
    }

    pub fn consumed_ms(&self) -> Vec<f64> {
        self.committed.iter().map(|r| r.consumed_ms).collect()
    }
}

/// A streaming source the engine can chunk and turn into model inputs.
///
/// Sources are measured in units (audio samples, CTC frames).
pub trait SourceStream {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn units_to_ms(&self, units: usize) -> f64;

    /// Number of units in one chunk of `chunk_ms`.
    fn chunk_units(&self, chunk_ms: u32) -> Result<usize, EngineError>;

    /// Input built from the first `end` units.
    fn primary_input(&self, end: usize) -> Result<ModelInput, EngineError>;

    /// R-BI batch over the first `end` units. The unmodified input comes
    /// first.
    fn batch_inputs(
        &self,
        end: usize,
        regularizers: &[RegularizerSpec],
        rng: &mut dyn RngCore,
    ) -> Result<Vec<ModelInput>, EngineError>;
}

impl SourceStream for AudioBuffer {
    fn len(&self) -> usize {
        AudioBuffer::len(self)
    }

    fn units_to_ms(&self, units: usize) -> f64 {
        self.samples_to_ms(units)
    }

    fn chunk_units(&self, chunk_ms: u32) -> Result<usize, EngineError> {
        let n = chunk_ms as u64 * self.sample_rate_hz() as u64 / 1000;
        if n == 0 {
            return Err(EngineError::InvalidConfig(format!(
                "chunk of {chunk_ms} ms holds no samples at {} Hz",
                self.sample_rate_hz()
            )));
        }
        Ok(n as usize)
    }

    fn primary_input(&self, end: usize) -> Result<ModelInput, EngineError> {
        Ok(ModelInput::Audio(self.prefix(end)))
    }

    fn batch_inputs(
        &self,
        end: usize,
        regularizers: &[RegularizerSpec],
        rng: &mut dyn RngCore,
    ) -> Result<Vec<ModelInput>, EngineError> {
        let prefix = self.prefix(end);
        let mut batch = Vec::with_capacity(regularizers.len() + 1);
        for spec in regularizers {
            batch.push(ModelInput::Audio(regularize::regularize(&prefix, spec, rng)?));
        }
        batch.insert(0, ModelInput::Audio(prefix));
        Ok(batch)
    }
}

/// Prefix end positions `p_1 < ... < p_K = len` for chunks of `chunk_units`.
pub fn chunk_ends(len: usize, chunk_units: usize) -> Result<Vec<usize>, EngineError> {
    if len == 0 {
        return Err(EngineError::EmptyInput);
    }
    if chunk_units == 0 {
        return Err(EngineError::InvalidConfig("chunk holds no units".into()));
    }
    let k = len.div_ceil(chunk_units);
    Ok((1..=k).map(|i| (i * chunk_units).min(len)).collect())
}

/// Sample-index prefix ends for `audio` split into `chunk_size_ms` chunks.
pub fn chunk_boundaries(audio: &AudioBuffer, chunk_size_ms: u32) -> Result<Vec<usize>, EngineError> {
    if audio.is_empty() {
        return Err(EngineError::EmptyInput);
    }
    if chunk_size_ms == 0 {
        return Err(EngineError::InvalidConfig("chunk size must be positive".into()));
    }
    chunk_ends(audio.len(), SourceStream::chunk_units(audio, chunk_size_ms)?)
}

/// Runs the incremental loop over `source` with an RNG seeded from
/// `config.seed`.
pub fn run_incremental(
    translator: &dyn IncrementalTranslator,
    source: &dyn SourceStream,
    config: &EngineConfig,
) -> Result<UtteranceResult, EngineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    run_incremental_with_rng(translator, source, config, &mut rng)
}

/// Same as [`run_incremental`] with a caller-supplied random stream.
pub fn run_incremental_with_rng(
    translator: &dyn IncrementalTranslator,
    source: &dyn SourceStream,
    config: &EngineConfig,
    rng: &mut dyn RngCore,
) -> Result<UtteranceResult, EngineError> {
    config.validate()?;
    if source.is_empty() {
        return Err(EngineError::EmptyInput);
    }
    let ends = chunk_ends(source.len(), source.chunk_units(config.chunk_size_ms)?)?;
    let mut policy = PolicyState::new(&config.policy, config.granularity.clone())?;
    let mut state = StreamState::new();
    let mut decode_calls = 0;
    let mut committed_lengths = Vec::with_capacity(ends.len());
    let mut final_hypothesis = Vec::new();

    for (chunk_index, &end) in ends.iter().enumerate() {
        let consumed_ms = source.units_to_ms(end);
        let step = policy.step(translator, source, end, state.committed_tokens(), rng)?;
        decode_calls += step.decodes;
        state.commit(step.new_tokens, consumed_ms, chunk_index)?;
        committed_lengths.push(state.committed_tokens().len());
        final_hypothesis = step.best.tokens;
    }

    let policy_committed = state.committed().len();
    if config.finalize_on_last_chunk {
        let last = ends.len() - 1;
        let rest = final_hypothesis[policy_committed..].to_vec();
        state.commit(rest, source.units_to_ms(source.len()), last)?;
    }
    state.finish()?;

    Ok(UtteranceResult {
        committed: state.into_records(),
        src_duration_ms: source.units_to_ms(source.len()),
        num_chunks: ends.len(),
        decode_calls,
        policy_committed,
        committed_lengths,
        final_hypothesis,
    })
}

impl fmt::Display for ModelInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelInput::Audio(a) => write!(f, "audio[{} samples @ {} Hz]", a.len(), a.sample_rate_hz()),
            ModelInput::Transcript(t) => write!(f, "transcript[{}]", t.join(" ")),
        }
    }
}
