//! Commitment policies.
//!
//! - Hold-n drops the last `n` tokens of every chunk-level hypothesis.
//! - LA-n commits the longest common prefix of the best hypotheses of the
//!   last `n` chunks; nothing is committed during the first `n - 1` chunks.
//! - R-BI decodes the current input together with `B` regularized copies of
//!   it and commits the longest common prefix of all `B + 1` outputs.

use std::collections::VecDeque;
use std::fmt;

use rand::RngCore;
use thiserror::Error;

use crate::audio::AudioBuffer;
use crate::engine::{forced_decode, EngineError, Hypothesis, IncrementalTranslator, ModelInput, SourceStream};
use crate::metrics::WordJoiner;
use crate::regularize::RegularizerSpec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("longest common prefix of an empty batch")]
    EmptyBatch,
    #[error("invalid policy: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PolicyKind {
    Hold,
    LocalAgreement,
    Rbi,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PolicySpec {
    Hold { n: usize },
    LocalAgreement { n: usize },
    Rbi { regularizers: Vec<RegularizerSpec> },
}

impl PolicySpec {
    pub fn kind(&self) -> PolicyKind {
        match self {
            PolicySpec::Hold { .. } => PolicyKind::Hold,
            PolicySpec::LocalAgreement { .. } => PolicyKind::LocalAgreement,
            PolicySpec::Rbi { .. } => PolicyKind::Rbi,
        }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        match self {
            PolicySpec::Hold { .. } => Ok(()),
            PolicySpec::LocalAgreement { n: 0 } => Err(PolicyError::InvalidSpec(
                "LA-n needs n >= 1".into(),
            )),
            PolicySpec::LocalAgreement { .. } => Ok(()),
            PolicySpec::Rbi { regularizers } if regularizers.is_empty() => Err(
                PolicyError::InvalidSpec("R-BI needs at least one regularizer".into()),
            ),
            PolicySpec::Rbi { regularizers } => {
                for r in regularizers {
                    r.validate()
                        .map_err(|e| PolicyError::InvalidSpec(e.to_string()))?;
                }
                Ok(())
            }
        }
    }
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicySpec::Hold { n } => write!(f, "hold-{n}"),
            PolicySpec::LocalAgreement { n } => write!(f, "la-{n}"),
            PolicySpec::Rbi { regularizers } => {
                let regs: Vec<String> = regularizers.iter().map(|r| r.to_string()).collect();
                write!(f, "rbi[{}]", regs.join("+"))
            }
        }
    }
}

/// Unit at which hypotheses are compared when taking common prefixes.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum PrefixGranularity {
    #[default]
    Token,
    /// Only whole words (as grouped by the joiner) are kept.
    Word(WordJoiner),
}

/// Length of the longest common prefix.
pub fn common_prefix_len<T: PartialEq, S: AsRef<[T]>>(seqs: &[S]) -> Result<usize, PolicyError> {
    let (first, rest) = seqs.split_first().ok_or(PolicyError::EmptyBatch)?;
    let first = first.as_ref();
    let mut len = first.len();
    for s in rest {
        len = first[..len]
            .iter()
            .zip(s.as_ref())
            .take_while(|(a, b)| a == b)
            .count();
        if len == 0 {
            break;
        }
    }
    Ok(len)
}

/// The maximal sequence every member of `seqs` starts with.
pub fn longest_common_prefix<T: PartialEq + Clone, S: AsRef<[T]>>(
    seqs: &[S],
) -> Result<Vec<T>, PolicyError> {
    let len = common_prefix_len(seqs)?;
    Ok(seqs[0].as_ref()[..len].to_vec())
}

/// Common prefix length cut back to a position that is a word boundary in
/// every sequence.
pub fn common_prefix_len_at(
    seqs: &[&[String]],
    granularity: &PrefixGranularity,
) -> Result<usize, PolicyError> {
    let len = common_prefix_len(seqs)?;
    match granularity {
        PrefixGranularity::Token => Ok(len),
        PrefixGranularity::Word(joiner) => Ok((0..=len)
            .rev()
            .find(|&l| seqs.iter().all(|s| joiner.is_boundary(s, l)))
            .unwrap_or(0)),
    }
}

/// Hold-n: `tokens[committed_len .. max(committed_len, len - n)]`.
pub fn hold_n_commit(tokens: &[String], committed_len: usize, n: usize) -> Vec<String> {
    let end = tokens.len().saturating_sub(n).max(committed_len);
    tokens[committed_len.min(tokens.len())..end.min(tokens.len())].to_vec()
}

/// The last `n` best hypotheses of one utterance.
#[derive(Debug, Clone)]
pub struct LaMemory {
    n: usize,
    history: VecDeque<Vec<String>>,
    seen: usize,
}

impl LaMemory {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            history: VecDeque::with_capacity(n),
            seen: 0,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }

    fn push(&mut self, tokens: Vec<String>) {
        if self.history.len() == self.n {
            self.history.pop_front();
        }
        self.history.push_back(tokens);
        self.seen += 1;
    }
}

/// LA-n step: records `new_tokens` and returns whatever the last `n`
/// hypotheses agree on beyond the committed prefix.
pub fn la_n_commit(
    memory: &mut LaMemory,
    new_tokens: &[String],
    committed_len: usize,
    granularity: &PrefixGranularity,
) -> Vec<String> {
    memory.push(new_tokens.to_vec());
    if memory.seen < memory.n {
        return Vec::new();
    }
    let seqs: Vec<&[String]> = memory.history.iter().map(Vec::as_slice).collect();
    let len = common_prefix_len_at(&seqs, granularity).unwrap_or(0);
    if len <= committed_len {
        return Vec::new();
    }
    new_tokens[committed_len..len].to_vec()
}

/// Outcome of one R-BI step.
#[derive(Debug, Clone)]
pub struct RbiStep {
    pub new_tokens: Vec<String>,
    /// One hypothesis per batch member, in batch order.
    pub hypotheses: Vec<Hypothesis>,
}

/// R-BI over an already constructed batch (unmodified input first).
///
/// Every member is decoded with `committed` forced; any failing decode aborts
/// the step.
pub fn r_bi_commit_batch(
    translator: &dyn IncrementalTranslator,
    batch: &[ModelInput],
    committed: &[String],
    granularity: &PrefixGranularity,
) -> Result<RbiStep, EngineError> {
    if batch.is_empty() {
        return Err(PolicyError::EmptyBatch.into());
    }
    let hypotheses = batch
        .iter()
        .map(|input| forced_decode(translator, input, committed))
        .collect::<Result<Vec<_>, _>>()?;
    let seqs: Vec<&[String]> = hypotheses.iter().map(|h| h.tokens.as_slice()).collect();
    let len = common_prefix_len_at(&seqs, granularity)?;
    let new_tokens = if len > committed.len() {
        hypotheses[0].tokens[committed.len()..len].to_vec()
    } else {
        Vec::new()
    };
    Ok(RbiStep {
        new_tokens,
        hypotheses,
    })
}

/// R-BI for an end-to-end system: builds `[x, R_1(x), ..., R_B(x)]` from the
/// audio prefix and commits the token-level common prefix of their outputs.
pub fn r_bi_commit(
    translator: &dyn IncrementalTranslator,
    regularizers: &[RegularizerSpec],
    input: &AudioBuffer,
    committed: &[String],
    rng: &mut dyn RngCore,
) -> Result<Vec<String>, EngineError> {
    if regularizers.is_empty() {
        return Err(PolicyError::InvalidSpec("R-BI needs at least one regularizer".into()).into());
    }
    let batch = input.batch_inputs(input.len(), regularizers, rng)?;
    Ok(r_bi_commit_batch(translator, &batch, committed, &PrefixGranularity::Token)?.new_tokens)
}

/// Result of one policy step within the engine loop.
#[derive(Debug, Clone)]
pub struct PolicyStep {
    pub new_tokens: Vec<String>,
    /// Hypothesis for the unmodified input, used for finalization.
    pub best: Hypothesis,
    pub decodes: usize,
}

/// Runtime state of a policy over one utterance.
#[derive(Debug, Clone)]
pub enum PolicyState {
    Hold {
        n: usize,
    },
    LocalAgreement {
        memory: LaMemory,
        granularity: PrefixGranularity,
    },
    Rbi {
        regularizers: Vec<RegularizerSpec>,
        granularity: PrefixGranularity,
    },
}

impl PolicyState {
    pub fn new(spec: &PolicySpec, granularity: PrefixGranularity) -> Result<Self, PolicyError> {
        spec.validate()?;
        Ok(match spec {
            PolicySpec::Hold { n } => PolicyState::Hold { n: *n },
            PolicySpec::LocalAgreement { n } => PolicyState::LocalAgreement {
                memory: LaMemory::new(*n),
                granularity,
            },
            PolicySpec::Rbi { regularizers } => PolicyState::Rbi {
                regularizers: regularizers.clone(),
                granularity,
            },
        })
    }

    pub fn step(
        &mut self,
        translator: &dyn IncrementalTranslator,
        source: &dyn SourceStream,
        end: usize,
        committed: &[String],
        rng: &mut dyn RngCore,
    ) -> Result<PolicyStep, EngineError> {
        match self {
            PolicyState::Hold { n } => {
                let input = source.primary_input(end)?;
                let best = forced_decode(translator, &input, committed)?;
                Ok(PolicyStep {
                    new_tokens: hold_n_commit(&best.tokens, committed.len(), *n),
                    best,
                    decodes: 1,
                })
            }
            PolicyState::LocalAgreement {
                memory,
                granularity,
            } => {
                let input = source.primary_input(end)?;
                let best = forced_decode(translator, &input, committed)?;
                Ok(PolicyStep {
                    new_tokens: la_n_commit(memory, &best.tokens, committed.len(), granularity),
                    best,
                    decodes: 1,
                })
            }
            PolicyState::Rbi {
                regularizers,
                granularity,
            } => {
                let batch = source.batch_inputs(end, regularizers, rng)?;
                let decodes = batch.len();
                let step = r_bi_commit_batch(translator, &batch, committed, granularity)?;
                let best = step.hypotheses.into_iter().next().unwrap_or_default();
                Ok(PolicyStep {
                    new_tokens: step.new_tokens,
                    best,
                    decodes,
                })
            }
        }
    }
}
