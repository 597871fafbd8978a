use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::manifest::{ManifestError, SourceRef, Utterance};
use super::synthetic::{SyntheticTranslator, SyntheticTranslatorSpec};
use super::utterance_seed;
use super::wav::{read_wav, WavError};
use crate::ctc::{CandidateScorer, CascadeConfig, CascadeSource, CtcError, LogitMatrix};
use crate::engine::{
    run_incremental, BackendError, EngineConfig, EngineError, IncrementalTranslator, SourceStream,
    UtteranceResult,
};
use crate::metrics::{
    classify_latency, corpus_bleu, tokenize_for_bleu, word_delays, MetricReport, MetricsError,
    Smoothing, WordJoiner,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Wav(#[from] WavError),
    #[error(transparent)]
    Ctc(#[from] CtcError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("{0}")]
    Incompatible(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("utterance {id}: {source}")]
    Utterance {
        id: String,
        #[source]
        source: Box<HarnessError>,
    },
    #[error("every utterance failed")]
    AllFailed,
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// ASR-side settings of a cascade evaluated from stored posteriors.
#[derive(Clone)]
pub struct CascadeSettings {
    pub config: CascadeConfig,
    pub frame_ms: f64,
    pub scorer: Option<Arc<dyn CandidateScorer>>,
}

impl Default for CascadeSettings {
    fn default() -> Self {
        Self {
            config: CascadeConfig::default(),
            frame_ms: 40.0,
            scorer: None,
        }
    }
}

#[derive(Clone)]
pub enum SourceMode {
    /// The translator reads audio prefixes.
    EndToEnd,
    /// The translator reads ASR transcripts decoded from stored posteriors.
    Cascade(CascadeSettings),
}

#[derive(Clone)]
pub enum TranslatorBackend {
    /// Reseeded per utterance from the spec seed and the utterance id.
    Synthetic(SyntheticTranslatorSpec),
    External(Arc<dyn IncrementalTranslator>),
}

#[derive(Clone)]
pub struct Backend {
    pub translator: TranslatorBackend,
    pub mode: SourceMode,
}

impl Backend {
    pub fn synthetic(spec: SyntheticTranslatorSpec) -> Self {
        Self {
            translator: TranslatorBackend::Synthetic(spec),
            mode: SourceMode::EndToEnd,
        }
    }

    pub fn synthetic_cascade(spec: SyntheticTranslatorSpec, cascade: CascadeSettings) -> Self {
        Self {
            translator: TranslatorBackend::Synthetic(spec),
            mode: SourceMode::Cascade(cascade),
        }
    }

    pub fn concurrency_safe(&self) -> bool {
        match &self.translator {
            TranslatorBackend::Synthetic(_) => true,
            TranslatorBackend::External(t) => t.concurrency_safe(),
        }
    }

    fn validate(&self) -> Result<(), HarnessError> {
        if let TranslatorBackend::Synthetic(spec) = &self.translator {
            spec.validate().map_err(HarnessError::Config)?;
        }
        Ok(())
    }

    fn translator_for(&self, id: &str) -> Arc<dyn IncrementalTranslator> {
        match &self.translator {
            TranslatorBackend::Synthetic(spec) => Arc::new(SyntheticTranslator::new(
                spec.with_seed(utterance_seed(spec.seed, id)),
            )),
            TranslatorBackend::External(t) => Arc::clone(t),
        }
    }

    fn open_source(&self, utt: &Utterance) -> Result<Box<dyn SourceStream>, HarnessError> {
        match (&self.mode, &utt.source) {
            (SourceMode::EndToEnd, SourceRef::Audio(p)) => Ok(Box::new(read_wav(p)?)),
            (SourceMode::Cascade(c), SourceRef::Logits(p)) => Ok(Box::new(CascadeSource::new(
                LogitMatrix::load(p)?,
                c.frame_ms,
                c.config,
                c.scorer.clone(),
            )?)),
            (SourceMode::EndToEnd, SourceRef::Logits(_)) => Err(HarnessError::Incompatible(
                "end-to-end mode needs `audio` entries, found `logits`".into(),
            )),
            (SourceMode::Cascade(_), SourceRef::Audio(_)) => Err(HarnessError::Incompatible(
                "cascade mode needs `logits` entries, found `audio`".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub skip_errors: bool,
    pub jobs: usize,
    pub joiner: WordJoiner,
    pub smoothing: Smoothing,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            skip_errors: false,
            jobs: 1,
            joiner: WordJoiner::Whitespace,
            smoothing: Smoothing::None,
        }
    }
}

/// One line of `utterances.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub id: String,
    pub tokens: Vec<String>,
    pub consumed_ms: Vec<f64>,
    pub metrics: MetricReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceEval {
    pub id: String,
    pub result: UtteranceResult,
    /// Output of the translator on the complete source.
    pub offline_tokens: Vec<String>,
    pub metrics: MetricReport,
}

impl UtteranceEval {
    pub fn record(&self) -> UtteranceRecord {
        UtteranceRecord {
            id: self.id.clone(),
            tokens: self.result.tokens(),
            consumed_ms: self.result.consumed_ms(),
            metrics: self.metrics.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UtteranceFailure {
    pub id: String,
    pub error: String,
}

/// Contents of `summary.json`. Latency fields are means over utterances;
/// `bleu` is corpus-level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub policy: String,
    pub chunk_ms: u32,
    pub seed: u64,
    pub num_utterances: usize,
    pub num_failed: usize,
    pub metrics: MetricReport,
    pub offline_bleu: f64,
    pub failures: Vec<UtteranceFailure>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusReport {
    pub summary: CorpusSummary,
    /// Successful utterances in manifest order.
    pub utterances: Vec<UtteranceEval>,
}

fn bleu_words(tokens: &[String], joiner: WordJoiner) -> Vec<String> {
    tokenize_for_bleu(&joiner.detokenize(tokens))
}

fn evaluate_utterance(
    utt: &Utterance,
    backend: &Backend,
    config: &EngineConfig,
    opts: &EvalOptions,
) -> Result<UtteranceEval, HarnessError> {
    let translator = backend.translator_for(&utt.id);
    let source = backend.open_source(utt)?;
    let cfg = EngineConfig {
        seed: utterance_seed(config.seed, &utt.id),
        ..config.clone()
    };
    let result = run_incremental(translator.as_ref(), source.as_ref(), &cfg)?;
    let offline_tokens = translator
        .translate(&source.primary_input(source.len())?, &[])?
        .tokens;
    let sched = word_delays(&result.committed, opts.joiner, result.src_duration_ms)?;
    let hyp = bleu_words(&result.tokens(), opts.joiner);
    let reference = tokenize_for_bleu(&utt.reference.join(" "));
    let bleu = corpus_bleu(&[hyp], &[reference], opts.smoothing)?;
    Ok(UtteranceEval {
        id: utt.id.clone(),
        result,
        offline_tokens,
        metrics: MetricReport::from_schedule(&sched, bleu),
    })
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    sum / n as f64
}

/// Runs every utterance through the engine and aggregates metrics.
///
/// Results are independent of `opts.jobs`: each utterance draws randomness
/// from a seed derived from its id.
pub fn evaluate_corpus(
    utterances: &[Utterance],
    backend: &Backend,
    config: &EngineConfig,
    opts: &EvalOptions,
) -> Result<CorpusReport, HarnessError> {
    if utterances.is_empty() {
        return Err(HarnessError::Config("empty corpus".into()));
    }
    config.validate()?;
    backend.validate()?;
    let run = |u: &Utterance| evaluate_utterance(u, backend, config, opts);
    let outcomes: Vec<Result<UtteranceEval, HarnessError>> =
        if opts.jobs > 1 && backend.concurrency_safe() {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(opts.jobs)
                .build()
                .map_err(|e| HarnessError::Config(e.to_string()))?;
            pool.install(|| utterances.par_iter().map(run).collect())
        } else {
            utterances.iter().map(run).collect()
        };

    let mut evals = Vec::with_capacity(utterances.len());
    let mut refs = Vec::with_capacity(utterances.len());
    let mut failures = Vec::new();
    for (utt, outcome) in utterances.iter().zip(outcomes) {
        match outcome {
            Ok(e) => {
                refs.push(tokenize_for_bleu(&utt.reference.join(" ")));
                evals.push(e);
            }
            Err(e) if opts.skip_errors => failures.push(UtteranceFailure {
                id: utt.id.clone(),
                error: e.to_string(),
            }),
            Err(e) => {
                return Err(HarnessError::Utterance {
                    id: utt.id.clone(),
                    source: Box::new(e),
                })
            }
        }
    }
    if evals.is_empty() {
        return Err(HarnessError::AllFailed);
    }

    let hyps: Vec<Vec<String>> = evals
        .iter()
        .map(|e| bleu_words(&e.result.tokens(), opts.joiner))
        .collect();
    let offline: Vec<Vec<String>> = evals
        .iter()
        .map(|e| bleu_words(&e.offline_tokens, opts.joiner))
        .collect();
    let al_ms = mean(evals.iter().map(|e| e.metrics.al_ms));
    let metrics = MetricReport {
        bleu: corpus_bleu(&hyps, &refs, opts.smoothing)?,
        al_ms,
        ap: mean(evals.iter().map(|e| e.metrics.ap)),
        dal_ms: mean(evals.iter().map(|e| e.metrics.dal_ms)),
        low_latency: classify_latency(al_ms),
    };
    let summary = CorpusSummary {
        policy: config.policy.to_string(),
        chunk_ms: config.chunk_size_ms,
        seed: config.seed,
        num_utterances: utterances.len(),
        num_failed: failures.len(),
        metrics,
        offline_bleu: corpus_bleu(&offline, &refs, opts.smoothing)?,
        failures,
    };
    Ok(CorpusReport {
        summary,
        utterances: evals,
    })
}

/// Writes `utterances.jsonl` and `summary.json` into `out_dir`.
pub fn write_report(report: &CorpusReport, out_dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    let path = out_dir.join("utterances.jsonl");
    let mut jsonl = Vec::new();
    for u in &report.utterances {
        serde_json::to_writer(&mut jsonl, &u.record())?;
        jsonl.push(b'\n');
    }
    std::fs::write(&path, jsonl).map_err(|e| HarnessError::io(&path, e))?;

    let path = out_dir.join("summary.json");
    let mut f = std::fs::File::create(&path).map_err(|e| HarnessError::io(&path, e))?;
    serde_json::to_writer_pretty(&mut f, &report.summary)?;
    writeln!(f).map_err(|e| HarnessError::io(&path, e))?;
    Ok(())
}
