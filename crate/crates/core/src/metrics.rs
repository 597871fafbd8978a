//! Translation quality (BLEU) and latency (AL, AP, DAL) measures.
//!
//! Latency is computed on word-level delay schedules: `d_i` is the amount of
//! source (ms) consumed when target word `i` became visible, and `T_src` is
//! the source duration. With `g = T_src / |Y|` the ideal per-word rate:
//!
//! ```text
//! AL  = 1/tau * sum_{i<=tau} (d_i - (i-1) g),   tau = min{i : d_i >= T_src}
//! AP  = sum_i d_i / (T_src |Y|)
//! DAL = 1/|Y| * sum_i (d'_i - (i-1) g),  d'_1 = d_1, d'_i = max(d_i, d'_{i-1} + g)
//! ```

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::CommitRecord;

/// Average lagging below this many milliseconds counts as low latency.
pub const LOW_LATENCY_AL_MS: f64 = 2000.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no committed output")]
    EmptyOutput,
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("{hypotheses} hypotheses but {references} references")]
    LengthMismatch { hypotheses: usize, references: usize },
    #[error("invalid delay schedule: {0}")]
    InvalidSchedule(String),
}

/// How subword tokens are grouped into words.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WordJoiner {
    /// Every token is a word.
    #[default]
    Whitespace,
    /// `▁` marks the first token of a word.
    SentencePiece,
    /// A trailing `@@` continues the word into the next token.
    Bpe,
}

const SP_MARK: char = '\u{2581}';

impl WordJoiner {
    /// Whether a word boundary sits before position `at` of `tokens`.
    /// Both ends of the sequence are boundaries.
    pub fn is_boundary<S: AsRef<str>>(&self, tokens: &[S], at: usize) -> bool {
        if at == 0 || at >= tokens.len() {
            return true;
        }
        match self {
            WordJoiner::Whitespace => true,
            WordJoiner::SentencePiece => tokens[at].as_ref().starts_with(SP_MARK),
            WordJoiner::Bpe => !tokens[at - 1].as_ref().ends_with("@@"),
        }
    }

    fn strip<'a>(&self, token: &'a str) -> &'a str {
        match self {
            WordJoiner::Whitespace => token,
            WordJoiner::SentencePiece => token.trim_start_matches(SP_MARK),
            WordJoiner::Bpe => token.strip_suffix("@@").unwrap_or(token),
        }
    }

    /// Groups tokens into words, returning each word with the index of its
    /// last token.
    pub fn words<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<(String, usize)> {
        let mut out: Vec<(String, usize)> = Vec::new();
        let mut current = String::new();
        for (i, tok) in tokens.iter().enumerate() {
            current.push_str(self.strip(tok.as_ref()));
            if self.is_boundary(tokens, i + 1) {
                if !current.is_empty() {
                    out.push((std::mem::take(&mut current), i));
                }
                current.clear();
            }
        }
        out
    }

    pub fn detokenize<S: AsRef<str>>(&self, tokens: &[S]) -> String {
        self.words(tokens)
            .into_iter()
            .map(|(w, _)| w)
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Per-word source delays of one utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelaySchedule {
    pub delays_ms: Vec<f64>,
    pub src_duration_ms: f64,
}

impl DelaySchedule {
    pub fn new(delays_ms: Vec<f64>, src_duration_ms: f64) -> Result<Self, MetricsError> {
        let s = Self {
            delays_ms,
            src_duration_ms,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        let bad = |m: String| Err(MetricsError::InvalidSchedule(m));
        if !(self.src_duration_ms > 0.0 && self.src_duration_ms.is_finite()) {
            return bad(format!("source duration {} must be positive", self.src_duration_ms));
        }
        if self.delays_ms.is_empty() {
            return Err(MetricsError::EmptyOutput);
        }
        for (i, &d) in self.delays_ms.iter().enumerate() {
            if !(d >= 0.0 && d.is_finite()) {
                return bad(format!("delay {i} = {d} is negative or not finite"));
            }
            if d > self.src_duration_ms {
                return bad(format!(
                    "delay {i} = {d} exceeds source duration {}",
                    self.src_duration_ms
                ));
            }
            if i > 0 && d < self.delays_ms[i - 1] {
                return bad(format!("delays decrease at word {i}"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.delays_ms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delays_ms.is_empty()
    }
}

/// Word delays from commit records: a word's delay is the delay of its last
/// token.
pub fn word_delays(
    records: &[CommitRecord],
    joiner: WordJoiner,
    src_duration_ms: f64,
) -> Result<DelaySchedule, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyOutput);
    }
    let tokens: Vec<&str> = records.iter().map(|r| r.token.as_str()).collect();
    let delays = joiner
        .words(&tokens)
        .into_iter()
        .map(|(_, last)| records[last].consumed_ms)
        .collect::<Vec<_>>();
    if delays.is_empty() {
        return Err(MetricsError::EmptyOutput);
    }
    DelaySchedule::new(delays, src_duration_ms)
}

/// Target length used for the ideal emission rate in AL.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LagNormalizer {
    /// `|Y|` of the hypothesis.
    #[default]
    Hypothesis,
    /// Length of the reference translation.
    Reference(usize),
}

pub fn average_lagging(sched: &DelaySchedule) -> f64 {
    average_lagging_with(sched, LagNormalizer::Hypothesis)
}

pub fn average_lagging_with(sched: &DelaySchedule, normalizer: LagNormalizer) -> f64 {
    let t_src = sched.src_duration_ms;
    let target_len = match normalizer {
        LagNormalizer::Hypothesis => sched.len(),
        LagNormalizer::Reference(n) => n.max(1),
    };
    let rate = t_src / target_len as f64;
    let tau = sched
        .delays_ms
        .iter()
        .position(|&d| d >= t_src)
        .map_or(sched.len(), |i| i + 1);
    let sum: f64 = sched.delays_ms[..tau]
        .iter()
        .enumerate()
        .map(|(i, &d)| d - i as f64 * rate)
        .sum();
    sum / tau as f64
}

pub fn average_proportion(sched: &DelaySchedule) -> f64 {
    let total: f64 = sched.delays_ms.iter().sum();
    total / (sched.src_duration_ms * sched.len() as f64)
}

pub fn differentiable_average_lagging(sched: &DelaySchedule) -> f64 {
    let rate = sched.src_duration_ms / sched.len() as f64;
    let mut prev = f64::NEG_INFINITY;
    let mut sum = 0.0;
    for (i, &d) in sched.delays_ms.iter().enumerate() {
        let adjusted = if i == 0 { d } else { d.max(prev + rate) };
        sum += adjusted - i as f64 * rate;
        prev = adjusted;
    }
    sum / sched.len() as f64
}

pub fn classify_latency(al_ms: f64) -> bool {
    al_ms < LOW_LATENCY_AL_MS
}

/// Metrics attached to one utterance or a whole corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu: f64,
    #[serde(rename = "AL_ms")]
    pub al_ms: f64,
    #[serde(rename = "AP")]
    pub ap: f64,
    #[serde(rename = "DAL_ms")]
    pub dal_ms: f64,
    pub low_latency: bool,
}

impl MetricReport {
    pub fn from_schedule(sched: &DelaySchedule, bleu: f64) -> Self {
        let al_ms = average_lagging(sched);
        Self {
            bleu,
            al_ms,
            ap: average_proportion(sched),
            dal_ms: differentiable_average_lagging(sched),
            low_latency: classify_latency(al_ms),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Smoothing {
    #[default]
    None,
    /// Adds one to matches and totals of the 2- to 4-gram precisions.
    AddOne,
}

const MAX_ORDER: usize = 4;

/// Clipped n-gram statistics of one sentence pair.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BleuStats {
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn for_pair<S: AsRef<str>, R: AsRef<str>>(hyp: &[S], reference: &[R]) -> Self {
        let hyp: Vec<&str> = hyp.iter().map(AsRef::as_ref).collect();
        let reference: Vec<&str> = reference.iter().map(AsRef::as_ref).collect();
        let mut stats = BleuStats {
            hyp_len: hyp.len(),
            ref_len: reference.len(),
            ..Default::default()
        };
        for n in 1..=MAX_ORDER {
            let ref_counts = ngram_counts(&reference, n);
            let hyp_counts = ngram_counts(&hyp, n);
            stats.totals[n - 1] = hyp.len().saturating_sub(n - 1);
            stats.matches[n - 1] = hyp_counts
                .iter()
                .map(|(g, &c)| c.min(ref_counts.get(g).copied().unwrap_or(0)))
                .sum();
        }
        stats
    }

    fn add(mut self, other: &BleuStats) -> Self {
        for i in 0..MAX_ORDER {
            self.matches[i] += other.matches[i];
            self.totals[i] += other.totals[i];
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
        self
    }

    /// BLEU in `[0, 100]`.
    pub fn score(&self, smoothing: Smoothing) -> f64 {
        if self.hyp_len == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        for i in 0..MAX_ORDER {
            let (m, t) = match smoothing {
                Smoothing::AddOne if i > 0 => (self.matches[i] + 1, self.totals[i] + 1),
                _ => (self.matches[i], self.totals[i]),
            };
            if m == 0 || t == 0 {
                return 0.0;
            }
            log_sum += (m as f64 / t as f64).ln();
        }
        let bp = (1.0 - self.ref_len as f64 / self.hyp_len as f64).min(0.0);
        100.0 * (log_sum / MAX_ORDER as f64 + bp).exp()
    }
}

fn ngram_counts<'a, 'b>(words: &'b [&'a str], n: usize) -> HashMap<&'b [&'a str], usize> {
    let mut counts = HashMap::new();
    for g in words.windows(n) {
        *counts.entry(g).or_insert(0) += 1;
    }
    counts
}

/// Corpus-level BLEU-4 over pre-tokenized word sequences.
pub fn corpus_bleu<S: AsRef<str>, R: AsRef<str>>(
    hypotheses: &[Vec<S>],
    references: &[Vec<R>],
    smoothing: Smoothing,
) -> Result<f64, MetricsError> {
    if hypotheses.len() != references.len() {
        return Err(MetricsError::LengthMismatch {
            hypotheses: hypotheses.len(),
            references: references.len(),
        });
    }
    if hypotheses.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let stats = hypotheses
        .iter()
        .zip(references)
        .map(|(h, r)| BleuStats::for_pair(h, r))
        .fold(BleuStats::default(), |acc, s| acc.add(&s));
    Ok(stats.score(smoothing))
}

/// [`corpus_bleu`] without smoothing.
pub fn bleu<S: AsRef<str>, R: AsRef<str>>(
    hypotheses: &[Vec<S>],
    references: &[Vec<R>],
) -> Result<f64, MetricsError> {
    corpus_bleu(hypotheses, references, Smoothing::None)
}

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF      // hiragana, katakana
        | 0x3400..=0x4DBF    // CJK ext A
        | 0x4E00..=0x9FFF    // CJK unified
        | 0xF900..=0xFAFF    // compatibility ideographs
        | 0xAC00..=0xD7AF    // hangul syllables
        | 0xFF66..=0xFF9F    // half-width katakana
        | 0x20000..=0x2FA1F)
}

fn is_split_punct(c: char) -> bool {
    c.is_ascii_punctuation() || matches!(c as u32, 0x3000..=0x303F | 0xFF01..=0xFF0F | 0xFF1A..=0xFF20)
}

/// Case-preserving BLEU tokenization: whitespace split, punctuation and CJK
/// characters become standalone tokens.
pub fn tokenize_for_bleu(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let mut current = String::new();
        for c in word.chars() {
            if is_split_punct(c) || is_cjk(c) {
                if !current.is_empty() {
                    out.push(std::mem::take(&mut current));
                }
                out.push(c.to_string());
            } else {
                current.push(c);
            }
        }
        if !current.is_empty() {
            out.push(current);
        }
    }
    out
}
