//! CTC decoding for the ASR stage of a cascaded system.
//!
//! In the cascade, the R-BI input batch for the MT stage is the n-best list
//! of the ASR: [`ctc_prefix_beam_search`] produces it from frame posteriors,
//! optionally re-ranked by [`attention_rescore`] with an external scorer.
//! [`CascadeSource`] plugs this into the incremental engine.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::RngCore;
use thiserror::Error;

use crate::engine::{BackendError, EngineError, Hypothesis, ModelInput, SourceStream};
use crate::regularize::RegularizerSpec;

const ROW_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum CtcError {
    #[error("label {label} out of range for vocabulary of {vocab} (blank = {vocab})")]
    InvalidLabel { label: usize, vocab: usize },
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("invalid logit matrix: {0}")]
    InvalidMatrix(String),
    #[error("logit file line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Frame posteriors over `V` labels plus blank (blank is the last column).
#[derive(Debug, Clone, PartialEq)]
pub struct LogitMatrix {
    probs: Vec<f64>,
    frames: usize,
    vocab: Vec<String>,
}

impl LogitMatrix {
    pub fn new(rows: Vec<Vec<f64>>, vocab: Vec<String>) -> Result<Self, CtcError> {
        let width = vocab.len() + 1;
        if vocab.iter().any(|t| t.is_empty() || t.chars().any(char::is_whitespace)) {
            return Err(CtcError::InvalidMatrix(
                "vocabulary tokens must be non-empty and contain no whitespace".into(),
            ));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = vocab.iter().find(|t| !seen.insert(t.as_str())) {
            return Err(CtcError::InvalidMatrix(format!("duplicate token `{dup}`")));
        }
        let frames = rows.len();
        let mut probs = Vec::with_capacity(frames * width);
        for (t, row) in rows.into_iter().enumerate() {
            if row.len() != width {
                return Err(CtcError::InvalidMatrix(format!(
                    "frame {t} has {} entries, expected {width}",
                    row.len()
                )));
            }
            if let Some(p) = row.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return Err(CtcError::InvalidMatrix(format!(
                    "frame {t} has probability {p} outside [0, 1]"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(CtcError::InvalidMatrix(format!(
                    "frame {t} sums to {sum}"
                )));
            }
            probs.extend(row);
        }
        Ok(Self {
            probs,
            frames,
            vocab,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn blank(&self) -> usize {
        self.vocab.len()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let w = self.vocab.len() + 1;
        &self.probs[t * w..(t + 1) * w]
    }

    /// The first `frames` frames.
    pub fn prefix(&self, frames: usize) -> LogitMatrix {
        let frames = frames.min(self.frames);
        let w = self.vocab.len() + 1;
        LogitMatrix {
            probs: self.probs[..frames * w].to_vec(),
            frames,
            vocab: self.vocab.clone(),
        }
    }

    pub fn labels_to_tokens(&self, labels: &[usize]) -> Vec<String> {
        labels.iter().map(|&l| self.vocab[l].clone()).collect()
    }

    /// Parses the text format: a `T V` header line, a line of `V` vocabulary
    /// tokens, then `T` rows of `V + 1` probabilities (blank last).
    pub fn read<R: BufRead>(reader: R) -> Result<Self, CtcError> {
        let mut lines = reader
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l))
            .filter(|(_, l)| l.as_ref().map_or(true, |s| !s.trim().is_empty()));
        let parse_err = |line: usize, reason: String| CtcError::Parse { line, reason };

        let (hline, header) = lines
            .next()
            .ok_or_else(|| parse_err(1, "missing `T V` header".into()))?;
        let header = header?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|x| x.parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|e| parse_err(hline, format!("bad header: {e}")))?;
        let [frames, v] = dims[..] else {
            return Err(parse_err(hline, format!("header must be `T V`, got `{header}`")));
        };

        let (vline, vocab) = lines
            .next()
            .ok_or_else(|| parse_err(hline + 1, "missing vocabulary line".into()))?;
        let vocab: Vec<String> = vocab?.split_whitespace().map(String::from).collect();
        if vocab.len() != v {
            return Err(parse_err(
                vline,
                format!("vocabulary has {} tokens, header says {v}", vocab.len()),
            ));
        }

        let mut rows = Vec::with_capacity(frames);
        for (line, row) in lines.by_ref().take(frames) {
            let row: Vec<f64> = row?
                .split_whitespace()
                .map(str::parse::<f64>)
                .collect::<Result<_, _>>()
                .map_err(|e| parse_err(line, format!("bad probability: {e}")))?;
            if row.len() != v + 1 {
                return Err(parse_err(
                    line,
                    format!("expected {} probabilities, got {}", v + 1, row.len()),
                ));
            }
            rows.push(row);
        }
        if rows.len() != frames {
            return Err(parse_err(0, format!("expected {frames} rows, got {}", rows.len())));
        }
        if let Some((line, _)) = lines.next() {
            return Err(parse_err(line, "trailing data after last frame".into()));
        }
        LogitMatrix::new(rows, vocab)
    }

    pub fn load(path: &Path) -> Result<Self, CtcError> {
        let file = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(file))
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{} {}", self.frames, self.vocab.len())?;
        writeln!(w, "{}", self.vocab.join(" "))?;
        for t in 0..self.frames {
            let row: Vec<String> = self.row(t).iter().map(|p| p.to_string()).collect();
            writeln!(w, "{}", row.join(" "))?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write(&mut w)?;
        w.flush()
    }
}

/// Merges adjacent repeats, then drops blanks.
pub fn collapse(path: &[usize], blank: usize) -> Result<Vec<usize>, CtcError> {
    if let Some(&label) = path.iter().find(|&&l| l > blank) {
        return Err(CtcError::InvalidLabel { label, vocab: blank });
    }
    let mut out = Vec::new();
    let mut prev = None;
    for &l in path {
        if prev != Some(l) && l != blank {
            out.push(l);
        }
        prev = Some(l);
    }
    Ok(out)
}

fn argmax(row: &[f64]) -> usize {
    // First maximum wins on ties.
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i, p) } else { best })
        .0
}

/// Best path decoding; score is the sum of per-frame log maxima.
pub fn ctc_greedy(logits: &LogitMatrix) -> Hypothesis {
    let mut path = Vec::with_capacity(logits.frames());
    let mut score = 0.0;
    for t in 0..logits.frames() {
        let row = logits.row(t);
        let best = argmax(row);
        score += row[best].ln();
        path.push(best);
    }
    let labels = collapse(&path, logits.blank()).expect("argmax is always in range");
    Hypothesis {
        tokens: logits.labels_to_tokens(&labels),
        score: Some(score),
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub transcript: Vec<String>,
    pub ctc_log_prob: f64,
    pub rescored_log_prob: Option<f64>,
}

impl Candidate {
    /// The score candidates are ranked by.
    pub fn active_score(&self) -> f64 {
        self.rescored_log_prob.unwrap_or(self.ctc_log_prob)
    }
}

/// Distinct transcripts sorted by active score, descending; equal scores
/// are ordered lexicographically by transcript.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CandidateSet {
    pub candidates: Vec<Candidate>,
}

impl CandidateSet {
    fn sort(&mut self) {
        self.candidates.sort_by(|a, b| {
            b.active_score()
                .total_cmp(&a.active_score())
                .then_with(|| a.transcript.cmp(&b.transcript))
        });
    }

    pub fn transcripts(&self) -> Vec<Vec<String>> {
        self.candidates.iter().map(|c| c.transcript.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
struct Mass {
    blank: f64,
    non_blank: f64,
}

impl Mass {
    const ZERO: Mass = Mass {
        blank: f64::NEG_INFINITY,
        non_blank: f64::NEG_INFINITY,
    };

    fn total(&self) -> f64 {
        log_add(self.blank, self.non_blank)
    }
}

/// CTC prefix beam search.
///
/// Each prefix keeps the log mass of alignments ending in blank and in its
/// last label separately, so repeats are merged correctly. After each frame
/// the `beam` most probable prefixes survive. With a beam at least as large
/// as the number of reachable prefixes the returned scores are exact
/// marginals over all alignments.
pub fn ctc_prefix_beam_search(
    logits: &LogitMatrix,
    beam: usize,
    n_best: usize,
) -> Result<CandidateSet, CtcError> {
    if beam < 1 {
        return Err(CtcError::InvalidParam("beam must be >= 1".into()));
    }
    if n_best < 1 || n_best > beam {
        return Err(CtcError::InvalidParam(format!(
            "n_best must be in [1, beam = {beam}], got {n_best}"
        )));
    }
    let blank = logits.blank();
    let vocab = logits.vocab();
    let rank = |entries: &mut Vec<(Vec<usize>, Mass)>| {
        entries.sort_by(|(pa, ma), (pb, mb)| {
            mb.total().total_cmp(&ma.total()).then_with(|| {
                pa.iter().map(|&l| &vocab[l]).cmp(pb.iter().map(|&l| &vocab[l]))
            })
        });
    };

    let mut beams: Vec<(Vec<usize>, Mass)> = vec![(
        Vec::new(),
        Mass {
            blank: 0.0,
            non_blank: f64::NEG_INFINITY,
        },
    )];
    for t in 0..logits.frames() {
        let row = logits.row(t);
        let log_row: Vec<f64> = row.iter().map(|p| p.ln()).collect();
        let mut next: HashMap<Vec<usize>, Mass> = HashMap::new();
        for (prefix, mass) in &beams {
            let total = mass.total();
            if log_row[blank] > f64::NEG_INFINITY {
                let e = next.entry(prefix.clone()).or_insert(Mass::ZERO);
                e.blank = log_add(e.blank, total + log_row[blank]);
            }
            let last = prefix.last().copied();
            for (c, &lp) in log_row[..blank].iter().enumerate() {
                if lp == f64::NEG_INFINITY {
                    continue;
                }
                let mut extended = prefix.clone();
                extended.push(c);
                if last == Some(c) {
                    let stay = next.entry(prefix.clone()).or_insert(Mass::ZERO);
                    stay.non_blank = log_add(stay.non_blank, mass.non_blank + lp);
                    let e = next.entry(extended).or_insert(Mass::ZERO);
                    e.non_blank = log_add(e.non_blank, mass.blank + lp);
                } else {
                    let e = next.entry(extended).or_insert(Mass::ZERO);
                    e.non_blank = log_add(e.non_blank, total + lp);
                }
            }
        }
        let mut entries: Vec<(Vec<usize>, Mass)> = next
            .into_iter()
            .filter(|(_, m)| m.total() > f64::NEG_INFINITY)
            .collect();
        rank(&mut entries);
        entries.truncate(beam);
        beams = entries;
    }

    rank(&mut beams);
    let candidates = beams
        .into_iter()
        .take(n_best)
        .map(|(labels, mass)| Candidate {
            transcript: logits.labels_to_tokens(&labels),
            ctc_log_prob: mass.total(),
            rescored_log_prob: None,
        })
        .collect();
    Ok(CandidateSet { candidates })
}

/// Log-probability of a transcript under an attention decoder or any other
/// sequence model.
pub trait CandidateScorer: Send + Sync {
    fn score(&self, transcript: &[String]) -> Result<f64, BackendError>;
}

impl<F> CandidateScorer for F
where
    F: Fn(&[String]) -> f64 + Send + Sync,
{
    fn score(&self, transcript: &[String]) -> Result<f64, BackendError> {
        Ok(self(transcript))
    }
}

/// Stand-in scorer: a fixed log-probability per token (plus one for the end
/// of sequence).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LengthScorer {
    pub log_prob_per_token: f64,
}

impl CandidateScorer for LengthScorer {
    fn score(&self, transcript: &[String]) -> Result<f64, BackendError> {
        Ok(self.log_prob_per_token * (transcript.len() + 1) as f64)
    }
}

pub const DEFAULT_CTC_WEIGHT: f64 = 0.5;

/// Interpolates CTC and scorer log-probabilities and re-sorts.
pub fn attention_rescore(
    cands: &CandidateSet,
    scorer: &dyn CandidateScorer,
    ctc_weight: f64,
) -> Result<CandidateSet, CtcError> {
    if !(0.0..=1.0).contains(&ctc_weight) {
        return Err(CtcError::InvalidParam(format!(
            "ctc weight must be in [0, 1], got {ctc_weight}"
        )));
    }
    let mut out = cands.clone();
    for c in &mut out.candidates {
        let s = scorer.score(&c.transcript)?;
        if !s.is_finite() {
            return Err(BackendError::new("scorer", format!("non-finite score {s}")).into());
        }
        c.rescored_log_prob = Some(ctc_weight * c.ctc_log_prob + (1.0 - ctc_weight) * s);
    }
    out.sort();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CtcMode {
    Greedy,
    #[default]
    PrefixBeam,
    Rescoring,
}

impl FromStr for CtcMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "greedy" | "ctc_greedy_search" => Ok(CtcMode::Greedy),
            "prefix_beam" | "ctc_prefix_beam_search" => Ok(CtcMode::PrefixBeam),
            "rescoring" | "attention_rescoring" => Ok(CtcMode::Rescoring),
            other => Err(format!("unknown ctc mode `{other}`")),
        }
    }
}

impl fmt::Display for CtcMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CtcMode::Greedy => "greedy",
            CtcMode::PrefixBeam => "prefix_beam",
            CtcMode::Rescoring => "rescoring",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CascadeConfig {
    pub mode: CtcMode,
    pub beam: usize,
    pub n_best: usize,
    pub ctc_weight: f64,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        Self {
            mode: CtcMode::PrefixBeam,
            beam: 8,
            n_best: 4,
            ctc_weight: DEFAULT_CTC_WEIGHT,
        }
    }
}

/// n-best transcripts for the MT stage, best first.
pub fn cascade_batch(
    logits: &LogitMatrix,
    config: &CascadeConfig,
    scorer: Option<&dyn CandidateScorer>,
) -> Result<Vec<Vec<String>>, CtcError> {
    match config.mode {
        CtcMode::Greedy => Ok(vec![ctc_greedy(logits).tokens]),
        CtcMode::PrefixBeam => {
            Ok(ctc_prefix_beam_search(logits, config.beam, config.n_best)?.transcripts())
        }
        CtcMode::Rescoring => {
            let scorer = scorer.ok_or_else(|| {
                CtcError::InvalidParam("attention rescoring needs a scorer".into())
            })?;
            let cands = ctc_prefix_beam_search(logits, config.beam, config.n_best)?;
            Ok(attention_rescore(&cands, scorer, config.ctc_weight)?.transcripts())
        }
    }
}

/// Stored ASR posteriors streamed frame by frame into the MT stage.
///
/// Hold-n and LA-n translate the best transcript of each prefix; R-BI
/// translates the whole n-best list, which takes the place of regularized
/// inputs.
#[derive(Clone)]
pub struct CascadeSource {
    logits: LogitMatrix,
    frame_ms: f64,
    config: CascadeConfig,
    scorer: Option<Arc<dyn CandidateScorer>>,
}

impl CascadeSource {
    pub fn new(
        logits: LogitMatrix,
        frame_ms: f64,
        config: CascadeConfig,
        scorer: Option<Arc<dyn CandidateScorer>>,
    ) -> Result<Self, CtcError> {
        if !(frame_ms > 0.0 && frame_ms.is_finite()) {
            return Err(CtcError::InvalidParam(format!("frame shift {frame_ms} ms")));
        }
        if config.mode == CtcMode::Rescoring && scorer.is_none() {
            return Err(CtcError::InvalidParam("attention rescoring needs a scorer".into()));
        }
        if config.beam < 1 || config.n_best < 1 || config.n_best > config.beam {
            return Err(CtcError::InvalidParam(format!(
                "need 1 <= n_best ({}) <= beam ({})",
                config.n_best, config.beam
            )));
        }
        Ok(Self {
            logits,
            frame_ms,
            config,
            scorer,
        })
    }

    pub fn logits(&self) -> &LogitMatrix {
        &self.logits
    }

    fn transcripts(&self, end: usize) -> Result<Vec<Vec<String>>, EngineError> {
        let prefix = self.logits.prefix(end);
        Ok(cascade_batch(&prefix, &self.config, self.scorer.as_deref())?)
    }
}

impl SourceStream for CascadeSource {
    fn len(&self) -> usize {
        self.logits.frames()
    }

    fn units_to_ms(&self, units: usize) -> f64 {
        units as f64 * self.frame_ms
    }

    fn chunk_units(&self, chunk_ms: u32) -> Result<usize, EngineError> {
        let n = (chunk_ms as f64 / self.frame_ms).floor() as usize;
        if n == 0 {
            return Err(EngineError::InvalidConfig(format!(
                "chunk of {chunk_ms} ms is shorter than one {} ms frame",
                self.frame_ms
            )));
        }
        Ok(n)
    }

    fn primary_input(&self, end: usize) -> Result<ModelInput, EngineError> {
        let best = self.transcripts(end)?.into_iter().next().unwrap_or_default();
        Ok(ModelInput::Transcript(best))
    }

    fn batch_inputs(
        &self,
        end: usize,
        _regularizers: &[RegularizerSpec],
        _rng: &mut dyn RngCore,
    ) -> Result<Vec<ModelInput>, EngineError> {
        Ok(self
            .transcripts(end)?
            .into_iter()
            .map(ModelInput::Transcript)
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn two_frame() -> LogitMatrix {
        LogitMatrix::new(
            vec![vec![0.6, 0.1, 0.3], vec![0.4, 0.3, 0.3]],
            vocab(&["a", "b"]),
        )
        .unwrap()
    }

    #[test]
    fn collapse_examples() {
        // a=0, b=1, blank=2
        assert_eq!(collapse(&[0, 0, 2, 0, 1, 2], 2).unwrap(), vec![0, 0, 1]);
        assert!(collapse(&[2, 2], 2).unwrap().is_empty());
        assert_eq!(collapse(&[0, 1, 1], 2).unwrap(), vec![0, 1]);
        assert!(matches!(collapse(&[0, 3], 2), Err(CtcError::InvalidLabel { label: 3, .. })));
    }

    #[test]
    fn greedy_examples() {
        let m = LogitMatrix::new(vec![vec![0.7, 0.1, 0.2]], vocab(&["a", "b"])).unwrap();
        let h = ctc_greedy(&m);
        assert_eq!(h.tokens, vocab(&["a"]));
        assert!((h.score.unwrap() - 0.7f64.ln()).abs() < 1e-12);

        let blanks = LogitMatrix::new(vec![vec![0.1, 0.1, 0.8]; 3], vocab(&["a", "b"])).unwrap();
        assert!(ctc_greedy(&blanks).tokens.is_empty());

        let rep = LogitMatrix::new(vec![vec![0.8, 0.1, 0.1]; 2], vocab(&["a", "b"])).unwrap();
        assert_eq!(ctc_greedy(&rep).tokens, vocab(&["a"]));
    }

    #[test]
    fn worked_two_frame_example() {
        let set = ctc_prefix_beam_search(&two_frame(), 16, 2).unwrap();
        assert_eq!(set.transcripts(), vec![vocab(&["a"]), vocab(&["a", "b"])]);
        assert!((set.candidates[0].ctc_log_prob.exp() - 0.54).abs() < 1e-12);
        assert!((set.candidates[1].ctc_log_prob.exp() - 0.18).abs() < 1e-12);
    }

    #[test]
    fn tie_break_is_lexicographic() {
        let m = LogitMatrix::new(vec![vec![0.5, 0.5]], vocab(&["a"])).unwrap();
        let set = ctc_prefix_beam_search(&m, 4, 2).unwrap();
        assert_eq!(set.transcripts(), vec![vec![], vocab(&["a"])]);
        assert!(set.candidates.iter().all(|c| (c.ctc_log_prob.exp() - 0.5).abs() < 1e-12));
    }

    #[test]
    fn beam_one_follows_dominant_prefix() {
        let m = LogitMatrix::new(
            vec![vec![0.6, 0.1, 0.3], vec![0.1, 0.7, 0.2], vec![0.2, 0.2, 0.6]],
            vocab(&["a", "b"]),
        )
        .unwrap();
        let set = ctc_prefix_beam_search(&m, 1, 1).unwrap();
        assert_eq!(set.transcripts(), vec![vocab(&["a", "b"])]);
    }

    #[test]
    fn beam_parameter_errors() {
        assert!(ctc_prefix_beam_search(&two_frame(), 0, 1).is_err());
        assert!(ctc_prefix_beam_search(&two_frame(), 2, 3).is_err());
        assert!(ctc_prefix_beam_search(&two_frame(), 2, 0).is_err());
    }

    #[test]
    fn rescoring_examples() {
        let cands = ctc_prefix_beam_search(&two_frame(), 16, 2).unwrap();
        let prefers_long = |t: &[String]| t.len() as f64 * 10.0;
        let kept = attention_rescore(&cands, &prefers_long, 1.0).unwrap();
        assert_eq!(kept.transcripts(), cands.transcripts());
        let uniform = |_: &[String]| -1.0;
        assert_eq!(
            attention_rescore(&cands, &uniform, 0.5).unwrap().transcripts(),
            cands.transcripts()
        );
        let flipped = attention_rescore(&cands, &prefers_long, 0.5).unwrap();
        assert_eq!(flipped.transcripts()[0], vocab(&["a", "b"]));
        assert!(attention_rescore(&cands, &uniform, 1.5).is_err());
        let nan = |_: &[String]| f64::NAN;
        assert!(attention_rescore(&cands, &nan, 0.5).is_err());
    }

    #[test]
    fn rescoring_breaks_equal_ctc_scores() {
        let set = CandidateSet {
            candidates: vec![
                Candidate { transcript: vocab(&["x"]), ctc_log_prob: -1.0, rescored_log_prob: None },
                Candidate { transcript: vocab(&["y"]), ctc_log_prob: -1.0, rescored_log_prob: None },
            ],
        };
        let prefers_y = |t: &[String]| if t[0] == "y" { -0.1 } else { -5.0 };
        let out = attention_rescore(&set, &prefers_y, 0.5).unwrap();
        assert_eq!(out.transcripts()[0], vocab(&["y"]));
    }

    #[test]
    fn cascade_batch_modes() {
        let m = two_frame();
        let cfg = CascadeConfig { mode: CtcMode::PrefixBeam, beam: 16, n_best: 2, ctc_weight: 0.5 };
        assert_eq!(cascade_batch(&m, &cfg, None).unwrap(), vec![vocab(&["a"]), vocab(&["a", "b"])]);
        let one = CascadeConfig { n_best: 1, ..cfg };
        assert_eq!(cascade_batch(&m, &one, None).unwrap().len(), 1);
        let resc = CascadeConfig { mode: CtcMode::Rescoring, ctc_weight: 1.0, ..cfg };
        assert!(cascade_batch(&m, &resc, None).is_err());
        let scorer = LengthScorer { log_prob_per_token: -3.0 };
        assert_eq!(
            cascade_batch(&m, &resc, Some(&scorer)).unwrap(),
            cascade_batch(&m, &cfg, None).unwrap()
        );
        let greedy = CascadeConfig { mode: CtcMode::Greedy, ..cfg };
        assert_eq!(cascade_batch(&m, &greedy, None).unwrap(), vec![vocab(&["a"])]);
    }

    #[test]
    fn matrix_validation() {
        assert!(LogitMatrix::new(vec![vec![0.5, 0.4]], vocab(&["a"])).is_err());
        assert!(LogitMatrix::new(vec![vec![1.5, -0.5]], vocab(&["a"])).is_err());
        assert!(LogitMatrix::new(vec![vec![1.0]], vocab(&["a"])).is_err());
        assert!(LogitMatrix::new(vec![vec![0.5, 0.5, 0.0]], vocab(&["a", "a"])).is_err());
    }

    #[test]
    fn text_format_round_trip_and_errors() {
        let m = two_frame();
        let mut buf = Vec::new();
        m.write(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("2 2\na b\n"));
        assert_eq!(LogitMatrix::read(text.as_bytes()).unwrap(), m);

        for bad in [
            "",
            "2\na b\n",
            "1 2\na\n0.5 0.2 0.3\n",
            "1 2\na b\n0.5 0.5\n",
            "2 2\na b\n0.5 0.2 0.3\n",
            "1 2\na b\n0.5 0.2 0.3\n0.5 0.2 0.3\n",
            "1 2\na b\n0.5 x 0.3\n",
        ] {
            assert!(LogitMatrix::read(bad.as_bytes()).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn cascade_source_chunks_frames() {
        let rows = vec![vec![0.8, 0.1, 0.1]; 10];
        let m = LogitMatrix::new(rows, vocab(&["a", "b"])).unwrap();
        let src = CascadeSource::new(m, 40.0, CascadeConfig::default(), None).unwrap();
        assert_eq!(src.chunk_units(250).unwrap(), 6);
        assert_eq!(src.units_to_ms(10), 400.0);
        assert!(src.chunk_units(30).is_err());
        let ModelInput::Transcript(t) = src.primary_input(3).unwrap() else { panic!() };
        assert_eq!(t, vocab(&["a"]));
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        assert!(src.batch_inputs(10, &[], &mut rng).unwrap().len() <= 4);
        let resc = CascadeConfig { mode: CtcMode::Rescoring, ..CascadeConfig::default() };
        assert!(CascadeSource::new(src.logits().clone(), 40.0, resc, None).is_err());
    }
}
