//! Deterministic stand-in translators.
//!
//! A [`SyntheticTranslator`] behaves like an offline model run on a growing
//! prefix: the source is cut into fixed segments and every completed segment
//! yields `tokens_per_chunk` target tokens. All tokens are stable except the
//! last `unstable_suffix_len`, which also depend on a digest of the input.
//! That suffix models the errors a real system makes on incomplete input.
//! Stable tokens are pseudo-words; unstable ones start with `q`, which no
//! stable word does, so tests can tell them apart with [`is_unstable_token`].

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::hash_parts;
use crate::audio::AudioBuffer;
use crate::ctc::LogitMatrix;
use crate::engine::{BackendError, Hypothesis, IncrementalTranslator, ModelInput};

const SYLLABLES: [&str; 16] = [
    "ba", "de", "ki", "lo", "mu", "na", "pe", "ri", "so", "tu", "va", "zo", "ga", "hi", "ne", "ru",
];

/// What the unstable suffix is allowed to depend on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sensitivity {
    /// Only the number of completed segments.
    None,
    /// The exact input length.
    LengthOnly,
    /// Every input byte.
    #[default]
    FullInput,
    /// The bytes of the completed segments only; a trailing partial segment
    /// is ignored.
    CompletedSegments,
}

impl FromStr for Sensitivity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Sensitivity::None),
            "length_only" => Ok(Sensitivity::LengthOnly),
            "full_input" => Ok(Sensitivity::FullInput),
            "completed_segments" => Ok(Sensitivity::CompletedSegments),
            other => Err(format!("unknown sensitivity `{other}`")),
        }
    }
}

impl fmt::Display for Sensitivity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sensitivity::None => "none",
            Sensitivity::LengthOnly => "length_only",
            Sensitivity::FullInput => "full_input",
            Sensitivity::CompletedSegments => "completed_segments",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticTranslatorSpec {
    /// Target tokens per completed source segment (per source word for
    /// transcript input).
    pub tokens_per_chunk: usize,
    pub unstable_suffix_len: usize,
    pub sensitivity: Sensitivity,
    pub seed: u64,
    /// Audio segment length.
    pub segment_ms: u32,
}

impl Default for SyntheticTranslatorSpec {
    fn default() -> Self {
        Self {
            tokens_per_chunk: 2,
            unstable_suffix_len: 2,
            sensitivity: Sensitivity::FullInput,
            seed: 0,
            segment_ms: 250,
        }
    }
}

impl SyntheticTranslatorSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.tokens_per_chunk == 0 {
            return Err("tokens_per_chunk must be positive".into());
        }
        if self.segment_ms == 0 {
            return Err("segment_ms must be positive".into());
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    fn segment_samples(&self, sample_rate_hz: u32) -> usize {
        ((self.segment_ms as u64 * sample_rate_hz as u64) / 1000).max(1) as usize
    }
}

fn pseudo_word(h: u64) -> String {
    let syllables = 2 + (h % 2) as usize;
    (0..syllables)
        .map(|i| SYLLABLES[((h >> (8 + 4 * i)) & 0xf) as usize])
        .collect()
}

/// True for tokens from the unstable suffix.
pub fn is_unstable_token(token: &str) -> bool {
    token.starts_with('q')
}

fn unstable_token(seed: u64, position: usize, digest: u64) -> String {
    let h = hash_parts(&[
        b"unstable",
        &seed.to_le_bytes(),
        &(position as u64).to_le_bytes(),
        &digest.to_le_bytes(),
    ]);
    format!("q{:08x}", h as u32)
}

fn sample_bytes(samples: &[f32]) -> Vec<u8> {
    samples.iter().flat_map(|s| s.to_le_bytes()).collect()
}

/// Full output for an input with no forced prefix.
fn free_output(spec: &SyntheticTranslatorSpec, input: &ModelInput) -> Vec<String> {
    let seed = spec.seed.to_le_bytes();
    let (count, stable, digest): (usize, Box<dyn Fn(usize) -> String>, u64) = match input {
        ModelInput::Audio(audio) => {
            let seg = spec.segment_samples(audio.sample_rate_hz());
            let m = audio.len() / seg;
            let digest = match spec.sensitivity {
                Sensitivity::None => hash_parts(&[b"m", &seed, &(m as u64).to_le_bytes()]),
                Sensitivity::LengthOnly => {
                    hash_parts(&[b"len", &seed, &(audio.len() as u64).to_le_bytes()])
                }
                Sensitivity::FullInput => hash_parts(&[b"all", &seed, &sample_bytes(audio.samples())]),
                Sensitivity::CompletedSegments => hash_parts(&[
                    b"all",
                    &seed,
                    &sample_bytes(&audio.samples()[..m * seg]),
                ]),
            };
            let s = spec.seed;
            let stable = move |j: usize| {
                pseudo_word(hash_parts(&[b"stable", &s.to_le_bytes(), &(j as u64).to_le_bytes()]))
            };
            (m * spec.tokens_per_chunk, Box::new(stable), digest)
        }
        ModelInput::Transcript(words) => {
            let m = words.len();
            let digest = match spec.sensitivity {
                Sensitivity::None | Sensitivity::LengthOnly => {
                    hash_parts(&[b"m", &seed, &(m as u64).to_le_bytes()])
                }
                Sensitivity::FullInput | Sensitivity::CompletedSegments => {
                    let joined = words.join("\u{1f}");
                    hash_parts(&[b"all", &seed, joined.as_bytes()])
                }
            };
            let s = spec.seed;
            let tpc = spec.tokens_per_chunk;
            let words = words.clone();
            let stable = move |j: usize| {
                pseudo_word(hash_parts(&[
                    b"word",
                    &s.to_le_bytes(),
                    words[j / tpc].as_bytes(),
                    &((j % tpc) as u64).to_le_bytes(),
                ]))
            };
            (m * spec.tokens_per_chunk, Box::new(stable), digest)
        }
    };
    let stable_len = count.saturating_sub(spec.unstable_suffix_len);
    (0..count)
        .map(|j| {
            if j < stable_len {
                stable(j)
            } else {
                unstable_token(spec.seed, j, digest)
            }
        })
        .collect()
}

/// Translates `input`, continuing after `forced_prefix`.
pub fn synthetic_translate(
    spec: &SyntheticTranslatorSpec,
    input: &ModelInput,
    forced_prefix: &[String],
) -> Hypothesis {
    let free = free_output(spec, input);
    let mut tokens = forced_prefix.to_vec();
    tokens.extend(free.into_iter().skip(forced_prefix.len()));
    Hypothesis::new(tokens)
}

/// Output on the complete input, used as the reference translation of
/// synthetic corpora.
pub fn offline_translate(spec: &SyntheticTranslatorSpec, input: &ModelInput) -> Vec<String> {
    free_output(spec, input)
}

/// [`synthetic_translate`] behind the translator trait, with a call counter.
#[derive(Debug)]
pub struct SyntheticTranslator {
    spec: SyntheticTranslatorSpec,
    calls: AtomicUsize,
}

impl SyntheticTranslator {
    pub fn new(spec: SyntheticTranslatorSpec) -> Self {
        Self {
            spec,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn spec(&self) -> &SyntheticTranslatorSpec {
        &self.spec
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl IncrementalTranslator for SyntheticTranslator {
    fn translate(
        &self,
        input: &ModelInput,
        forced_prefix: &[String],
    ) -> Result<Hypothesis, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(synthetic_translate(&self.spec, input, forced_prefix))
    }

    fn concurrency_safe(&self) -> bool {
        true
    }

    fn name(&self) -> &str {
        "synthetic"
    }
}

/// White-noise audio, uniform in [-0.5, 0.5].
pub fn synthetic_audio(seed: u64, duration_ms: u32, sample_rate_hz: u32) -> AudioBuffer {
    let len = (duration_ms as u64 * sample_rate_hz as u64 / 1000) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..len).map(|_| rng.random_range(-0.5f32..0.5)).collect();
    AudioBuffer::from_valid(samples, sample_rate_hz)
}

/// Source vocabulary of synthetic ASR posteriors.
pub fn synthetic_source_vocab(size: usize) -> Vec<String> {
    let mut vocab: Vec<String> = Vec::with_capacity(size);
    let mut i = 0u64;
    while vocab.len() < size {
        let w = pseudo_word(hash_parts(&[b"src", &i.to_le_bytes()])).to_uppercase();
        if !vocab.contains(&w) {
            vocab.push(w);
        }
        i += 1;
    }
    vocab
}

/// CTC posteriors spelling out `transcript` (indices into `vocab`).
///
/// Each word takes `frames_per_word` frames peaked on the word, where a
/// random competitor receives `confusion` of the mass, followed by one
/// blank-dominated frame.
pub fn synthetic_logits(
    transcript: &[usize],
    vocab: &[String],
    frames_per_word: usize,
    confusion: f64,
    seed: u64,
) -> LogitMatrix {
    let v = vocab.len();
    let width = v + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let floor = 0.01 / width as f64;
    let peaked = |main: usize, alt: usize, main_mass: f64, alt_mass: f64| {
        let mut row = vec![floor; width];
        row[main] += main_mass;
        row[alt] += alt_mass;
        let sum: f64 = row.iter().sum();
        row.iter().map(|p| p / sum).collect::<Vec<f64>>()
    };
    let mut rows = Vec::new();
    for &w in transcript {
        for _ in 0..frames_per_word.max(1) {
            let alt = if v > 1 {
                (w + 1 + rng.random_range(0..v - 1)) % v
            } else {
                v
            };
            rows.push(peaked(w, alt, 1.0 - confusion, confusion));
        }
        rows.push(peaked(v, w, 0.9, 0.1));
    }
    LogitMatrix::new(rows, vocab.to_vec()).expect("rows are normalized")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(k: usize, sensitivity: Sensitivity) -> SyntheticTranslatorSpec {
        SyntheticTranslatorSpec {
            tokens_per_chunk: 2,
            unstable_suffix_len: k,
            sensitivity,
            seed: 7,
            segment_ms: 250,
        }
    }

    fn audio_input(ms: u32, seed: u64) -> ModelInput {
        ModelInput::Audio(synthetic_audio(seed, ms, 8000))
    }

    #[test]
    fn emits_tokens_per_completed_segment() {
        let s = spec(2, Sensitivity::FullInput);
        assert_eq!(offline_translate(&s, &audio_input(1000, 1)).len(), 8);
        assert_eq!(offline_translate(&s, &audio_input(1100, 1)).len(), 8);
        assert!(offline_translate(&s, &audio_input(200, 1)).is_empty());
    }

    #[test]
    fn suffix_is_unstable_and_prefix_is_not() {
        let s = spec(2, Sensitivity::FullInput);
        let out = offline_translate(&s, &audio_input(1000, 1));
        assert!(out[..6].iter().all(|t| !is_unstable_token(t)));
        assert!(out[6..].iter().all(|t| is_unstable_token(t)));
        let short = offline_translate(&spec(5, Sensitivity::FullInput), &audio_input(250, 1));
        assert_eq!(short.len(), 2);
        assert!(short.iter().all(|t| is_unstable_token(t)));
    }

    #[test]
    fn full_input_sensitivity_separates_perturbed_copies() {
        let s = spec(2, Sensitivity::FullInput);
        let a = offline_translate(&s, &audio_input(1000, 1));
        let b = offline_translate(&s, &audio_input(1000, 2));
        assert_eq!(a[..6], b[..6]);
        assert_ne!(a[6], b[6]);
        assert_ne!(a[7], b[7]);
    }

    #[test]
    fn zero_k_ignores_perturbations() {
        for sens in [Sensitivity::None, Sensitivity::LengthOnly, Sensitivity::FullInput] {
            let s = spec(0, sens);
            assert_eq!(
                offline_translate(&s, &audio_input(1000, 1)),
                offline_translate(&s, &audio_input(1000, 2))
            );
        }
    }

    #[test]
    fn insensitive_output_depends_on_length_only() {
        let s = spec(2, Sensitivity::None);
        assert_eq!(
            offline_translate(&s, &audio_input(1000, 1)),
            offline_translate(&s, &audio_input(1000, 2))
        );
        assert_eq!(
            offline_translate(&s, &audio_input(1000, 1)),
            offline_translate(&s, &audio_input(1200, 2))
        );
        let l = spec(2, Sensitivity::LengthOnly);
        assert_eq!(
            offline_translate(&l, &audio_input(1000, 1)),
            offline_translate(&l, &audio_input(1000, 2))
        );
        assert_ne!(
            offline_translate(&l, &audio_input(1000, 1)),
            offline_translate(&l, &audio_input(1200, 2))
        );
    }

    #[test]
    fn completed_segments_ignore_partial_tail() {
        let s = spec(2, Sensitivity::CompletedSegments);
        let full = synthetic_audio(3, 1200, 8000);
        let mut tail = full.samples().to_vec();
        for x in &mut tail[8000..] {
            *x = 0.0;
        }
        let tail = AudioBuffer::new(tail, 8000).unwrap();
        assert_eq!(
            offline_translate(&s, &ModelInput::Audio(full.clone())),
            offline_translate(&s, &ModelInput::Audio(tail))
        );
        let mut head = full.samples().to_vec();
        head[0] = 0.25;
        let head = AudioBuffer::new(head, 8000).unwrap();
        assert_ne!(
            offline_translate(&s, &ModelInput::Audio(full)),
            offline_translate(&s, &ModelInput::Audio(head))
        );
    }

    #[test]
    fn output_begins_with_forced_prefix() {
        let s = spec(2, Sensitivity::FullInput);
        let input = audio_input(1000, 1);
        let forced: Vec<String> = vec!["x".into(), "y".into()];
        let h = synthetic_translate(&s, &input, &forced);
        assert!(h.starts_with(&forced));
        assert_eq!(h.tokens.len(), 8);
        let long: Vec<String> = (0..10).map(|i| i.to_string()).collect();
        assert_eq!(synthetic_translate(&s, &input, &long).tokens, long);
    }

    #[test]
    fn deterministic_and_seed_dependent() {
        let s = spec(2, Sensitivity::FullInput);
        let input = audio_input(1000, 1);
        let t = SyntheticTranslator::new(s.clone());
        assert_eq!(t.translate(&input, &[]).unwrap(), t.translate(&input, &[]).unwrap());
        assert_eq!(t.calls(), 2);
        assert_ne!(offline_translate(&s, &input), offline_translate(&s.with_seed(8), &input));
    }

    #[test]
    fn transcript_input_translates_word_by_word() {
        let s = spec(1, Sensitivity::FullInput);
        let src = |w: &str| ModelInput::Transcript(w.split_whitespace().map(String::from).collect());
        let a = offline_translate(&s, &src("A B C"));
        let b = offline_translate(&s, &src("A B D"));
        assert_eq!(a.len(), 6);
        assert_eq!(a[..4], b[..4]);
        assert_ne!(a[5], b[5]);
    }

    #[test]
    fn synthetic_logits_greedy_decode_to_transcript() {
        let vocab = synthetic_source_vocab(6);
        let words = [0, 2, 2, 5, 1];
        let m = synthetic_logits(&words, &vocab, 3, 0.2, 4);
        let expected: Vec<String> = words.iter().map(|&w| vocab[w].clone()).collect();
        assert_eq!(crate::ctc::ctc_greedy(&m).tokens, expected);
        assert_eq!(m.frames(), 20);
    }
}
