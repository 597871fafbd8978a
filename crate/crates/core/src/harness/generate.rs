use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::corpus::HarnessError;
use super::manifest::{write_manifest, SourceRef, Utterance};
use super::synthetic::{
    offline_translate, synthetic_audio, synthetic_logits, synthetic_source_vocab,
    SyntheticTranslatorSpec,
};
use super::utterance_seed;
use super::wav::{read_wav, write_wav};
use crate::engine::ModelInput;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpusSpec {
    pub num_utterances: usize,
    pub min_duration_ms: u32,
    pub max_duration_ms: u32,
    pub sample_rate_hz: u32,
    pub seed: u64,
}

impl Default for SyntheticCorpusSpec {
    fn default() -> Self {
        Self {
            num_utterances: 20,
            min_duration_ms: 2000,
            max_duration_ms: 6000,
            sample_rate_hz: 16000,
            seed: 0,
        }
    }
}

impl SyntheticCorpusSpec {
    fn validate(&self) -> Result<(), HarnessError> {
        if self.num_utterances == 0 {
            return Err(HarnessError::Config("corpus needs at least one utterance".into()));
        }
        if self.min_duration_ms == 0 || self.min_duration_ms > self.max_duration_ms {
            return Err(HarnessError::Config(format!(
                "bad duration range [{}, {}] ms",
                self.min_duration_ms, self.max_duration_ms
            )));
        }
        if self.sample_rate_hz == 0 {
            return Err(HarnessError::Config("sample rate must be positive".into()));
        }
        Ok(())
    }

    fn durations(&self) -> Vec<(String, u32)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.num_utterances)
            .map(|i| {
                let d = rng.random_range(self.min_duration_ms..=self.max_duration_ms);
                (format!("utt{i:04}"), d)
            })
            .collect()
    }
}

fn create_dir(p: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(p).map_err(|e| HarnessError::io(p, e))
}

fn finish(dir: &Path, utterances: &[Utterance]) -> Result<PathBuf, HarnessError> {
    let path = dir.join("manifest.jsonl");
    let mut buf = Vec::new();
    write_manifest(&mut buf, utterances, dir).map_err(|e| HarnessError::io(&path, e))?;
    std::fs::write(&path, buf).map_err(|e| HarnessError::io(&path, e))?;
    Ok(path)
}

/// Writes noise WAVs and a manifest whose references are the synthetic
/// translator's offline outputs. Returns the manifest path.
pub fn write_synthetic_corpus(
    dir: &Path,
    corpus: &SyntheticCorpusSpec,
    translator: &SyntheticTranslatorSpec,
) -> Result<PathBuf, HarnessError> {
    corpus.validate()?;
    translator.validate().map_err(HarnessError::Config)?;
    let wav_dir = dir.join("wav");
    create_dir(&wav_dir)?;
    let mut utterances = Vec::with_capacity(corpus.num_utterances);
    for (id, duration_ms) in corpus.durations() {
        let audio = synthetic_audio(utterance_seed(corpus.seed, &id), duration_ms, corpus.sample_rate_hz);
        let path = wav_dir.join(format!("{id}.wav"));
        write_wav(&path, &audio)?;
        // References come from the quantized audio the evaluator will read.
        let stored = read_wav(&path)?;
        let spec = translator.with_seed(utterance_seed(translator.seed, &id));
        let reference = offline_translate(&spec, &ModelInput::Audio(stored));
        utterances.push(Utterance {
            id,
            source: SourceRef::Audio(path),
            reference,
            source_transcript: None,
        });
    }
    finish(dir, &utterances)
}

const CASCADE_FRAMES_PER_WORD: usize = 3;
const CASCADE_VOCAB: usize = 12;

/// Cascade counterpart of [`write_synthetic_corpus`]: stored CTC posteriors
/// spelling a random source transcript (about one word per `4 * frame_ms`),
/// with `confusion` of each frame's mass on a competing word.
pub fn write_synthetic_cascade_corpus(
    dir: &Path,
    corpus: &SyntheticCorpusSpec,
    translator: &SyntheticTranslatorSpec,
    frame_ms: f64,
    confusion: f64,
) -> Result<PathBuf, HarnessError> {
    corpus.validate()?;
    translator.validate().map_err(HarnessError::Config)?;
    if !(0.0..0.5).contains(&confusion) {
        return Err(HarnessError::Config(format!("confusion {confusion} outside [0, 0.5)")));
    }
    let logit_dir = dir.join("logits");
    create_dir(&logit_dir)?;
    let vocab = synthetic_source_vocab(CASCADE_VOCAB);
    let word_ms = frame_ms * (CASCADE_FRAMES_PER_WORD + 1) as f64;
    let mut utterances = Vec::with_capacity(corpus.num_utterances);
    for (id, duration_ms) in corpus.durations() {
        let seed = utterance_seed(corpus.seed, &id);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_words = ((duration_ms as f64 / word_ms) as usize).max(1);
        let words: Vec<usize> = (0..n_words).map(|_| rng.random_range(0..vocab.len())).collect();
        let logits = synthetic_logits(&words, &vocab, CASCADE_FRAMES_PER_WORD, confusion, seed);
        let path = logit_dir.join(format!("{id}.txt"));
        logits.save(&path).map_err(|e| HarnessError::io(&path, e))?;
        let transcript: Vec<String> = words.iter().map(|&w| vocab[w].clone()).collect();
        let spec = translator.with_seed(utterance_seed(translator.seed, &id));
        let reference = offline_translate(&spec, &ModelInput::Transcript(transcript.clone()));
        utterances.push(Utterance {
            id,
            source: SourceRef::Logits(path),
            reference,
            source_transcript: Some(transcript),
        });
    }
    finish(dir, &utterances)
}
