//! 16-bit mono PCM WAV files.

use std::path::Path;

use thiserror::Error;

use crate::audio::AudioBuffer;

const PCM16_SCALE: f32 = 32768.0;

#[derive(Debug, Error)]
pub enum WavError {
    #[error("unsupported WAV file {path}: {reason}")]
    UnsupportedWav { path: String, reason: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub fn read_wav(path: &Path) -> Result<AudioBuffer, WavError> {
    let unsupported = |reason: String| WavError::UnsupportedWav {
        path: path.display().to_string(),
        reason,
    };
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(source) => WavError::Io {
            path: path.display().to_string(),
            source,
        },
        other => unsupported(other.to_string()),
    })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(unsupported(format!("{} channels, expected mono", spec.channels)));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(unsupported(format!(
            "{:?} {}-bit samples, expected 16-bit PCM",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f32 / PCM16_SCALE))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| unsupported(e.to_string()))?;
    AudioBuffer::new(samples, spec.sample_rate).map_err(|e| unsupported(e.to_string()))
}

/// Writes `audio` as 16-bit PCM, clipping to the representable range.
pub fn write_wav(path: &Path, audio: &AudioBuffer) -> Result<(), WavError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate_hz(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let io_err = |e: hound::Error| match e {
        hound::Error::IoError(source) => WavError::Io {
            path: path.display().to_string(),
            source,
        },
        other => WavError::UnsupportedWav {
            path: path.display().to_string(),
            reason: other.to_string(),
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(io_err)?;
    for &s in audio.samples() {
        let v = (s * PCM16_SCALE).round().clamp(i16::MIN as f32, i16::MAX as f32) as i16;
        writer.write_sample(v).map_err(io_err)?;
    }
    writer.finalize().map_err(io_err)
}
