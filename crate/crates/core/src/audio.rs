//! Mono waveform container.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AudioError {
    #[error("sample rate must be positive")]
    ZeroSampleRate,
    #[error("sample {index} is not finite ({value})")]
    NonFiniteSample { index: usize, value: f32 },
}

/// Mono PCM samples in nominal range `[-1, 1]` plus their sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f32>,
    sample_rate_hz: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f32>, sample_rate_hz: u32) -> Result<Self, AudioError> {
        if sample_rate_hz == 0 {
            return Err(AudioError::ZeroSampleRate);
        }
        if let Some((index, &value)) = samples.iter().enumerate().find(|(_, s)| !s.is_finite()) {
            return Err(AudioError::NonFiniteSample { index, value });
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    /// Builds a buffer whose samples are already known to be finite, e.g. a
    /// transform of another valid buffer.
    pub(crate) fn from_valid(samples: Vec<f32>, sample_rate_hz: u32) -> Self {
        debug_assert!(sample_rate_hz > 0);
        debug_assert!(samples.iter().all(|s| s.is_finite()));
        Self {
            samples,
            sample_rate_hz,
        }
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Duration of `num_samples` samples at this buffer's rate, in ms.
    pub fn samples_to_ms(&self, num_samples: usize) -> f64 {
        1000.0 * num_samples as f64 / self.sample_rate_hz as f64
    }

    pub fn duration_ms(&self) -> f64 {
        self.samples_to_ms(self.samples.len())
    }

    /// Copy of the first `end` samples.
    pub fn prefix(&self, end: usize) -> AudioBuffer {
        let end = end.min(self.samples.len());
        Self::from_valid(self.samples[..end].to_vec(), self.sample_rate_hz)
    }

    /// Little-endian bytes of the raw samples; used for input digests.
    pub fn sample_bytes(&self) -> impl Iterator<Item = [u8; 4]> + '_ {
        self.samples.iter().map(|s| s.to_bits().to_le_bytes())
    }
}
