//! Waveform regularizers used to diversify the R-BI input batch.
//!
//! Each transform is a pure function of the input buffer and a concrete
//! parameter set. [`sample_params`] draws those parameters from a
//! [`RegularizerSpec`] using an explicit random stream, so a run is fully
//! reproducible from its seed.
//!
//! The textual form accepted by [`RegularizerSpec::from_str`] is:
//!
//! | spec                    | meaning                                     |
//! |-------------------------|---------------------------------------------|
//! | `tst[:MIN:MAX]`         | time stretch, speed uniform in `[MIN, MAX]` |
//! | `tsh[:FRAC]`            | circular time shift, `|shift| <= FRAC * len`|
//! | `va[:G]`                | volume, gain `exp(u)`, `u` uniform `[-G, G]`|
//! | `na[:KIND[:AMP]]`       | additive `uniform`/`gaussian` noise         |
//! | `ma[:FRAC]`             | zero a window of at most `FRAC * len`       |
//! | `id`                    | identity                                    |

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::audio::AudioBuffer;

pub const DEFAULT_SPEED_RANGE: (f64, f64) = (0.9, 1.1);
pub const DEFAULT_SHIFT_FRACTION: f64 = 0.05;
pub const DEFAULT_LOG_GAIN: f64 = std::f64::consts::LN_2;
pub const DEFAULT_NOISE_AMPLITUDE: f64 = 0.005;
pub const DEFAULT_MASK_FRACTION: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegularizeError {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("cannot parse regularizer spec `{spec}`: {reason}")]
    Parse { spec: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    Uniform,
    Gaussian,
}

impl FromStr for NoiseKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform" | "white" => Ok(NoiseKind::Uniform),
            "gaussian" | "normal" => Ok(NoiseKind::Gaussian),
            other => Err(format!("unknown noise kind `{other}`")),
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseKind::Uniform => "uniform",
            NoiseKind::Gaussian => "gaussian",
        })
    }
}

/// A regularizer family with the ranges its parameters are drawn from.
#[derive(Debug, Clone, PartialEq)]
pub enum RegularizerSpec {
    TimeStretch { speed_min: f64, speed_max: f64 },
    TimeShift { max_fraction: f64 },
    Volume { max_log_gain: f64 },
    Noise { kind: NoiseKind, amplitude: f64 },
    Mask { max_fraction: f64 },
    Identity,
}

impl RegularizerSpec {
    pub fn time_stretch() -> Self {
        let (speed_min, speed_max) = DEFAULT_SPEED_RANGE;
        RegularizerSpec::TimeStretch {
            speed_min,
            speed_max,
        }
    }

    pub fn time_shift() -> Self {
        RegularizerSpec::TimeShift {
            max_fraction: DEFAULT_SHIFT_FRACTION,
        }
    }

    pub fn volume() -> Self {
        RegularizerSpec::Volume {
            max_log_gain: DEFAULT_LOG_GAIN,
        }
    }

    pub fn noise(kind: NoiseKind) -> Self {
        RegularizerSpec::Noise {
            kind,
            amplitude: DEFAULT_NOISE_AMPLITUDE,
        }
    }

    pub fn mask() -> Self {
        RegularizerSpec::Mask {
            max_fraction: DEFAULT_MASK_FRACTION,
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, RegularizerSpec::Identity)
    }

    pub fn validate(&self) -> Result<(), RegularizeError> {
        let bad = |msg: String| Err(RegularizeError::InvalidParam(msg));
        match *self {
            RegularizerSpec::TimeStretch {
                speed_min,
                speed_max,
            } => {
                if !(speed_min > 0.0 && speed_min <= speed_max && speed_max.is_finite()) {
                    return bad(format!(
                        "time stretch needs 0 < speed_min <= speed_max, got [{speed_min}, {speed_max}]"
                    ));
                }
            }
            RegularizerSpec::TimeShift { max_fraction } => {
                if !(max_fraction > 0.0 && max_fraction <= 0.5) {
                    return bad(format!(
                        "time shift fraction must be in (0, 0.5], got {max_fraction}"
                    ));
                }
            }
            RegularizerSpec::Volume { max_log_gain } => {
                if !(max_log_gain > 0.0 && max_log_gain.is_finite()) {
                    return bad(format!("volume exponent bound must be > 0, got {max_log_gain}"));
                }
            }
            RegularizerSpec::Noise { amplitude, .. } => {
                if !(amplitude >= 0.0 && amplitude.is_finite()) {
                    return bad(format!("noise amplitude must be >= 0, got {amplitude}"));
                }
            }
            RegularizerSpec::Mask { max_fraction } => {
                if !(0.0..=0.5).contains(&max_fraction) {
                    return bad(format!(
                        "mask fraction must be in [0, 0.5], got {max_fraction}"
                    ));
                }
            }
            RegularizerSpec::Identity => {}
        }
        Ok(())
    }
}

impl fmt::Display for RegularizerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegularizerSpec::TimeStretch {
                speed_min,
                speed_max,
            } => write!(f, "tst:{speed_min}:{speed_max}"),
            RegularizerSpec::TimeShift { max_fraction } => write!(f, "tsh:{max_fraction}"),
            RegularizerSpec::Volume { max_log_gain } => write!(f, "va:{max_log_gain}"),
            RegularizerSpec::Noise { kind, amplitude } => write!(f, "na:{kind}:{amplitude}"),
            RegularizerSpec::Mask { max_fraction } => write!(f, "ma:{max_fraction}"),
            RegularizerSpec::Identity => f.write_str("id"),
        }
    }
}

impl FromStr for RegularizerSpec {
    type Err = RegularizeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = |reason: String| RegularizeError::Parse {
            spec: s.to_string(),
            reason,
        };
        let mut parts = s.trim().split(':');
        let name = parts.next().unwrap_or_default().to_ascii_lowercase();
        let args: Vec<&str> = parts.collect();
        let num = |i: usize| -> Result<f64, RegularizeError> {
            args[i]
                .parse::<f64>()
                .map_err(|e| err(format!("argument {}: {e}", i + 1)))
        };
        let arity = |max: usize| -> Result<(), RegularizeError> {
            if args.len() > max {
                Err(err(format!("expected at most {max} arguments")))
            } else {
                Ok(())
            }
        };
        let spec = match name.as_str() {
            "tst" => {
                arity(2)?;
                match args.len() {
                    0 => RegularizerSpec::time_stretch(),
                    2 => RegularizerSpec::TimeStretch {
                        speed_min: num(0)?,
                        speed_max: num(1)?,
                    },
                    _ => return Err(err("time stretch takes MIN:MAX".into())),
                }
            }
            "tsh" => {
                arity(1)?;
                match args.len() {
                    0 => RegularizerSpec::time_shift(),
                    _ => RegularizerSpec::TimeShift {
                        max_fraction: num(0)?,
                    },
                }
            }
            "va" => {
                arity(1)?;
                match args.len() {
                    0 => RegularizerSpec::volume(),
                    _ => RegularizerSpec::Volume {
                        max_log_gain: num(0)?,
                    },
                }
            }
            "na" => {
                arity(2)?;
                let kind = match args.first() {
                    Some(k) => k.parse::<NoiseKind>().map_err(err)?,
                    None => NoiseKind::Gaussian,
                };
                let amplitude = if args.len() == 2 {
                    num(1)?
                } else {
                    DEFAULT_NOISE_AMPLITUDE
                };
                RegularizerSpec::Noise { kind, amplitude }
            }
            "ma" => {
                arity(1)?;
                match args.len() {
                    0 => RegularizerSpec::mask(),
                    _ => RegularizerSpec::Mask {
                        max_fraction: num(0)?,
                    },
                }
            }
            "id" | "identity" => {
                arity(0)?;
                RegularizerSpec::Identity
            }
            other => return Err(err(format!("unknown regularizer `{other}`"))),
        };
        spec.validate().map_err(|e| err(e.to_string()))?;
        Ok(spec)
    }
}

/// Parses a comma-separated list such as `tst:0.9:1.1,na:gaussian:0.005`.
pub fn parse_spec_list(list: &str) -> Result<Vec<RegularizerSpec>, RegularizeError> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect()
}

/// Concrete parameters drawn for one application of a regularizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RegularizerParams {
    Stretch { speed: f64 },
    Shift { samples: i64 },
    Gain { gain: f64 },
    Noise { kind: NoiseKind, amplitude: f64, seed: u64 },
    Mask { start: usize, width: usize },
    Identity,
}

/// Draws concrete parameters for an input of `len` samples.
///
/// Shift and mask widths are drawn from the non-zero part of their range
/// whenever that part is non-empty, so a time-shift or mask regularizer never
/// silently degenerates into the identity.
pub fn sample_params<R: Rng + ?Sized>(
    spec: &RegularizerSpec,
    len: usize,
    rng: &mut R,
) -> RegularizerParams {
    match *spec {
        RegularizerSpec::TimeStretch {
            speed_min,
            speed_max,
        } => {
            let speed = if speed_min < speed_max {
                rng.random_range(speed_min..=speed_max)
            } else {
                speed_min
            };
            RegularizerParams::Stretch { speed }
        }
        RegularizerSpec::TimeShift { max_fraction } => {
            let bound = (max_fraction * len as f64).round() as i64;
            let samples = if bound >= 1 {
                // 2 * bound non-zero values in [-bound, bound].
                let k = rng.random_range(0..2 * bound);
                if k < bound {
                    k - bound
                } else {
                    k - bound + 1
                }
            } else {
                0
            };
            RegularizerParams::Shift { samples }
        }
        RegularizerSpec::Volume { max_log_gain } => {
            let u = rng.random_range(-max_log_gain..=max_log_gain);
            RegularizerParams::Gain { gain: u.exp() }
        }
        RegularizerSpec::Noise { kind, amplitude } => RegularizerParams::Noise {
            kind,
            amplitude,
            seed: rng.next_u64(),
        },
        RegularizerSpec::Mask { max_fraction } => {
            let max_width = ((max_fraction * len as f64).round() as usize).min(len);
            let width = if max_width >= 1 {
                rng.random_range(1..=max_width)
            } else {
                0
            };
            let start = if width == 0 {
                0
            } else {
                rng.random_range(0..=len - width)
            };
            RegularizerParams::Mask { start, width }
        }
        RegularizerSpec::Identity => RegularizerParams::Identity,
    }
}

/// Applies concrete parameters to `audio`.
pub fn apply(audio: &AudioBuffer, params: &RegularizerParams) -> Result<AudioBuffer, RegularizeError> {
    match *params {
        RegularizerParams::Stretch { speed } => time_stretch(audio, speed),
        RegularizerParams::Shift { samples } => Ok(time_shift(audio, samples)),
        RegularizerParams::Gain { gain } => volume_gain(audio, gain),
        RegularizerParams::Noise {
            kind,
            amplitude,
            seed,
        } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            add_noise(audio, kind, amplitude, &mut rng)
        }
        RegularizerParams::Mask { start, width } => time_mask(audio, start, width),
        RegularizerParams::Identity => Ok(audio.clone()),
    }
}

/// Samples parameters from `spec` and applies them.
pub fn regularize<R: Rng + ?Sized>(
    audio: &AudioBuffer,
    spec: &RegularizerSpec,
    rng: &mut R,
) -> Result<AudioBuffer, RegularizeError> {
    let params = sample_params(spec, audio.len(), rng);
    apply(audio, &params)
}

/// Resamples by linear interpolation; `speed > 1` shortens the signal.
///
/// Output sample `k` reads the input at fractional position `k * speed`,
/// clamped to the last input sample.
pub fn time_stretch(audio: &AudioBuffer, speed: f64) -> Result<AudioBuffer, RegularizeError> {
    if !(speed > 0.0 && speed.is_finite()) {
        return Err(RegularizeError::InvalidParam(format!(
            "speed must be positive, got {speed}"
        )));
    }
    let input = audio.samples();
    if input.is_empty() {
        return Ok(audio.clone());
    }
    let out_len = ((input.len() as f64 / speed).round() as usize).max(1);
    let last = input.len() - 1;
    let out = (0..out_len)
        .map(|k| {
            let pos = k as f64 * speed;
            let i = pos.floor() as usize;
            if i >= last {
                return input[last];
            }
            let frac = pos - i as f64;
            if frac == 0.0 {
                input[i]
            } else {
                let (a, b) = (input[i] as f64, input[i + 1] as f64);
                (a + frac * (b - a)) as f32
            }
        })
        .collect();
    Ok(AudioBuffer::from_valid(out, audio.sample_rate_hz()))
}

/// Circular roll: `output[(k + shift) mod len] = input[k]`.
pub fn time_shift(audio: &AudioBuffer, shift_samples: i64) -> AudioBuffer {
    let mut out = audio.samples().to_vec();
    if !out.is_empty() {
        let r = shift_samples.rem_euclid(out.len() as i64) as usize;
        out.rotate_right(r);
    }
    AudioBuffer::from_valid(out, audio.sample_rate_hz())
}

/// Multiplies every sample by `gain`. No clipping.
pub fn volume_gain(audio: &AudioBuffer, gain: f64) -> Result<AudioBuffer, RegularizeError> {
    if !(gain > 0.0 && gain.is_finite()) {
        return Err(RegularizeError::InvalidParam(format!(
            "gain must be positive, got {gain}"
        )));
    }
    let out = audio
        .samples()
        .iter()
        .map(|&s| (s as f64 * gain) as f32)
        .collect();
    Ok(AudioBuffer::from_valid(out, audio.sample_rate_hz()))
}

/// Adds `amplitude * z` to every sample, `z` iid uniform on `[-1, 1]` or
/// standard normal.
pub fn add_noise<R: Rng + ?Sized>(
    audio: &AudioBuffer,
    kind: NoiseKind,
    amplitude: f64,
    rng: &mut R,
) -> Result<AudioBuffer, RegularizeError> {
    if !(amplitude >= 0.0 && amplitude.is_finite()) {
        return Err(RegularizeError::InvalidParam(format!(
            "noise amplitude must be >= 0, got {amplitude}"
        )));
    }
    if amplitude == 0.0 {
        return Ok(audio.clone());
    }
    let out = audio
        .samples()
        .iter()
        .map(|&s| {
            let z: f64 = match kind {
                NoiseKind::Uniform => rng.random_range(-1.0..=1.0),
                NoiseKind::Gaussian => rng.sample(StandardNormal),
            };
            (s as f64 + amplitude * z) as f32
        })
        .collect();
    Ok(AudioBuffer::from_valid(out, audio.sample_rate_hz()))
}

/// Zeroes samples in `[start, start + width)`.
pub fn time_mask(audio: &AudioBuffer, start: usize, width: usize) -> Result<AudioBuffer, RegularizeError> {
    let end = start
        .checked_add(width)
        .filter(|&end| end <= audio.len())
        .ok_or_else(|| {
            RegularizeError::InvalidParam(format!(
                "mask window [{start}, {start}+{width}) exceeds length {}",
                audio.len()
            ))
        })?;
    let mut out = audio.samples().to_vec();
    out[start..end].fill(0.0);
    Ok(AudioBuffer::from_valid(out, audio.sample_rate_hz()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn buf(samples: &[f32]) -> AudioBuffer {
        AudioBuffer::new(samples.to_vec(), 16000).unwrap()
    }

    fn bits(a: &AudioBuffer) -> Vec<u32> {
        a.samples().iter().map(|s| s.to_bits()).collect()
    }

    #[test]
    fn stretch_examples() {
        let a = buf(&[0.0, 1.0, 0.0, -1.0]);
        assert_eq!(time_stretch(&a, 2.0).unwrap().samples(), &[0.0, 0.0]);
        assert_eq!(bits(&time_stretch(&a, 1.0).unwrap()), bits(&a));
        assert_eq!(time_stretch(&a, 0.5).unwrap().len(), 8);
        assert!(time_stretch(&a, 0.0).is_err());
        assert!(time_stretch(&a, -1.0).is_err());
    }

    #[test]
    fn stretch_interpolates_between_samples() {
        let a = buf(&[0.0, 1.0, 0.0, -1.0]);
        // positions 0, 0.5, 1.0, ..., 3.5 (clamped)
        let out = time_stretch(&a, 0.5).unwrap();
        assert_eq!(
            out.samples(),
            &[0.0, 0.5, 1.0, 0.5, 0.0, -0.5, -1.0, -1.0]
        );
    }

    #[test]
    fn shift_examples() {
        let a = buf(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(time_shift(&a, 1).samples(), &[4.0, 1.0, 2.0, 3.0]);
        assert_eq!(time_shift(&a, -1).samples(), &[2.0, 3.0, 4.0, 1.0]);
        assert_eq!(time_shift(&a, 0), a);
        assert_eq!(time_shift(&a, 4), a);
    }

    #[test]
    fn gain_examples() {
        let a = buf(&[0.5, -0.25]);
        assert_eq!(volume_gain(&a, 2.0).unwrap().samples(), &[1.0, -0.5]);
        assert_eq!(volume_gain(&a, 1.0).unwrap(), a);
        let z = buf(&[0.0; 8]);
        assert_eq!(volume_gain(&z, 3.7).unwrap(), z);
        assert!(volume_gain(&a, 0.0).is_err());
    }

    #[test]
    fn noise_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = buf(&[0.1, 0.2, 0.3]);
        assert_eq!(bits(&add_noise(&a, NoiseKind::Gaussian, 0.0, &mut rng).unwrap()), bits(&a));
        let z = buf(&vec![0.0; 5000]);
        let out = add_noise(&z, NoiseKind::Uniform, 0.01, &mut rng).unwrap();
        assert!(out.samples().iter().all(|s| s.abs() <= 0.01));
        assert!(add_noise(&a, NoiseKind::Uniform, -1.0, &mut rng).is_err());
    }

    #[test]
    fn mask_examples() {
        let a = buf(&[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(time_mask(&a, 1, 2).unwrap().samples(), &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(time_mask(&a, 2, 0).unwrap(), a);
        assert_eq!(time_mask(&a, 4, 0).unwrap(), a);
        assert!(time_mask(&a, 3, 2).is_err());
        assert!(time_mask(&a, usize::MAX, 2).is_err());
    }

    #[test]
    fn sampled_params_respect_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let degenerate = RegularizerSpec::TimeStretch {
            speed_min: 1.0,
            speed_max: 1.0,
        };
        assert_eq!(
            sample_params(&degenerate, 100, &mut rng),
            RegularizerParams::Stretch { speed: 1.0 }
        );
        for _ in 0..2000 {
            match sample_params(&RegularizerSpec::time_shift(), 16000, &mut rng) {
                RegularizerParams::Shift { samples } => {
                    assert!((-800..=800).contains(&samples) && samples != 0)
                }
                p => panic!("{p:?}"),
            }
            match sample_params(&RegularizerSpec::volume(), 16000, &mut rng) {
                RegularizerParams::Gain { gain } => {
                    assert!((0.5 - 1e-12..=2.0 + 1e-12).contains(&gain))
                }
                p => panic!("{p:?}"),
            }
            match sample_params(&RegularizerSpec::mask(), 1000, &mut rng) {
                RegularizerParams::Mask { start, width } => {
                    assert!((1..=50).contains(&width) && start + width <= 1000)
                }
                p => panic!("{p:?}"),
            }
            match sample_params(&RegularizerSpec::time_stretch(), 1000, &mut rng) {
                RegularizerParams::Stretch { speed } => assert!((0.9..=1.1).contains(&speed)),
                p => panic!("{p:?}"),
            }
        }
        // Shift and mask bounds collapse to zero on very short inputs.
        assert_eq!(
            sample_params(&RegularizerSpec::time_shift(), 5, &mut rng),
            RegularizerParams::Shift { samples: 0 }
        );
        assert_eq!(
            sample_params(&RegularizerSpec::mask(), 5, &mut rng),
            RegularizerParams::Mask { start: 0, width: 0 }
        );
    }

    #[test]
    fn sampling_is_deterministic_given_rng_state() {
        let spec = RegularizerSpec::noise(NoiseKind::Gaussian);
        let a = buf(&[0.1; 64]);
        let x = regularize(&a, &spec, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let y = regularize(&a, &spec, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(bits(&x), bits(&y));
    }

    #[test]
    fn spec_strings_round_trip() {
        for s in ["tst:0.9:1.1", "tsh:0.05", "va:0.69", "na:gaussian:0.005", "ma:0.05", "id"] {
            let spec: RegularizerSpec = s.parse().unwrap();
            assert_eq!(spec.to_string(), s);
        }
        assert_eq!("tst".parse::<RegularizerSpec>().unwrap(), RegularizerSpec::time_stretch());
        assert_eq!(
            "na:uniform".parse::<RegularizerSpec>().unwrap(),
            RegularizerSpec::Noise {
                kind: NoiseKind::Uniform,
                amplitude: DEFAULT_NOISE_AMPLITUDE
            }
        );
        let list = parse_spec_list("tst:0.9:1.1,na:gaussian:0.005").unwrap();
        assert_eq!(list.len(), 2);
        assert!(parse_spec_list("").unwrap().is_empty());
    }

    #[test]
    fn invalid_specs_are_rejected() {
        for s in [
            "tst:1.2:1.0",
            "tst:0:1",
            "tsh:0",
            "tsh:0.6",
            "va:0",
            "na:pink:0.1",
            "na:gaussian:-1",
            "ma:0.7",
            "xx",
            "tst:1",
            "id:3",
        ] {
            assert!(s.parse::<RegularizerSpec>().is_err(), "{s}");
        }
    }

    proptest! {
        #[test]
        fn shift_preserves_multiset(samples in prop::collection::vec(-1.0f32..1.0, 1..200), shift in -400i64..400) {
            let a = buf(&samples);
            let out = time_shift(&a, shift);
            let mut x = bits(&a);
            let mut y = bits(&out);
            x.sort_unstable();
            y.sort_unstable();
            prop_assert_eq!(x, y);
            prop_assert_eq!(out.sample_rate_hz(), a.sample_rate_hz());
        }

        #[test]
        fn stretch_length_law(len in 1usize..400, speed in 0.25f64..4.0) {
            let a = buf(&vec![0.25; len]);
            let out = time_stretch(&a, speed).unwrap();
            prop_assert!((out.len() as f64 - len as f64 / speed).abs() < 1.0);
            prop_assert!(out.samples().iter().all(|s| s.is_finite()));
        }

        #[test]
        fn mask_changes_only_its_window(
            (samples, start, width) in prop::collection::vec(0.1f32..1.0, 1..100).prop_flat_map(|v| {
                let n = v.len();
                (Just(v), 0..=n).prop_flat_map(move |(v, start)| (Just(v), Just(start), 0..=n - start))
            })
        ) {
            let a = buf(&samples);
            let out = time_mask(&a, start, width).unwrap();
            let changed = a.samples().iter().zip(out.samples()).filter(|(x, y)| x != y).count();
            prop_assert_eq!(changed, width);
            prop_assert!(out.samples()[start..start + width].iter().all(|&s| s == 0.0));
        }
    }
}
