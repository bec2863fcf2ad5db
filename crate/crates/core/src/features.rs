//! Acoustic feature vectors and a deterministic synthetic feature source.
//!
//! A feature vector holds an 18-band cepstrum, a pitch value stored as
//! `log2(f0 / 1 Hz)` and a voicing (pitch correlation) value in `[-1, 1]`.
//! Vectors are spaced 10 ms apart.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub const CEPSTRUM_DIM: usize = 18;
/// Total dimension of one feature vector (cepstrum, pitch, voicing).
pub const FEATURE_DIM: usize = CEPSTRUM_DIM + 2;
pub const FRAME_INTERVAL_MS: u32 = 10;

/// Lowest and highest pitch of the synthetic source, in `log2(Hz)`.
pub const PITCH_MIN: f32 = 5.965_784; // 62.5 Hz
pub const PITCH_MAX: f32 = 8.965_784; // 500 Hz

const CEPSTRUM_LIMIT: f64 = 4.0;

const FILE_MAGIC: &[u8; 8] = b"DREDFEAT";
const FILE_VERSION: u16 = 1;
const HEADER_LEN: usize = 8 + 2 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FeatureVector {
    pub cepstrum: [f32; CEPSTRUM_DIM],
    pub pitch: f32,
    pub voicing: f32,
}

impl FeatureVector {
    /// Builds a vector, clamping voicing to `[-1, 1]`.
    pub fn new(cepstrum: [f32; CEPSTRUM_DIM], pitch: f32, voicing: f32) -> Self {
        FeatureVector {
            cepstrum,
            pitch,
            voicing: voicing.clamp(-1.0, 1.0),
        }
    }

    pub fn to_array(&self) -> [f32; FEATURE_DIM] {
        let mut out = [0.0; FEATURE_DIM];
        out[..CEPSTRUM_DIM].copy_from_slice(&self.cepstrum);
        out[CEPSTRUM_DIM] = self.pitch;
        out[CEPSTRUM_DIM + 1] = self.voicing;
        out
    }

    pub fn from_slice(values: &[f32]) -> Self {
        assert_eq!(values.len(), FEATURE_DIM);
        let mut cepstrum = [0.0; CEPSTRUM_DIM];
        cepstrum.copy_from_slice(&values[..CEPSTRUM_DIM]);
        FeatureVector::new(cepstrum, values[CEPSTRUM_DIM], values[CEPSTRUM_DIM + 1])
    }
}

/// An ordered run of feature vectors at a fixed 10-ms spacing.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureSequence {
    frames: Vec<FeatureVector>,
}

impl FeatureSequence {
    pub fn new(frames: Vec<FeatureVector>) -> Self {
        FeatureSequence { frames }
    }

    pub fn frames(&self) -> &[FeatureVector] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<FeatureVector> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn sample_interval_ms(&self) -> u32 {
        FRAME_INTERVAL_MS
    }

    pub fn duration_ms(&self) -> u64 {
        self.frames.len() as u64 * FRAME_INTERVAL_MS as u64
    }

    /// Frames `[start, end)` as a new sequence.
    pub fn slice(&self, start: usize, end: usize) -> FeatureSequence {
        FeatureSequence::new(self.frames[start..end].to_vec())
    }

    /// Serializes into the `DREDFEAT` byte layout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.frames.len() * FEATURE_DIM * 4);
        out.extend_from_slice(FILE_MAGIC);
        out.extend_from_slice(&FILE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.frames.len() as u32).to_le_bytes());
        for frame in &self.frames {
            for v in frame.to_array() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parses the `DREDFEAT` byte layout. Values are taken verbatim, so a
    /// round trip through [`FeatureSequence::to_bytes`] is bit-exact.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::format("feature file shorter than its header"));
        }
        if &bytes[..8] != FILE_MAGIC {
            return Err(Error::format("bad feature file magic"));
        }
        let version = u16::from_le_bytes([bytes[8], bytes[9]]);
        if version != FILE_VERSION {
            return Err(Error::format(format!("unsupported feature file version {version}")));
        }
        let count = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
        let body = &bytes[HEADER_LEN..];
        let frame_len = FEATURE_DIM * 4;
        if body.len() != count * frame_len {
            return Err(Error::format(format!(
                "feature file declares {count} frames but body holds {} bytes",
                body.len()
            )));
        }
        let frames = body
            .chunks_exact(frame_len)
            .map(|chunk| {
                let mut values = [0.0f32; FEATURE_DIM];
                for (v, b) in values.iter_mut().zip(chunk.chunks_exact(4)) {
                    *v = f32::from_le_bytes(b.try_into().unwrap());
                }
                // Bypass the voicing clamp so the round trip stays exact.
                let mut cepstrum = [0.0; CEPSTRUM_DIM];
                cepstrum.copy_from_slice(&values[..CEPSTRUM_DIM]);
                FeatureVector {
                    cepstrum,
                    pitch: values[CEPSTRUM_DIM],
                    voicing: values[CEPSTRUM_DIM + 1],
                }
            })
            .collect();
        Ok(FeatureSequence { frames })
    }
}

pub fn write_features(path: impl AsRef<Path>, seq: &FeatureSequence) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, seq.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureSequence> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    FeatureSequence::from_bytes(&bytes)
}

struct Partial {
    freq: f64,
    phase: f64,
    weight: f64,
}

/// Generates a deterministic synthetic feature sequence.
///
/// Cepstral coefficients are sums of slow sinusoids with amplitudes that
/// decay with the coefficient index, plus a little noise. Pitch follows a
/// reflected random walk between 62.5 Hz and 500 Hz. Voicing alternates
/// between voiced (> 0.7) and unvoiced (< 0.2) segments of 10 to 50 frames.
pub fn gen_synthetic_features(seed: u64, n_frames: usize) -> Result<FeatureSequence> {
    if n_frames < 2 || !n_frames.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "frame count must be even and at least 2, got {n_frames}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.03).unwrap();
    let pitch_step = Normal::new(0.0, 0.015).unwrap();
    let voicing_jitter = Normal::new(0.0, 0.02).unwrap();

    let partials: Vec<Vec<Partial>> = (0..CEPSTRUM_DIM)
        .map(|k| {
            let amplitude = 3.0 * 0.82f64.powi(k as i32);
            let raw: Vec<f64> = (0..3).map(|_| rng.random_range(0.3..1.0)).collect();
            let total: f64 = raw.iter().sum();
            raw.into_iter()
                .map(|w| Partial {
                    freq: rng.random_range(0.004..0.04),
                    phase: rng.random_range(0.0..TAU),
                    weight: amplitude * w / total,
                })
                .collect()
        })
        .collect();
    let offsets: Vec<f64> = (0..CEPSTRUM_DIM)
        .map(|k| rng.random_range(-0.5..0.5) * 0.9f64.powi(k as i32))
        .collect();

    let (pmin, pmax) = (PITCH_MIN as f64, PITCH_MAX as f64);
    let mut pitch = rng.random_range(6.5..8.0);
    let mut voiced = rng.random_bool(0.5);
    let mut remaining = rng.random_range(10..=50usize);
    let mut level = voicing_level(&mut rng, voiced);

    let mut frames = Vec::with_capacity(n_frames);
    for n in 0..n_frames {
        if remaining == 0 {
            voiced = !voiced;
            remaining = rng.random_range(10..=50usize);
            level = voicing_level(&mut rng, voiced);
        }
        remaining -= 1;

        let t = n as f64;
        let mut cepstrum = [0.0f32; CEPSTRUM_DIM];
        for (k, c) in cepstrum.iter_mut().enumerate() {
            let v: f64 = offsets[k]
                + partials[k]
                    .iter()
                    .map(|p| p.weight * (TAU * p.freq * t + p.phase).sin())
                    .sum::<f64>()
                + noise.sample(&mut rng);
            *c = v.clamp(-CEPSTRUM_LIMIT, CEPSTRUM_LIMIT) as f32;
        }

        pitch += pitch_step.sample(&mut rng);
        if pitch < pmin {
            pitch = 2.0 * pmin - pitch;
        } else if pitch > pmax {
            pitch = 2.0 * pmax - pitch;
        }

        let jitter = voicing_jitter.sample(&mut rng);
        let voicing = if voiced {
            (level + jitter).clamp(0.71, 1.0)
        } else {
            (level + jitter).clamp(-1.0, 0.19)
        };
        frames.push(FeatureVector::new(cepstrum, pitch as f32, voicing as f32));
    }
    Ok(FeatureSequence::new(frames))
}

fn voicing_level(rng: &mut ChaCha8Rng, voiced: bool) -> f64 {
    if voiced {
        rng.random_range(0.75..0.95)
    } else {
        rng.random_range(-0.1..0.15)
    }
}

/// Generates `count` independent synthetic sequences, seeded from `seed`.
pub fn synthetic_corpus(seed: u64, count: usize, n_frames: usize) -> Result<Vec<FeatureSequence>> {
    (0..count)
        .map(|i| gen_synthetic_features(seed.wrapping_mul(0x9E37_79B9).wrapping_add(i as u64), n_frames))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_frame_counts() {
        assert!(matches!(gen_synthetic_features(1, 0), Err(Error::InvalidArgument(_))));
        assert!(matches!(gen_synthetic_features(1, 7), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn deterministic_for_seed() {
        let a = gen_synthetic_features(7, 400).unwrap();
        let b = gen_synthetic_features(7, 400).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        let c = gen_synthetic_features(8, 400).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn value_ranges() {
        let seq = gen_synthetic_features(7, 400).unwrap();
        let mut voiced_runs = 0;
        let mut prev_voiced = None;
        for f in seq.frames() {
            assert!((-1.0..=1.0).contains(&f.voicing));
            assert!(f.voicing > 0.7 || f.voicing < 0.2);
            assert!((PITCH_MIN..=PITCH_MAX).contains(&f.pitch));
            assert!(f.cepstrum.iter().all(|c| (-4.0..=4.0).contains(c)));
            let v = f.voicing > 0.7;
            if prev_voiced != Some(v) {
                voiced_runs += 1;
            }
            prev_voiced = Some(v);
        }
        // 400 frames with 10..=50 frame segments
        assert!((8..=41).contains(&voiced_runs), "{voiced_runs}");
    }

    #[test]
    fn file_round_trip() {
        let seq = gen_synthetic_features(3, 2).unwrap();
        let back = FeatureSequence::from_bytes(&seq.to_bytes()).unwrap();
        assert_eq!(seq, back);
    }

    #[test]
    fn wrong_magic_is_format_error() {
        let mut bytes = gen_synthetic_features(3, 2).unwrap().to_bytes();
        bytes[0] = b'X';
        assert!(matches!(FeatureSequence::from_bytes(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_body_is_format_error() {
        let seq = gen_synthetic_features(3, 10).unwrap();
        let bytes = seq.to_bytes();
        let nine = &bytes[..bytes.len() - FEATURE_DIM * 4];
        assert!(matches!(FeatureSequence::from_bytes(nine), Err(Error::Format(_))));
        assert!(matches!(FeatureSequence::from_bytes(&bytes[..5]), Err(Error::Format(_))));
    }

    #[test]
    fn file_size_matches_layout() {
        let seq = gen_synthetic_features(1, 400).unwrap();
        assert_eq!(seq.to_bytes().len(), 8 + 2 + 4 + 400 * 20 * 4);
    }
}
