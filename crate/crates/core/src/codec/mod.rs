//! Latent encoder stream, per-λ quantization tables and the backward packet
//! decoder.

mod table;
mod transform;

use nalgebra::DVector;

pub use table::{DimQuantizer, QuantizerTable, NUM_LAMBDAS};
pub use transform::{ReferenceTransform, DEFAULT_STRIDE, IS_DIM, LATENT_DIM, PAIR_DIM, STATE_DIM};
pub(crate) use transform::readout_input;

use crate::error::{Error, Result};
use crate::features::{FeatureSequence, FeatureVector, FEATURE_DIM};
use crate::laplace::{scale_quantize, unscale, MAX_SYMBOL};

/// Unquantized latent for one 20-ms encoder step.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentVector {
    pub frame_index: usize,
    pub values: Vec<f64>,
}

/// Unquantized initial state for one 20-ms encoder step.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialState {
    pub frame_index: usize,
    pub values: Vec<f64>,
}

/// Symbols and their dequantized values under one λ index.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLatent {
    pub symbols: Vec<i32>,
    pub lambda_index: usize,
    pub dequantized: Vec<f64>,
}

/// Quantized initial state; same layout as a quantized latent.
pub type QuantizedState = QuantizedLatent;

/// Forward-running encoder. Feed it feature pairs in order; every pair yields
/// one latent and one initial state.
#[derive(Debug, Clone)]
pub struct EncoderStream<'a> {
    transform: &'a ReferenceTransform,
    /// Last `stride + 1` states, oldest first.
    history: Vec<DVector<f64>>,
    step: usize,
}

impl<'a> EncoderStream<'a> {
    pub fn new(transform: &'a ReferenceTransform) -> Self {
        EncoderStream {
            transform,
            history: Vec::with_capacity(transform.stride() + 1),
            step: 0,
        }
    }

    /// Steps encoded so far.
    pub fn position(&self) -> usize {
        self.step
    }

    pub fn push_pair(&mut self, a: &FeatureVector, b: &FeatureVector) -> (LatentVector, InitialState) {
        let stride = self.transform.stride();
        let zero = DVector::zeros(STATE_DIM);
        let prev = self.history.last().unwrap_or(&zero);
        let h = self.transform.step(prev, a, b);
        if self.history.len() == stride + 1 {
            self.history.remove(0);
        }
        self.history.push(h);
        let newest = self.history.last().expect("just pushed");
        let older = if self.history.len() == stride + 1 {
            Some(&self.history[0])
        } else {
            None
        };
        let z = self.transform.latent(newest, older);
        let s = self.transform.initial_state(newest);
        let t = self.step;
        self.step += 1;
        (
            LatentVector {
                frame_index: t,
                values: z.iter().copied().collect(),
            },
            InitialState {
                frame_index: t,
                values: s.iter().copied().collect(),
            },
        )
    }
}

/// Encodes a whole sequence: one latent and one initial state per feature pair.
pub fn encode_stream(
    features: &FeatureSequence,
    transform: &ReferenceTransform,
) -> Result<(Vec<LatentVector>, Vec<InitialState>)> {
    if !features.len().is_multiple_of(2) {
        return Err(Error::invalid(format!("odd frame count {}", features.len())));
    }
    let mut enc = EncoderStream::new(transform);
    Ok(features
        .frames()
        .chunks_exact(2)
        .map(|p| enc.push_pair(&p[0], &p[1]))
        .unzip())
}

fn quantize_values(values: &[f64], dims: &[DimQuantizer], lambda_index: usize) -> QuantizedLatent {
    let mut symbols = Vec::with_capacity(values.len());
    let mut dequantized = Vec::with_capacity(values.len());
    for (&v, d) in values.iter().zip(dims) {
        let q = d.scale as f64;
        let k = scale_quantize(v, q, d.dead_zone as f64).clamp(-MAX_SYMBOL, MAX_SYMBOL);
        symbols.push(k);
        dequantized.push(unscale(k, q));
    }
    QuantizedLatent {
        symbols,
        lambda_index,
        dequantized,
    }
}

/// Scale-quantizes a latent with the table row for `lambda_index`. Symbols
/// saturate at the coder alphabet limit.
pub fn quantize_latent(z: &LatentVector, table: &QuantizerTable, lambda_index: usize) -> QuantizedLatent {
    quantize_values(&z.values, table.latent_row(lambda_index), lambda_index)
}

pub fn quantize_is(s: &InitialState, table: &QuantizerTable, lambda_index: usize) -> QuantizedState {
    quantize_values(&s.values, table.state_row(lambda_index), lambda_index)
}

/// Rebuilds dequantized values from symbols.
pub fn dequantize(symbols: &[i32], dims: &[DimQuantizer]) -> Vec<f64> {
    symbols.iter().zip(dims).map(|(&k, d)| unscale(k, d.scale as f64)).collect()
}

/// Runs the decoder backward from the initial state over `latents` (newest
/// first, one stride apart). Output is chronological: `2 * stride` frames per
/// latent, oldest latent first.
pub fn decode_packet_latents(
    latents: &[Vec<f64>],
    is: &[f64],
    transform: &ReferenceTransform,
) -> Result<FeatureSequence> {
    if latents.is_empty() {
        return Err(Error::invalid("no latents to decode"));
    }
    if is.len() != IS_DIM {
        return Err(Error::invalid(format!("initial state has {} values, expected {IS_DIM}", is.len())));
    }
    if let Some(bad) = latents.iter().find(|z| z.len() != LATENT_DIM) {
        return Err(Error::invalid(format!("latent has {} values, expected {LATENT_DIM}", bad.len())));
    }
    let refs: Vec<&[f64]> = latents.iter().map(Vec::as_slice).collect();
    let blocks = transform.decode_blocks(&refs, is);
    let mut frames = Vec::with_capacity(blocks.len() * transform.frames_per_latent());
    for block in blocks.iter().rev() {
        for chunk in block.as_slice().chunks_exact(FEATURE_DIM) {
            let v: Vec<f32> = chunk.iter().map(|&x| x as f32).collect();
            frames.push(FeatureVector::from_slice(&v));
        }
    }
    Ok(FeatureSequence::new(frames))
}
