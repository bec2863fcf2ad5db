//! Rate-distortion training of quantizer tables against a frozen transform.

use std::io::Write;
use std::path::Path;

use nalgebra::DVector;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{
    dequantize, encode_stream, quantize_is, quantize_latent, readout_input, DimQuantizer, QuantizerTable,
    ReferenceTransform, IS_DIM, LATENT_DIM, NUM_LAMBDAS, STATE_DIM,
};
use crate::error::{Error, Result};
use crate::features::{FeatureSequence, CEPSTRUM_DIM, FEATURE_DIM};
use crate::laplace::{
    rate_bits, rate_bits_grad_r, rate_bits_grad_z, soft_deadzone, soft_deadzone_grad, soft_deadzone_grad_delta,
    symbol_bits_grad, MAX_SYMBOL,
};
use crate::range_coder::SymbolModel;

pub const MIN_CORPUS: usize = 100;
pub const DEFAULT_DEGENERATE_BITS: f64 = 0.01;
const PITCH_WEIGHT: f64 = 10.0;
const EVAL_SLICES: usize = 4;

const LOG_SCALE_MIN: f64 = -14.0;
const LOG_SCALE_MAX: f64 = 6.0;
const LOGIT_MIN: f64 = -20.0;
const LOGIT_MAX: f64 = 12.0;
const THETA_MAX: f64 = 8.0;
const DEAD_ZONE_MAX: f64 = 8.0;

/// Mean over frames of `|c~ - c|^2 + 10 v^2 |p~ - p| + (v~ - v)^2`, with `v`
/// taken from the reference `x`.
pub fn distortion(x: &FeatureSequence, x_hat: &FeatureSequence) -> Result<f64> {
    if x.len() != x_hat.len() {
        return Err(Error::invalid(format!("length mismatch: {} vs {}", x.len(), x_hat.len())));
    }
    if x.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = x
        .frames()
        .iter()
        .zip(x_hat.frames())
        .map(|(a, b)| {
            let mut ref_frame = [0.0; FEATURE_DIM];
            let mut out = [0.0; FEATURE_DIM];
            for (i, (&u, &v)) in a.to_array().iter().zip(&b.to_array()).enumerate() {
                ref_frame[i] = u as f64;
                out[i] = v as f64;
            }
            frame_distortion(&ref_frame, &out, None)
        })
        .sum();
    Ok(total / x.len() as f64)
}

/// Per-frame distortion; optionally writes its gradient w.r.t. `out`.
fn frame_distortion(truth: &[f64], out: &[f64], grad: Option<&mut [f64]>) -> f64 {
    let v = truth[CEPSTRUM_DIM + 1];
    let wp = PITCH_WEIGHT * v * v;
    let mut d = 0.0;
    for i in 0..CEPSTRUM_DIM {
        d += (out[i] - truth[i]).powi(2);
    }
    let dp = out[CEPSTRUM_DIM] - truth[CEPSTRUM_DIM];
    let dv = out[CEPSTRUM_DIM + 1] - v;
    d += wp * dp.abs() + dv * dv;
    if let Some(g) = grad {
        for i in 0..CEPSTRUM_DIM {
            g[i] = 2.0 * (out[i] - truth[i]);
        }
        g[CEPSTRUM_DIM] = wp * dp.signum() * (dp != 0.0) as u8 as f64;
        g[CEPSTRUM_DIM + 1] = 2.0 * dv;
    }
    d
}

/// Weighted loss: `(w D_soft + (1 - w) D_hard) / sqrt(lambda) + sqrt(lambda) * sum(rates)`.
pub fn rd_loss(dist_soft: f64, dist_hard: f64, rates_soft: &[f64], lambda: f64, mix: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
    }
    if !(0.0..=1.0).contains(&mix) {
        return Err(Error::invalid(format!("mix weight {mix} outside [0, 1]")));
    }
    let s = lambda.sqrt();
    let rate: f64 = rates_soft.iter().sum();
    Ok((mix * dist_soft + (1.0 - mix) * dist_hard) / s + s * rate)
}

/// `n` values log-spaced from `lo` to `hi` inclusive.
pub fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda_grid: Vec<f64>,
    pub soft_hard_mix: f64,
    pub steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Frames per corpus sequence at the first lengthening stage.
    pub sequence_frames: usize,
    pub slices_per_sequence: usize,
    /// Number of times the encode length doubles over training.
    pub lengthening_stages: usize,
    pub heldout_fraction: f64,
    /// Steps between intermediate evaluations; 0 evaluates only at the end.
    pub eval_every: usize,
    pub seed: u64,
    pub transform_seed: u64,
    pub stride: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_grid: log_spaced(4e-3, 0.2, NUM_LAMBDAS),
            soft_hard_mix: 0.5,
            steps: 6000,
            learning_rate: 0.2,
            batch_size: 8,
            sequence_frames: 400,
            slices_per_sequence: 4,
            lengthening_stages: 4,
            heldout_fraction: 0.1,
            eval_every: 0,
            seed: 1,
            transform_seed: 7,
            stride: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_grid.len() != NUM_LAMBDAS {
            return Err(Error::invalid(format!("lambda grid needs {NUM_LAMBDAS} values")));
        }
        if self.lambda_grid.iter().any(|&l| !(l > 0.0) || !l.is_finite())
            || self.lambda_grid.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(Error::invalid("lambda grid must be positive and strictly increasing"));
        }
        if !(0.0..=1.0).contains(&self.soft_hard_mix) {
            return Err(Error::invalid("soft/hard mix must be in [0, 1]"));
        }
        if self.batch_size == 0 || self.slices_per_sequence == 0 || self.lengthening_stages == 0 {
            return Err(Error::invalid("batch size, slices and stages must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.heldout_fraction) {
            return Err(Error::invalid("held-out fraction must be in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RDPoint {
    pub lambda_index: usize,
    pub mean_rate_bits: f64,
    pub mean_distortion: f64,
    pub nondegenerate_dims: usize,
    pub mean_is_bits: f64,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: usize,
    pub lambda_index: usize,
    pub rate_bits: f64,
    pub distortion: f64,
    pub nondegenerate: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub table: QuantizerTable,
    pub points: Vec<RDPoint>,
    pub log: Vec<EvalRecord>,
}

pub fn write_log_jsonl(path: impl AsRef<Path>, records: &[EvalRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).expect("records serialize");
        out.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

/// Encoded form of one training sequence.
#[derive(Debug, Clone)]
pub(crate) struct Encoded {
    frames: Vec<[f64; FEATURE_DIM]>,
    latents: Vec<f64>,
    states: Vec<f64>,
}

impl Encoded {
    pub(crate) fn new(seq: &FeatureSequence, transform: &ReferenceTransform) -> Result<Self> {
        let (z, s) = encode_stream(seq, transform)?;
        Ok(Encoded {
            frames: seq
                .frames()
                .iter()
                .map(|f| {
                    let mut a = [0.0; FEATURE_DIM];
                    for (o, v) in a.iter_mut().zip(f.to_array()) {
                        *o = v as f64;
                    }
                    a
                })
                .collect(),
            latents: z.into_iter().flat_map(|l| l.values).collect(),
            states: s.into_iter().flat_map(|l| l.values).collect(),
        })
    }

    fn steps(&self) -> usize {
        self.latents.len() / LATENT_DIM
    }

    fn latent(&self, t: usize) -> &[f64] {
        &self.latents[t * LATENT_DIM..(t + 1) * LATENT_DIM]
    }

    fn state(&self, t: usize) -> &[f64] {
        &self.states[t * IS_DIM..(t + 1) * IS_DIM]
    }
}

#[derive(Debug, Clone, Copy)]
struct DimParam {
    log_scale: f64,
    dead_zone: f64,
    logit_soft: f64,
    logit_hard: f64,
    theta: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct DimGrad {
    log_scale: f64,
    dead_zone: f64,
    logit_soft: f64,
    logit_hard: f64,
    theta: f64,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl DimParam {
    fn init(spread: f64, scale_factor: f64) -> Self {
        DimParam {
            log_scale: (scale_factor / spread.max(1e-9)).ln().clamp(LOG_SCALE_MIN, LOG_SCALE_MAX),
            dead_zone: 0.1,
            logit_soft: 0.0,
            logit_hard: 0.0,
            theta: 0.6,
        }
    }

    fn scale(&self) -> f64 {
        self.log_scale.exp()
    }

    fn step(&mut self, g: &DimGrad, lr: f64) {
        self.log_scale = (self.log_scale - lr * g.log_scale).clamp(LOG_SCALE_MIN, LOG_SCALE_MAX);
        self.dead_zone = (self.dead_zone - lr * g.dead_zone).clamp(0.0, DEAD_ZONE_MAX);
        self.logit_soft = (self.logit_soft - lr * g.logit_soft).clamp(LOGIT_MIN, LOGIT_MAX);
        self.logit_hard = (self.logit_hard - lr * g.logit_hard).clamp(LOGIT_MIN, LOGIT_MAX);
        self.theta = (self.theta - lr * g.theta).clamp(0.5, THETA_MAX);
    }

    fn to_quantizer(self) -> DimQuantizer {
        let q = self.scale();
        DimQuantizer {
            scale: if q < crate::laplace::DEGENERATE_SCALE { 0.0 } else { q as f32 },
            r_soft: (sigmoid(self.logit_soft) as f32).clamp(f32::MIN_POSITIVE, 1.0 - f32::EPSILON),
            r_hard: (sigmoid(self.logit_hard) as f32).clamp(f32::MIN_POSITIVE, 1.0 - f32::EPSILON),
            dead_zone: self.dead_zone as f32,
            theta: self.theta as f32,
        }
    }
}

/// Quantizer parameters for one λ index.
#[derive(Debug, Clone)]
struct Row {
    latent: Vec<DimParam>,
    state: Vec<DimParam>,
}

/// Forward values of one quantized element and the partials the backward
/// pass needs.
#[derive(Debug, Clone, Copy, Default)]
struct Element {
    soft: f64,
    hard: f64,
    symbol: i32,
    /// d soft / d log_scale and d hard / d log_scale
    soft_dk: f64,
    hard_dk: f64,
    /// d(soft or hard) / d dead_zone
    dd: f64,
    rate: f64,
    rate_dk: f64,
    rate_dd: f64,
    rate_dr: f64,
}

fn quantize_element(x: f64, p: &DimParam, noise: f64) -> Element {
    let q = p.scale();
    let a = q * x;
    let y = soft_deadzone(a, p.dead_zone);
    let g1 = soft_deadzone_grad(a, p.dead_zone);
    let gd = soft_deadzone_grad_delta(a, p.dead_zone);
    let soft = (y + noise) / q;
    let degenerate = q < crate::laplace::DEGENERATE_SCALE;
    let symbol = if degenerate {
        0
    } else {
        (y.round() as i64).clamp(-(MAX_SYMBOL as i64), MAX_SYMBOL as i64) as i32
    };
    let hard = symbol as f64 / q;
    let r = sigmoid(p.logit_soft);
    let sgn = y.signum() * (y != 0.0) as u8 as f64;
    let rgz = rate_bits_grad_z(r);
    Element {
        soft,
        hard: if degenerate { 0.0 } else { hard },
        symbol,
        soft_dk: g1 * x - soft,
        hard_dk: if degenerate { 0.0 } else { g1 * x - hard },
        dd: gd / q,
        rate: rate_bits(y.abs(), r),
        rate_dk: rgz * sgn * g1 * a,
        rate_dd: rgz * sgn * gd,
        rate_dr: rate_bits_grad_r(y.abs(), r) * r * (1.0 - r),
    }
}

/// One decode window: latents at `newest, newest - S, ...` (count `k`).
#[derive(Debug, Clone, Copy)]
struct Window {
    newest: usize,
    k: usize,
}

/// Decodes one path of a window and back-propagates its distortion. Returns
/// the mean frame distortion, the gradient w.r.t. every dequantized latent
/// element (window order) and w.r.t. the dequantized initial state.
fn decode_backprop(
    transform: &ReferenceTransform,
    seq: &Encoded,
    win: Window,
    zd: &[f64],
    sd: &[f64],
    want_grad: bool,
) -> (f64, Vec<f64>, Vec<f64>) {
    let parts = transform.parts();
    let stride = transform.stride();
    let fpl = transform.frames_per_latent();
    let mut curs = Vec::with_capacity(win.k + 1);
    curs.push(parts.state_map.tr_mul(&DVector::from_column_slice(sd)));
    let mut grads_out: Vec<DVector<f64>> = Vec::with_capacity(win.k);
    let mut total = 0.0;
    let mut frames = 0usize;
    let mut g = vec![0.0; FEATURE_DIM];
    for j in 0..win.k {
        let z = DVector::from_column_slice(&zd[j * LATENT_DIM..(j + 1) * LATENT_DIM]);
        let older = parts.predictor * &curs[j] + parts.latent_inverse * z;
        let out = parts.readout * readout_input(&curs[j], &older);
        let t = win.newest - j * stride;
        let first = 2 * (t + 1) as isize - fpl as isize;
        let mut gout = DVector::zeros(fpl * FEATURE_DIM);
        for m in 0..fpl {
            let f = first + m as isize;
            if f < 0 {
                continue;
            }
            let o = &out.as_slice()[m * FEATURE_DIM..(m + 1) * FEATURE_DIM];
            total += frame_distortion(&seq.frames[f as usize], o, Some(&mut g));
            frames += 1;
            gout.rows_mut(m * FEATURE_DIM, FEATURE_DIM).copy_from_slice(&g);
        }
        grads_out.push(gout);
        curs.push(older);
    }
    let frames = frames.max(1) as f64;
    if !want_grad {
        return (total / frames, Vec::new(), Vec::new());
    }
    let mut dz = vec![0.0; win.k * LATENT_DIM];
    let mut adj_cur = DVector::zeros(STATE_DIM);
    for j in (0..win.k).rev() {
        let a = parts.readout.tr_mul(&(&grads_out[j] / frames));
        let adj_older = a.rows(STATE_DIM, STATE_DIM) + &adj_cur;
        let gz = parts.latent_inverse.tr_mul(&adj_older);
        dz[j * LATENT_DIM..(j + 1) * LATENT_DIM].copy_from_slice(gz.as_slice());
        adj_cur = a.rows(0, STATE_DIM) + parts.predictor.tr_mul(&adj_older);
    }
    let ds = parts.state_map * adj_cur;
    (total / frames, dz, ds.as_slice().to_vec())
}

/// Loss and parameter gradients of one slice at one λ.
struct SliceResult {
    loss: f64,
    latent: Vec<DimGrad>,
    state: Vec<DimGrad>,
}

#[allow(clippy::too_many_arguments)]
fn slice_gradient(
    transform: &ReferenceTransform,
    seq: &Encoded,
    win: Window,
    row: &Row,
    lambda: f64,
    mix: f64,
    noise: &[f64],
) -> SliceResult {
    let stride = transform.stride();
    let n = win.k * LATENT_DIM;
    let mut lat = Vec::with_capacity(n);
    for j in 0..win.k {
        let z = seq.latent(win.newest - j * stride);
        for i in 0..LATENT_DIM {
            lat.push(quantize_element(z[i], &row.latent[i], noise[j * LATENT_DIM + i]));
        }
    }
    let s = seq.state(win.newest);
    let st: Vec<Element> = (0..IS_DIM)
        .map(|i| quantize_element(s[i], &row.state[i], noise[n + i]))
        .collect();

    let soft_z: Vec<f64> = lat.iter().map(|e| e.soft).collect();
    let soft_s: Vec<f64> = st.iter().map(|e| e.soft).collect();
    let hard_z: Vec<f64> = lat.iter().map(|e| e.hard).collect();
    let hard_s: Vec<f64> = st.iter().map(|e| e.hard).collect();
    let (d_soft, gz_soft, gs_soft) = decode_backprop(transform, seq, win, &soft_z, &soft_s, true);
    let (d_hard, gz_hard, gs_hard) = decode_backprop(transform, seq, win, &hard_z, &hard_s, mix < 1.0);

    let sl = lambda.sqrt();
    let ws = mix / sl;
    let wh = (1.0 - mix) / sl;
    let wr = sl / win.k as f64;

    let rate: f64 = lat.iter().chain(&st).map(|e| e.rate).sum();
    let loss = ws * d_soft + wh * d_hard + wr * rate;

    let accumulate = |elems: &[Element], gsoft: &[f64], ghard: &[f64], dims: usize, out: &mut Vec<DimGrad>| {
        out.resize(dims, DimGrad::default());
        for (idx, e) in elems.iter().enumerate() {
            let g = &mut out[idx % dims];
            let gh = ghard.get(idx).copied().unwrap_or(0.0);
            g.log_scale += ws * gsoft[idx] * e.soft_dk + wh * gh * e.hard_dk + wr * e.rate_dk;
            g.dead_zone += (ws * gsoft[idx] + wh * gh) * e.dd + wr * e.rate_dd;
            g.logit_soft += wr * e.rate_dr;
        }
    };
    let mut latent = Vec::new();
    let mut state = Vec::new();
    accumulate(&lat, &gz_soft, &gz_hard, LATENT_DIM, &mut latent);
    accumulate(&st, &gs_soft, &gs_hard, IS_DIM, &mut state);

    // The hard pmf tracks the hard symbols by cross-entropy, separately from
    // the RD loss.
    let xent = |elems: &[Element], params: &[DimParam], dims: usize, out: &mut [DimGrad], count: f64| {
        for (idx, e) in elems.iter().enumerate() {
            let p = &params[idx % dims];
            let r = sigmoid(p.logit_hard);
            let (gr, gt) = symbol_bits_grad(e.symbol, r, p.theta);
            out[idx % dims].logit_hard += gr * r * (1.0 - r) / count;
            out[idx % dims].theta += gt / count;
        }
    };
    xent(&lat, &row.latent, LATENT_DIM, &mut latent, win.k as f64);
    xent(&st, &row.state, IS_DIM, &mut state, 1.0);

    SliceResult { loss, latent, state }
}

fn noise_len(k: usize) -> usize {
    k * LATENT_DIM + IS_DIM
}

/// Random split of `0..len` into `parts` non-empty contiguous segments.
fn random_segments(rng: &mut ChaCha8Rng, len: usize, parts: usize) -> Vec<(usize, usize)> {
    let parts = parts.clamp(1, len.max(1));
    let mut cuts: Vec<usize> = sample(rng, len - 1, parts - 1).into_iter().map(|c| c + 1).collect();
    cuts.sort_unstable();
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for c in cuts.into_iter().chain(std::iter::once(len)) {
        out.push((start, c));
        start = c;
    }
    out
}

fn window_for(segment: (usize, usize), stride: usize) -> Window {
    let (a, b) = segment;
    Window {
        newest: b - 1,
        k: (b - 1 - a) / stride + 1,
    }
}

/// Per-dimension standard deviation of latents and states.
fn spreads(seqs: &[Encoded]) -> (Vec<f64>, Vec<f64>) {
    let mut lat = vec![(0.0, 0.0); LATENT_DIM];
    let mut st = vec![(0.0, 0.0); IS_DIM];
    let mut n = 0.0;
    for s in seqs {
        for t in 0..s.steps() {
            for (acc, &v) in lat.iter_mut().zip(s.latent(t)) {
                acc.0 += v;
                acc.1 += v * v;
            }
            for (acc, &v) in st.iter_mut().zip(s.state(t)) {
                acc.0 += v;
                acc.1 += v * v;
            }
            n += 1.0;
        }
    }
    let f = |acc: &[(f64, f64)]| -> Vec<f64> {
        acc.iter()
            .map(|&(a, b)| (b / n - (a / n).powi(2)).max(0.0).sqrt())
            .collect()
    };
    (f(&lat), f(&st))
}

/// Maximum-likelihood `(r, theta)` of the discrete Laplace pmf for a set of
/// symbols, with `theta >= 0.5`.
pub fn fit_hard_pmf(symbols: &[i32]) -> (f64, f64) {
    let n0 = symbols.iter().filter(|&&k| k == 0).count() as f64;
    let n1 = symbols.len() as f64 - n0;
    let excess: f64 = symbols.iter().filter(|&&k| k != 0).map(|&k| (k.unsigned_abs() - 1) as f64).sum();
    let r_floor = 1e-9;
    let r_ceil = 1.0 - 1e-7;
    if n1 == 0.0 {
        return (r_floor, 0.5);
    }
    // With theta free, P(0) = 1 - r^theta and r separate.
    let r = (excess / (excess + n1)).clamp(r_floor, r_ceil);
    if n0 == 0.0 {
        return (r, THETA_MAX);
    }
    let a = n1 / (n0 + n1);
    let theta = a.ln() / r.ln();
    if theta >= 0.5 && r > r_floor {
        return (r, theta.min(THETA_MAX));
    }
    // theta pinned at 0.5: maximize over r alone (log-likelihood is concave
    // in log r).
    let ll = |r: f64| n0 * (1.0 - r.sqrt()).ln() + n1 * (0.5 * (1.0 - r)).ln() + (excess + 0.5 * n1) * r.ln();
    let (mut lo, mut hi) = (r_floor.ln(), r_ceil.ln());
    for _ in 0..200 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if ll(m1.exp()) < ll(m2.exp()) {
            lo = m1;
        } else {
            hi = m2;
        }
    }
    (((lo + hi) / 2.0).exp(), 0.5)
}

/// Plug-in entropy in bits of a symbol histogram.
fn empirical_entropy(symbols: &[i32]) -> f64 {
    if symbols.is_empty() {
        return 0.0;
    }
    let mut counts = std::collections::HashMap::new();
    for &k in symbols {
        *counts.entry(k).or_insert(0usize) += 1;
    }
    let n = symbols.len() as f64;
    counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

/// Hard symbols of every latent of every probe sequence at one λ, grouped by
/// dimension.
fn hard_symbols_by_dim(table: &QuantizerTable, lambda_index: usize, probe: &[Encoded]) -> Vec<Vec<i32>> {
    let row = table.latent_row(lambda_index);
    let mut out = vec![Vec::new(); LATENT_DIM];
    for s in probe {
        for t in 0..s.steps() {
            for (i, &v) in s.latent(t).iter().enumerate() {
                let d = row[i];
                let k = crate::laplace::scale_quantize(v, d.scale as f64, d.dead_zone as f64);
                out[i].push(k.clamp(-MAX_SYMBOL, MAX_SYMBOL));
            }
        }
    }
    out
}

/// Non-degenerate latent dimensions per λ index: dimensions whose hard
/// symbols on the probe corpus carry at least `threshold` bits.
pub fn count_nondegenerate(
    table: &QuantizerTable,
    transform: &ReferenceTransform,
    probe: &[FeatureSequence],
    threshold: f64,
) -> Result<Vec<usize>> {
    let encoded = probe
        .iter()
        .map(|s| Encoded::new(s, transform))
        .collect::<Result<Vec<_>>>()?;
    Ok((0..NUM_LAMBDAS)
        .map(|l| count_nondegenerate_encoded(table, l, &encoded, threshold))
        .collect())
}

fn count_nondegenerate_encoded(table: &QuantizerTable, lambda_index: usize, probe: &[Encoded], threshold: f64) -> usize {
    hard_symbols_by_dim(table, lambda_index, probe)
        .iter()
        .filter(|syms| empirical_entropy(syms) >= threshold)
        .count()
}

/// Hard-path evaluation of one λ index on whole sequences split into
/// `slices` equal decode windows.
fn evaluate(
    table: &QuantizerTable,
    transform: &ReferenceTransform,
    lambda_index: usize,
    data: &[Encoded],
    slices: usize,
) -> RDPoint {
    let st_row = table.state_row(lambda_index);
    let lat_models: Vec<SymbolModel> = table.latent_models(lambda_index);
    let st_models: Vec<SymbolModel> = table.state_models(lambda_index);
    let stride = transform.stride();
    let mut rate = 0.0;
    let mut vectors = 0usize;
    let mut is_bits = 0.0;
    let mut windows = 0usize;
    let mut dist = 0.0;
    for s in data {
        let steps = s.steps();
        let mut deq = vec![0.0; steps * LATENT_DIM];
        for t in 0..steps {
            let q = quantize_latent(
                &crate::codec::LatentVector {
                    frame_index: t,
                    values: s.latent(t).to_vec(),
                },
                table,
                lambda_index,
            );
            rate += q.symbols.iter().zip(&lat_models).map(|(&k, m)| m.cost_bits(k)).sum::<f64>();
            deq[t * LATENT_DIM..(t + 1) * LATENT_DIM].copy_from_slice(&q.dequantized);
            vectors += 1;
        }
        let parts = slices.clamp(1, steps);
        for p in 0..parts {
            let a = p * steps / parts;
            let b = (p + 1) * steps / parts;
            let win = window_for((a, b), stride);
            let qs = quantize_is(
                &crate::codec::InitialState {
                    frame_index: win.newest,
                    values: s.state(win.newest).to_vec(),
                },
                table,
                lambda_index,
            );
            is_bits += qs.symbols.iter().zip(&st_models).map(|(&k, m)| m.cost_bits(k)).sum::<f64>();
            let mut zd = Vec::with_capacity(win.k * LATENT_DIM);
            for j in 0..win.k {
                let t = win.newest - j * stride;
                zd.extend_from_slice(&deq[t * LATENT_DIM..(t + 1) * LATENT_DIM]);
            }
            let sd = dequantize(&qs.symbols, st_row);
            let (d, _, _) = decode_backprop(transform, s, win, &zd, &sd, false);
            dist += d;
            windows += 1;
        }
    }
    RDPoint {
        lambda_index,
        mean_rate_bits: rate / vectors.max(1) as f64,
        mean_distortion: dist / windows.max(1) as f64,
        nondegenerate_dims: count_nondegenerate_encoded(table, lambda_index, data, DEFAULT_DEGENERATE_BITS),
        mean_is_bits: is_bits / windows.max(1) as f64,
    }
}

/// Hard-path RD point of every λ index of `table` on `corpus`, each sequence
/// decoded as four equal windows.
pub fn rd_sweep(table: &QuantizerTable, corpus: &[FeatureSequence]) -> Result<Vec<RDPoint>> {
    if corpus.is_empty() {
        return Err(Error::invalid("empty probe corpus"));
    }
    let transform = ReferenceTransform::with_stride(table.transform_seed, table.stride)?;
    let encoded = corpus
        .iter()
        .map(|s| Encoded::new(s, &transform))
        .collect::<Result<Vec<_>>>()?;
    Ok((0..NUM_LAMBDAS)
        .map(|l| evaluate(table, &transform, l, &encoded, EVAL_SLICES))
        .collect())
}

fn rows_to_table(rows: &[Row], config: &TrainConfig) -> Result<QuantizerTable> {
    let latent = rows.iter().flat_map(|r| r.latent.iter().map(|p| p.to_quantizer())).collect();
    let state = rows.iter().flat_map(|r| r.state.iter().map(|p| p.to_quantizer())).collect();
    QuantizerTable::new(config.transform_seed, config.stride, latent, state)
}

/// Replaces each hard pmf with the maximum-likelihood fit to the hard symbols
/// the trained quantizers produce on `data`.
fn refit_hard_pmfs(table: &mut QuantizerTable, data: &[Encoded]) {
    for l in 0..NUM_LAMBDAS {
        let by_dim = hard_symbols_by_dim(table, l, data);
        for (d, syms) in table.latent_row_mut(l).iter_mut().zip(&by_dim) {
            let (r, theta) = fit_hard_pmf(syms);
            d.r_hard = (r as f32).clamp(f32::MIN_POSITIVE, 1.0 - f32::EPSILON);
            d.theta = theta as f32;
        }
        let st_row: Vec<DimQuantizer> = table.state_row(l).to_vec();
        for (i, d) in table.state_row_mut(l).iter_mut().enumerate() {
            let syms: Vec<i32> = data
                .iter()
                .flat_map(|s| (0..s.steps()).map(move |t| s.state(t)[i]))
                .map(|v| {
                    crate::laplace::scale_quantize(v, st_row[i].scale as f64, st_row[i].dead_zone as f64)
                        .clamp(-MAX_SYMBOL, MAX_SYMBOL)
                })
                .collect();
            let (r, theta) = fit_hard_pmf(&syms);
            d.r_hard = (r as f32).clamp(f32::MIN_POSITIVE, 1.0 - f32::EPSILON);
            d.theta = theta as f32;
        }
    }
}

/// Trains all 16 quantizers on `corpus` (the last `heldout_fraction` of it is
/// held out) and reports one RD point per λ index on the held-out part.
pub fn train_tables(config: &TrainConfig, corpus: &[FeatureSequence]) -> Result<TrainOutcome> {
    config.validate()?;
    if corpus.len() < MIN_CORPUS {
        return Err(Error::invalid(format!(
            "corpus has {} sequences, need at least {MIN_CORPUS}",
            corpus.len()
        )));
    }
    if corpus.iter().any(|s| s.len() != config.sequence_frames) {
        return Err(Error::invalid(format!(
            "every corpus sequence must have {} frames",
            config.sequence_frames
        )));
    }
    let transform = ReferenceTransform::with_stride(config.transform_seed, config.stride)?;
    let n_held = ((corpus.len() as f64 * config.heldout_fraction).round() as usize).max(1);
    let (train, held) = corpus.split_at(corpus.len() - n_held);
    let heldout = held
        .iter()
        .map(|s| Encoded::new(s, &transform))
        .collect::<Result<Vec<_>>>()?;

    // Encoded sequences per lengthening stage; stage g concatenates 2^g
    // corpus sequences.
    let mut stages = Vec::with_capacity(config.lengthening_stages);
    for g in 0..config.lengthening_stages {
        let group = 1usize << g;
        let mut seqs = Vec::new();
        for chunk in train.chunks(group) {
            if chunk.len() < group && !seqs.is_empty() {
                break;
            }
            let frames: Vec<_> = chunk.iter().flat_map(|s| s.frames().iter().copied()).collect();
            seqs.push(Encoded::new(&FeatureSequence::new(frames), &transform)?);
        }
        stages.push((seqs, config.slices_per_sequence * group));
    }

    let (lat_spread, st_spread) = spreads(&stages[0].0);
    let mut rows: Vec<Row> = (0..NUM_LAMBDAS)
        .map(|l| {
            let factor = 8.0 * (0.5f64 / 8.0).powf(l as f64 / (NUM_LAMBDAS - 1) as f64);
            Row {
                latent: lat_spread.iter().map(|&s| DimParam::init(s, factor)).collect(),
                state: st_spread.iter().map(|&s| DimParam::init(s, factor)).collect(),
            }
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut log = Vec::new();
    for step in 0..config.steps {
        let stage = (step * config.lengthening_stages / config.steps.max(1)).min(config.lengthening_stages - 1);
        let (seqs, parts) = &stages[stage];
        let l = rng.random_range(0..NUM_LAMBDAS);
        let lambda = config.lambda_grid[l];
        let jobs: Vec<(&Encoded, Window, Vec<f64>)> = (0..config.batch_size)
            .map(|_| {
                let seq = &seqs[rng.random_range(0..seqs.len())];
                let segs = random_segments(&mut rng, seq.steps(), *parts);
                let win = window_for(segs[rng.random_range(0..segs.len())], config.stride);
                let noise = (0..noise_len(win.k)).map(|_| rng.random::<f64>() - 0.5).collect();
                (seq, win, noise)
            })
            .collect();
        // parallel map, sequential reduction in batch order
        let results: Vec<SliceResult> = jobs
            .par_iter()
            .map(|(seq, win, noise)| {
                slice_gradient(&transform, seq, *win, &rows[l], lambda, config.soft_hard_mix, noise)
            })
            .collect();
        let mut lat_g = vec![DimGrad::default(); LATENT_DIM];
        let mut st_g = vec![DimGrad::default(); IS_DIM];
        for res in &results {
            for (acc, g) in lat_g.iter_mut().zip(&res.latent).chain(st_g.iter_mut().zip(&res.state)) {
                acc.log_scale += g.log_scale;
                acc.dead_zone += g.dead_zone;
                acc.logit_soft += g.logit_soft;
                acc.logit_hard += g.logit_hard;
                acc.theta += g.theta;
            }
        }
        let lr = config.learning_rate / config.batch_size as f64;
        for (p, g) in rows[l].latent.iter_mut().zip(&lat_g) {
            p.step(g, lr);
        }
        for (p, g) in rows[l].state.iter_mut().zip(&st_g) {
            p.step(g, lr);
        }
        if config.eval_every > 0 && (step + 1) % config.eval_every == 0 && step + 1 < config.steps {
            let table = rows_to_table(&rows, config)?;
            for l in 0..NUM_LAMBDAS {
                let p = evaluate(&table, &transform, l, &heldout, EVAL_SLICES);
                log.push(EvalRecord {
                    step: step + 1,
                    lambda_index: l,
                    rate_bits: p.mean_rate_bits,
                    distortion: p.mean_distortion,
                    nondegenerate: p.nondegenerate_dims,
                });
            }
        }
    }

    let mut table = rows_to_table(&rows, config)?;
    refit_hard_pmfs(&mut table, &stages[0].0);
    let points: Vec<RDPoint> = (0..NUM_LAMBDAS)
        .map(|l| evaluate(&table, &transform, l, &heldout, EVAL_SLICES))
        .collect();
    for p in &points {
        log.push(EvalRecord {
            step: config.steps,
            lambda_index: p.lambda_index,
            rate_bits: p.mean_rate_bits,
            distortion: p.mean_distortion,
            nondegenerate: p.nondegenerate_dims,
        });
    }
    Ok(TrainOutcome { table, points, log })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    pub seed: u64,
    pub points: usize,
    pub transform_seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            seed: 1,
            points: 100,
            transform_seed: 7,
        }
    }
}

/// Maximum relative error between analytic and central-difference gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub points: usize,
    pub max_rel_err_scale: f64,
    pub max_rel_err_dead_zone: f64,
    pub max_rel_err_latent: f64,
    /// Whole-slice soft loss through the decoder, w.r.t. log-scale and dead zone.
    pub max_rel_err_slice: f64,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.max_rel_err_scale
            .max(self.max_rel_err_dead_zone)
            .max(self.max_rel_err_latent)
            .max(self.max_rel_err_slice)
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Scalar soft-path loss of one element: squared error of the noisy
/// dequantized value against `target` plus weighted soft rate.
fn point_loss(z: f64, q: f64, delta: f64, r: f64, noise: f64, target: f64, weight: f64) -> f64 {
    let y = soft_deadzone(q * z, delta);
    ((y + noise) / q - target).powi(2) + weight * rate_bits(y.abs(), r)
}

/// Analytic gradient of [`point_loss`] w.r.t. `(q, delta, z)`.
fn point_grad(z: f64, q: f64, delta: f64, r: f64, noise: f64, target: f64, weight: f64) -> (f64, f64, f64) {
    let a = q * z;
    let y = soft_deadzone(a, delta);
    let g1 = soft_deadzone_grad(a, delta);
    let gd = soft_deadzone_grad_delta(a, delta);
    let e = 2.0 * ((y + noise) / q - target);
    let rs = weight * rate_bits_grad_z(r) * y.signum();
    let dq = e * (g1 * z / q - (y + noise) / (q * q)) + rs * g1 * z;
    let dd = e * gd / q + rs * gd;
    let dz = e * g1 + rs * g1 * q;
    (dq, dd, dz)
}

/// Compares analytic gradients of the soft loss against central differences.
/// Points are drawn away from the rate kink at `zeta = 0`.
pub fn grad_check(config: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut report = GradCheckReport {
        points: 0,
        max_rel_err_scale: 0.0,
        max_rel_err_dead_zone: 0.0,
        max_rel_err_latent: 0.0,
        max_rel_err_slice: 0.0,
    };
    while report.points < config.points {
        let z = rng.random_range(-6.0..6.0);
        let q = rng.random_range(0.2..5.0);
        let delta = rng.random_range(0.0..1.0);
        let r = rng.random_range(0.05..0.95);
        let noise = rng.random::<f64>() - 0.5;
        let target = rng.random_range(-4.0..4.0);
        let weight = rng.random_range(0.1..2.0);
        if soft_deadzone(q * z, delta).abs() < 0.05 {
            continue;
        }
        let f = |z: f64, q: f64, d: f64| point_loss(z, q, d, r, noise, target, weight);
        let (aq, ad, az) = point_grad(z, q, delta, r, noise, target, weight);
        let h = 1e-6;
        let nq = (f(z, q + h, delta) - f(z, q - h, delta)) / (2.0 * h);
        let nz = (f(z + h, q, delta) - f(z - h, q, delta)) / (2.0 * h);
        let nd = if delta > h {
            (f(z, q, delta + h) - f(z, q, delta - h)) / (2.0 * h)
        } else {
            (f(z, q, delta + h) - f(z, q, delta)) / h
        };
        report.max_rel_err_scale = report.max_rel_err_scale.max(rel_err(aq, nq));
        report.max_rel_err_dead_zone = report.max_rel_err_dead_zone.max(rel_err(ad, nd));
        report.max_rel_err_latent = report.max_rel_err_latent.max(rel_err(az, nz));
        report.points += 1;
    }
    report.max_rel_err_slice = slice_grad_check(config, &mut rng)?;
    Ok(report)
}

fn slice_grad_check(config: &GradCheckConfig, rng: &mut ChaCha8Rng) -> Result<f64> {
    let transform = ReferenceTransform::new(config.transform_seed)?;
    let seq = Encoded::new(&crate::features::gen_synthetic_features(config.seed, 120)?, &transform)?;
    let (lat_spread, st_spread) = spreads(std::slice::from_ref(&seq));
    let row = Row {
        latent: lat_spread
            .iter()
            .map(|&s| DimParam {
                dead_zone: 0.3,
                logit_soft: 0.5,
                ..DimParam::init(s, 3.0)
            })
            .collect(),
        state: st_spread.iter().map(|&s| DimParam::init(s, 3.0)).collect(),
    };
    let win = Window { newest: 59, k: 8 };
    let noise: Vec<f64> = (0..noise_len(win.k)).map(|_| rng.random::<f64>() - 0.5).collect();
    let (lambda, mix) = (0.05, 1.0);
    let base = slice_gradient(&transform, &seq, win, &row, lambda, mix, &noise);
    let mut worst: f64 = 0.0;
    let h = 1e-6;
    for i in [0usize, 3, 11, 23, 40] {
        for field in 0..3 {
            let probe = |sign: f64| {
                let mut r = row.clone();
                let p = &mut r.latent[i];
                match field {
                    0 => p.log_scale += sign * h,
                    1 => p.dead_zone += sign * h,
                    _ => p.logit_soft += sign * h,
                }
                slice_gradient(&transform, &seq, win, &r, lambda, mix, &noise).loss
            };
            let numeric = (probe(1.0) - probe(-1.0)) / (2.0 * h);
            let g = base.latent[i];
            let analytic = [g.log_scale, g.dead_zone, g.logit_soft][field];
            worst = worst.max(rel_err(analytic, numeric));
        }
    }
    Ok(worst)
}
