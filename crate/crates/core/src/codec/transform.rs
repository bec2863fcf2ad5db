//! Seeded reference transform standing in for the neural encoder/decoder.
//!
//! Encoder: `h_t = tanh(A h_{t-1} + B u_t)` over feature pairs `u_t`.
//! The latent at step `t` codes the backward-prediction residual
//! `e_t = h_{t-S} - P h_t` (S = output stride) through `z_t = C e_t`, and the
//! initial state is `s_t = D h_t`.
//!
//! Decoder: starting from `h_t ~ D^T s`, each latent steps the state back by
//! one stride, `h_{t-S} ~ P h_t + C^+ z_t`, and a linear readout maps
//! `[h_t; h_{t-S}; 1]` to the `2 S` feature vectors the latent covers.
//!
//! `A` and `B` are random; `P`, `C`, `D` and the readout are fitted on a
//! synthetic calibration corpus drawn from the same seed, so the transform is
//! a pure function of `(seed, stride)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::features::{synthetic_corpus, FeatureSequence, FeatureVector, FEATURE_DIM};

pub const STATE_DIM: usize = 24;
pub const LATENT_DIM: usize = 80;
pub const IS_DIM: usize = 24;
pub const PAIR_DIM: usize = 2 * FEATURE_DIM;
pub const DEFAULT_STRIDE: usize = 2;

const RECURRENCE_NORM: f64 = 0.6;
const INPUT_GAIN: f64 = 0.3;
const PREDICTOR_MAX_NORM: f64 = 0.95;
/// Relative gain of the latent rows beyond the state rank.
const REDUNDANT_GAIN: f64 = 0.05;
const RIDGE: f64 = 1e-3;
const CALIBRATION_SEQUENCES: usize = 24;
const CALIBRATION_FRAMES: usize = 400;

#[derive(Debug, Clone)]
pub struct ReferenceTransform {
    seed: u64,
    stride: usize,
    feature_mean: [f64; FEATURE_DIM],
    feature_inv_std: [f64; FEATURE_DIM],
    recurrence: DMatrix<f64>,
    input: DMatrix<f64>,
    predictor: DMatrix<f64>,
    latent_map: DMatrix<f64>,
    latent_inverse: DMatrix<f64>,
    state_map: DMatrix<f64>,
    /// `2 S * FEATURE_DIM` outputs from `[h_t; h_{t-S}; 1]`.
    readout: DMatrix<f64>,
}

impl ReferenceTransform {
    pub fn new(seed: u64) -> Result<Self> {
        ReferenceTransform::with_stride(seed, DEFAULT_STRIDE)
    }

    pub fn with_stride(seed: u64, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::invalid("stride must be at least 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_7a45_f0e2_d00d);

        let mut recurrence = gaussian(&mut rng, STATE_DIM, STATE_DIM);
        let norm = recurrence.clone().svd(false, false).singular_values.max();
        recurrence *= RECURRENCE_NORM / norm;

        let calibration = synthetic_corpus(seed ^ 0xca11_b7a7, CALIBRATION_SEQUENCES, CALIBRATION_FRAMES)?;
        let (feature_mean, feature_inv_std) = feature_moments(&calibration);
        let input = input_projection(&calibration, &feature_mean, &feature_inv_std);

        let mut transform = ReferenceTransform {
            seed,
            stride,
            feature_mean,
            feature_inv_std,
            recurrence,
            input,
            predictor: DMatrix::zeros(STATE_DIM, STATE_DIM),
            latent_map: DMatrix::zeros(LATENT_DIM, STATE_DIM),
            latent_inverse: DMatrix::zeros(STATE_DIM, LATENT_DIM),
            state_map: DMatrix::zeros(IS_DIM, STATE_DIM),
            readout: DMatrix::zeros(2 * stride * FEATURE_DIM, 2 * STATE_DIM + 1),
        };

        let states: Vec<Vec<DVector<f64>>> = calibration.iter().map(|seq| transform.run_states(seq)).collect();

        // Backward predictor h_{t-S} ~ P h_t.
        let mut cross = DMatrix::zeros(STATE_DIM, STATE_DIM);
        let mut auto = DMatrix::<f64>::identity(STATE_DIM, STATE_DIM) * RIDGE;
        for seq in &states {
            for t in stride..seq.len() {
                cross += &seq[t - stride] * seq[t].transpose();
                auto += &seq[t] * seq[t].transpose();
            }
        }
        let mut predictor = cross * auto.try_inverse().expect("regularized covariance is invertible");
        let pnorm = predictor.clone().svd(false, false).singular_values.max();
        if pnorm > PREDICTOR_MAX_NORM {
            predictor *= PREDICTOR_MAX_NORM / pnorm;
        }
        transform.predictor = predictor;

        // Principal axes of the residual give the leading latent rows.
        let mut residual_cov = DMatrix::zeros(STATE_DIM, STATE_DIM);
        let mut state_cov = DMatrix::zeros(STATE_DIM, STATE_DIM);
        for seq in &states {
            for t in 0..seq.len() {
                let e = transform.residual(seq, t);
                residual_cov += &e * e.transpose();
                state_cov += &seq[t] * seq[t].transpose();
            }
        }
        let principal = principal_rows(residual_cov);
        let mut latent_map = DMatrix::zeros(LATENT_DIM, STATE_DIM);
        latent_map.rows_mut(0, STATE_DIM).copy_from(&principal);
        for i in STATE_DIM..LATENT_DIM {
            let row: DVector<f64> = DVector::from_fn(STATE_DIM, |_, _| rng.sample(StandardNormal));
            let row = row.normalize() * REDUNDANT_GAIN;
            latent_map.row_mut(i).copy_from(&row.transpose());
        }
        let gram = latent_map.transpose() * &latent_map;
        transform.latent_inverse = gram.try_inverse().expect("latent map has full column rank") * latent_map.transpose();
        transform.latent_map = latent_map;
        transform.state_map = principal_rows(state_cov);

        transform.readout = transform.fit_readout(&calibration, &states);
        Ok(transform)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    /// Feature vectors reconstructed per latent.
    pub fn frames_per_latent(&self) -> usize {
        2 * self.stride
    }

    fn normalized_pair(&self, a: &FeatureVector, b: &FeatureVector) -> DVector<f64> {
        let mut u = DVector::zeros(PAIR_DIM);
        for (half, frame) in [a, b].into_iter().enumerate() {
            for (i, v) in frame.to_array().into_iter().enumerate() {
                u[half * FEATURE_DIM + i] = (v as f64 - self.feature_mean[i]) * self.feature_inv_std[i];
            }
        }
        u
    }

    pub(crate) fn step(&self, prev: &DVector<f64>, a: &FeatureVector, b: &FeatureVector) -> DVector<f64> {
        let u = self.normalized_pair(a, b);
        (&self.recurrence * prev + &self.input * u).map(f64::tanh)
    }

    fn run_states(&self, seq: &FeatureSequence) -> Vec<DVector<f64>> {
        let mut h = DVector::zeros(STATE_DIM);
        seq.frames()
            .chunks_exact(2)
            .map(|pair| {
                h = self.step(&h, &pair[0], &pair[1]);
                h.clone()
            })
            .collect()
    }

    fn residual(&self, states: &[DVector<f64>], t: usize) -> DVector<f64> {
        let older = if t >= self.stride {
            states[t - self.stride].clone()
        } else {
            DVector::zeros(STATE_DIM)
        };
        older - &self.predictor * &states[t]
    }

    /// Latent for step `t` given the encoder state history up to `t`.
    pub(crate) fn latent(&self, newer: &DVector<f64>, older: Option<&DVector<f64>>) -> DVector<f64> {
        let mut e = -(&self.predictor * newer);
        if let Some(o) = older {
            e += o;
        }
        &self.latent_map * e
    }

    pub(crate) fn initial_state(&self, h: &DVector<f64>) -> DVector<f64> {
        &self.state_map * h
    }

    fn fit_readout(&self, calibration: &[FeatureSequence], states: &[Vec<DVector<f64>>]) -> DMatrix<f64> {
        let n_in = 2 * STATE_DIM + 1;
        let n_out = 2 * self.stride * FEATURE_DIM;
        let mut xtx = DMatrix::<f64>::identity(n_in, n_in) * RIDGE;
        let mut xty = DMatrix::zeros(n_in, n_out);
        for (seq, hs) in calibration.iter().zip(states) {
            let frames = seq.frames();
            for t in self.stride..hs.len() {
                let input = readout_input(&hs[t], &hs[t - self.stride]);
                let first = 2 * (t + 1 - self.stride);
                let mut target = DVector::zeros(n_out);
                for f in 0..2 * self.stride {
                    for (i, v) in frames[first + f].to_array().into_iter().enumerate() {
                        target[f * FEATURE_DIM + i] = v as f64;
                    }
                }
                xtx += &input * input.transpose();
                xty += &input * target.transpose();
            }
        }
        let chol = xtx.cholesky().expect("ridge system is positive definite");
        chol.solve(&xty).transpose()
    }

    /// Runs the backward decoder over dequantized latents (newest first)
    /// starting from a dequantized initial state. Returns one output block of
    /// `2 S * FEATURE_DIM` values per latent, newest first.
    pub(crate) fn decode_blocks(&self, latents: &[&[f64]], state: &[f64]) -> Vec<DVector<f64>> {
        let mut current = self.state_map.transpose() * DVector::from_column_slice(state);
        latents
            .iter()
            .map(|z| {
                let older = &self.predictor * &current + &self.latent_inverse * DVector::from_column_slice(z);
                let out = &self.readout * readout_input(&current, &older);
                current = older;
                out
            })
            .collect()
    }

    pub(crate) fn parts(&self) -> DecoderParts<'_> {
        DecoderParts {
            predictor: &self.predictor,
            latent_inverse: &self.latent_inverse,
            state_map: &self.state_map,
            readout: &self.readout,
        }
    }
}

/// Borrowed decoder matrices, used by the trainer's backward pass.
pub(crate) struct DecoderParts<'a> {
    pub predictor: &'a DMatrix<f64>,
    pub latent_inverse: &'a DMatrix<f64>,
    pub state_map: &'a DMatrix<f64>,
    pub readout: &'a DMatrix<f64>,
}

pub(crate) fn readout_input(newer: &DVector<f64>, older: &DVector<f64>) -> DVector<f64> {
    let mut v = DVector::zeros(2 * STATE_DIM + 1);
    v.rows_mut(0, STATE_DIM).copy_from(newer);
    v.rows_mut(STATE_DIM, STATE_DIM).copy_from(older);
    v[2 * STATE_DIM] = 1.0;
    v
}

/// Leading principal axes of normalized feature pairs, whitened and scaled by
/// `INPUT_GAIN`.
fn input_projection(
    corpus: &[FeatureSequence],
    mean: &[f64; FEATURE_DIM],
    inv_std: &[f64; FEATURE_DIM],
) -> DMatrix<f64> {
    let mut cov = DMatrix::zeros(PAIR_DIM, PAIR_DIM);
    let mut n = 0.0;
    for seq in corpus {
        for pair in seq.frames().chunks_exact(2) {
            let mut u = DVector::zeros(PAIR_DIM);
            for (half, frame) in pair.iter().enumerate() {
                for (i, v) in frame.to_array().into_iter().enumerate() {
                    u[half * FEATURE_DIM + i] = (v as f64 - mean[i]) * inv_std[i];
                }
            }
            cov += &u * u.transpose();
            n += 1.0;
        }
    }
    cov /= n;
    let eig = SymmetricEigen::new(cov.clone());
    let rows = principal_rows(cov);
    let mut sorted: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut out = DMatrix::zeros(STATE_DIM, PAIR_DIM);
    for (i, ev) in sorted.iter().take(STATE_DIM).enumerate() {
        let w = INPUT_GAIN / ev.max(1e-6).sqrt();
        out.row_mut(i).copy_from(&(rows.row(i) * w));
    }
    out
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Eigenvectors of a covariance as rows, by decreasing eigenvalue, with a
/// deterministic sign (largest-magnitude entry positive).
fn principal_rows(cov: DMatrix<f64>) -> DMatrix<f64> {
    let n = cov.nrows();
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut rows = DMatrix::zeros(n, n);
    for (i, &k) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(k).clone_owned();
        let pivot = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if pivot < 0.0 {
            v = -v;
        }
        rows.row_mut(i).copy_from(&v.transpose());
    }
    rows
}

fn feature_moments(corpus: &[FeatureSequence]) -> ([f64; FEATURE_DIM], [f64; FEATURE_DIM]) {
    let mut sum = [0.0; FEATURE_DIM];
    let mut sq = [0.0; FEATURE_DIM];
    let mut n = 0.0;
    for seq in corpus {
        for f in seq.frames() {
            for (i, v) in f.to_array().into_iter().enumerate() {
                sum[i] += v as f64;
                sq[i] += (v as f64) * (v as f64);
            }
            n += 1.0;
        }
    }
    let mut mean = [0.0; FEATURE_DIM];
    let mut inv_std = [0.0; FEATURE_DIM];
    for i in 0..FEATURE_DIM {
        mean[i] = sum[i] / n;
        let var = (sq[i] / n - mean[i] * mean[i]).max(1e-6);
        inv_std[i] = 1.0 / var.sqrt();
    }
    (mean, inv_std)
}
