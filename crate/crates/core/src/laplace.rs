//! Closed-form Laplace quantization and rate model.
//!
//! Latent components are modelled with a continuous Laplace density
//! parameterized by a decay `r in (0, 1)`. A dead-zone quantizer with
//! threshold `theta` maps that density onto a discrete Laplace pmf; choosing
//! `theta = theta_implicit(r)` makes the zero bin follow the same geometric
//! law as every other bin, which yields a rate that is differentiable in the
//! unquantized value.

use std::f64::consts::LN_2;

use crate::error::{Error, Result};

/// Stabilizer added to the dead-zone width inside the soft quantizer.
pub const EPSILON: f64 = 0.1;
/// Symbols coded by the entropy coder lie in `[-MAX_SYMBOL, MAX_SYMBOL]`.
pub const MAX_SYMBOL: i32 = 255;
/// Below this decay the distribution is treated as a point mass at zero.
pub const DEGENERATE_R: f64 = 1e-9;
/// Quantizer scales below this value always produce symbol 0.
pub const DEGENERATE_SCALE: f64 = 1e-6;

/// Parameters of one latent dimension's quantizer and pmf.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplaceParams {
    /// Decay, `r = exp(-sqrt(2) / sigma)`.
    pub r: f64,
    /// Dead-zone threshold of the hard quantizer.
    pub theta: f64,
    /// Width of the soft dead zone.
    pub delta: f64,
}

impl LaplaceParams {
    pub fn new(r: f64, theta: f64, delta: f64) -> Result<Self> {
        if !(r > 0.0 && r < 1.0) {
            return Err(Error::invalid(format!("Laplace decay must lie in (0, 1), got {r}")));
        }
        if !(theta >= 0.5) {
            return Err(Error::invalid(format!("dead-zone threshold must be >= 0.5, got {theta}")));
        }
        if !(delta >= 0.0) {
            return Err(Error::invalid(format!("dead-zone width must be >= 0, got {delta}")));
        }
        Ok(LaplaceParams { r, theta, delta })
    }

    /// Threshold known, width defaulted to `theta - 1/2`.
    pub fn with_theta(r: f64, theta: f64) -> Result<Self> {
        LaplaceParams::new(r, theta, theta - 0.5)
    }

    /// Uses the implicit threshold for `r`.
    pub fn implicit(r: f64) -> Result<Self> {
        if !(r > 0.0 && r < 1.0) {
            return Err(Error::invalid(format!("Laplace decay must lie in (0, 1), got {r}")));
        }
        LaplaceParams::with_theta(r, theta_implicit(r))
    }

    pub fn from_sigma(sigma: f64, theta: f64) -> Result<Self> {
        LaplaceParams::with_theta((-std::f64::consts::SQRT_2 / sigma).exp(), theta)
    }

    pub fn sigma(&self) -> f64 {
        -std::f64::consts::SQRT_2 / self.r.ln()
    }

    pub fn epsilon(&self) -> f64 {
        EPSILON
    }

    pub fn pdf(&self, z: f64) -> f64 {
        continuous_pdf(z, self.r)
    }

    pub fn pmf(&self, k: i32) -> f64 {
        discrete_pmf(k, self.r, self.theta)
    }
}

/// Continuous Laplace density `(-ln r / 2) * r^|z|`.
pub fn continuous_pdf(z: f64, r: f64) -> f64 {
    -r.ln() / 2.0 * r.powf(z.abs())
}

/// Dead-zone quantizer `sgn(z) * floor(max(|z| + 1 - theta, 0))`.
///
/// With `theta = 0.5` this is rounding to nearest, halves away from zero.
pub fn quantize_deadzone(z: f64, theta: f64) -> i32 {
    let mag = (z.abs() + 1.0 - theta).max(0.0).floor();
    if z < 0.0 {
        -(mag as i32)
    } else {
        mag as i32
    }
}

/// Differentiable dead zone `z - delta * tanh(z / (delta + eps))`.
pub fn soft_deadzone(z: f64, delta: f64) -> f64 {
    z - delta * (z / (delta + EPSILON)).tanh()
}

/// Derivative of [`soft_deadzone`] with respect to `z`.
pub fn soft_deadzone_grad(z: f64, delta: f64) -> f64 {
    let w = delta + EPSILON;
    let t = (z / w).tanh();
    1.0 - delta / w * (1.0 - t * t)
}

/// Derivative of [`soft_deadzone`] with respect to the width `delta`.
pub fn soft_deadzone_grad_delta(z: f64, delta: f64) -> f64 {
    let w = delta + EPSILON;
    let t = (z / w).tanh();
    -t + delta * (1.0 - t * t) * z / (w * w)
}

/// Discrete Laplace pmf of the dead-zone quantizer output.
pub fn discrete_pmf(k: i32, r: f64, theta: f64) -> f64 {
    if k == 0 {
        1.0 - r.powf(theta)
    } else {
        0.5 * (1.0 - r) * r.powf(k.unsigned_abs() as f64 + theta - 1.0)
    }
}

/// Threshold `log_r(2r / (1 + r))` for which both branches of the pmf agree
/// at zero, giving `P(k) = (1 - r) / (1 + r) * r^|k|`.
pub fn theta_implicit(r: f64) -> f64 {
    (2.0 * r / (1.0 + r)).ln() / r.ln()
}

/// Bit cost of one sample under the implicit-threshold pmf:
/// `-log2((1 - r) / (1 + r)) - |z| * log2(r)`. Averaging it over samples
/// gives the generalized discrete entropy. Returns 0 in the degenerate
/// `r -> 0` limit.
pub fn rate_bits(z_abs: f64, r: f64) -> f64 {
    if r < DEGENERATE_R {
        return 0.0;
    }
    -((1.0 - r) / (1.0 + r)).log2() - z_abs * r.log2()
}

/// Derivative of [`rate_bits`] with respect to `r`.
pub fn rate_bits_grad_r(z_abs: f64, r: f64) -> f64 {
    if r < DEGENERATE_R {
        return 0.0;
    }
    (1.0 / (1.0 - r) + 1.0 / (1.0 + r) - z_abs / r) / LN_2
}

/// Derivative of [`rate_bits`] with respect to `z_abs`.
pub fn rate_bits_grad_z(r: f64) -> f64 {
    if r < DEGENERATE_R {
        return 0.0;
    }
    -r.log2()
}

/// Hard quantization path: `round(soft_deadzone(q * z_e, delta))`.
///
/// Degenerate scales (`q < 1e-6`) always give 0.
pub fn scale_quantize(z_e: f64, q: f64, delta: f64) -> i32 {
    if q < DEGENERATE_SCALE {
        return 0;
    }
    // f64::round breaks ties away from zero
    soft_deadzone(q * z_e, delta).round() as i32
}

/// Undoes the quantizer scaling, `z_q / q`.
pub fn unscale(z_q: i32, q: f64) -> f64 {
    if q < DEGENERATE_SCALE {
        return 0.0;
    }
    z_q as f64 / q
}

/// Cross-entropy in bits of symbol `k` under the hard pmf `(r, theta)`.
pub fn symbol_bits(k: i32, r: f64, theta: f64) -> f64 {
    let lr = r.ln();
    let bits = if k == 0 {
        -(-(theta * lr).exp_m1()).ln()
    } else {
        -(0.5 * (1.0 - r)).ln() - (k.unsigned_abs() as f64 + theta - 1.0) * lr
    };
    bits / LN_2
}

/// Gradient of [`symbol_bits`] with respect to `(r, theta)`.
pub fn symbol_bits_grad(k: i32, r: f64, theta: f64) -> (f64, f64) {
    let lr = r.ln();
    if k == 0 {
        // -log2(1 - r^theta)
        let rt = (theta * lr).exp();
        let denom = (1.0 - rt) * LN_2;
        (theta * rt / r / denom, rt * lr / denom)
    } else {
        let m = k.unsigned_abs() as f64 + theta - 1.0;
        ((1.0 / (1.0 - r) - m / r) / LN_2, -lr / LN_2)
    }
}

/// Pmf over `[-MAX_SYMBOL, MAX_SYMBOL]`, index `k + MAX_SYMBOL`, with the
/// tail mass beyond the alphabet folded into the two extreme symbols.
pub fn truncated_pmf(r: f64, theta: f64) -> Vec<f64> {
    let n = (2 * MAX_SYMBOL + 1) as usize;
    let mut out = vec![0.0; n];
    for k in -MAX_SYMBOL..=MAX_SYMBOL {
        out[(k + MAX_SYMBOL) as usize] = discrete_pmf(k, r, theta);
    }
    // sum_{|k| >= 255} on one side, 0.5 * r^(254 + theta)
    let tail = 0.5 * r.powf(MAX_SYMBOL as f64 - 1.0 + theta);
    out[0] = tail;
    out[n - 1] = tail;
    out
}
