use std::path::Path;

use crate::error::{Error, Result};
use crate::laplace::theta_implicit;
use crate::range_coder::SymbolModel;

use super::{IS_DIM, LATENT_DIM};

pub const NUM_LAMBDAS: usize = 16;

const MAGIC: &[u8; 8] = b"DREDQTAB";
const VERSION: u16 = 1;
const HEADER_LEN: usize = 8 + 2 * 5 + 8;
const FIELDS: usize = 5;

/// Quantizer and entropy-model parameters for one dimension at one λ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DimQuantizer {
    pub scale: f32,
    pub r_soft: f32,
    pub r_hard: f32,
    pub dead_zone: f32,
    pub theta: f32,
}

impl DimQuantizer {
    pub fn symbol_model(&self) -> SymbolModel {
        SymbolModel::from_r_theta(self.r_hard as f64, self.theta as f64)
    }

    fn to_array(self) -> [f32; FIELDS] {
        [self.scale, self.r_soft, self.r_hard, self.dead_zone, self.theta]
    }

    fn from_array(a: [f32; FIELDS]) -> Self {
        DimQuantizer {
            scale: a[0],
            r_soft: a[1],
            r_hard: a[2],
            dead_zone: a[3],
            theta: a[4],
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.scale >= 0.0
            && self.scale.is_finite()
            && self.r_soft > 0.0
            && self.r_soft < 1.0
            && self.r_hard > 0.0
            && self.r_hard < 1.0
            && self.dead_zone >= 0.0
            && self.dead_zone.is_finite()
            && self.theta >= 0.5
            && self.theta.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::format(format!("invalid quantizer entry {self:?}")))
        }
    }
}

/// 16 quantizers, each with one entry per latent dimension and one per
/// initial-state dimension. Tied to the transform it was trained against.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizerTable {
    pub transform_seed: u64,
    pub stride: usize,
    latent: Vec<DimQuantizer>,
    state: Vec<DimQuantizer>,
}

impl QuantizerTable {
    pub fn new(
        transform_seed: u64,
        stride: usize,
        latent: Vec<DimQuantizer>,
        state: Vec<DimQuantizer>,
    ) -> Result<Self> {
        if latent.len() != NUM_LAMBDAS * LATENT_DIM || state.len() != NUM_LAMBDAS * IS_DIM {
            return Err(Error::invalid("quantizer table has the wrong number of entries"));
        }
        if stride == 0 || stride > u16::MAX as usize {
            return Err(Error::invalid(format!("bad stride {stride}")));
        }
        for d in latent.iter().chain(&state) {
            d.validate().map_err(|e| Error::invalid(e.to_string()))?;
        }
        Ok(QuantizerTable {
            transform_seed,
            stride,
            latent,
            state,
        })
    }

    /// Same scale and dead zone everywhere, implicit-θ pmf with `r = 0.5`.
    pub fn uniform(transform_seed: u64, stride: usize, scale: f64, dead_zone: f64) -> Self {
        let d = DimQuantizer {
            scale: scale as f32,
            r_soft: 0.5,
            r_hard: 0.5,
            dead_zone: dead_zone as f32,
            theta: theta_implicit(0.5) as f32,
        };
        QuantizerTable {
            transform_seed,
            stride,
            latent: vec![d; NUM_LAMBDAS * LATENT_DIM],
            state: vec![d; NUM_LAMBDAS * IS_DIM],
        }
    }

    pub fn latent_row(&self, lambda_index: usize) -> &[DimQuantizer] {
        &self.latent[lambda_index * LATENT_DIM..(lambda_index + 1) * LATENT_DIM]
    }

    pub fn latent_row_mut(&mut self, lambda_index: usize) -> &mut [DimQuantizer] {
        &mut self.latent[lambda_index * LATENT_DIM..(lambda_index + 1) * LATENT_DIM]
    }

    pub fn state_row(&self, lambda_index: usize) -> &[DimQuantizer] {
        &self.state[lambda_index * IS_DIM..(lambda_index + 1) * IS_DIM]
    }

    pub fn state_row_mut(&mut self, lambda_index: usize) -> &mut [DimQuantizer] {
        &mut self.state[lambda_index * IS_DIM..(lambda_index + 1) * IS_DIM]
    }

    pub fn latent_models(&self, lambda_index: usize) -> Vec<SymbolModel> {
        self.latent_row(lambda_index).iter().map(DimQuantizer::symbol_model).collect()
    }

    pub fn state_models(&self, lambda_index: usize) -> Vec<SymbolModel> {
        self.state_row(lambda_index).iter().map(DimQuantizer::symbol_model).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * FIELDS * (self.latent.len() + self.state.len()));
        out.extend_from_slice(MAGIC);
        for v in [VERSION, NUM_LAMBDAS as u16, LATENT_DIM as u16, IS_DIM as u16, self.stride as u16] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.transform_seed.to_le_bytes());
        for d in self.latent.iter().chain(&self.state) {
            for v in d.to_array() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::format("quantizer table header truncated"));
        }
        if &bytes[..8] != MAGIC {
            return Err(Error::format("not a quantizer table (bad magic)"));
        }
        let u16_at = |i: usize| u16::from_le_bytes([bytes[8 + 2 * i], bytes[9 + 2 * i]]);
        if u16_at(0) != VERSION {
            return Err(Error::format(format!("unsupported quantizer table version {}", u16_at(0))));
        }
        let (n_lambda, latent_dims, state_dims, stride) =
            (u16_at(1) as usize, u16_at(2) as usize, u16_at(3) as usize, u16_at(4) as usize);
        if n_lambda != NUM_LAMBDAS || latent_dims != LATENT_DIM || state_dims != IS_DIM {
            return Err(Error::format(format!(
                "table shape {n_lambda}x{latent_dims}+{state_dims} does not match codec {NUM_LAMBDAS}x{LATENT_DIM}+{IS_DIM}"
            )));
        }
        let seed = u64::from_le_bytes(bytes[18..26].try_into().expect("8 bytes"));
        let n_entries = n_lambda * (latent_dims + state_dims);
        let body = &bytes[HEADER_LEN..];
        if body.len() != 4 * FIELDS * n_entries {
            return Err(Error::format(format!(
                "quantizer table body is {} bytes, expected {}",
                body.len(),
                4 * FIELDS * n_entries
            )));
        }
        let mut entries = Vec::with_capacity(n_entries);
        for chunk in body.chunks_exact(4 * FIELDS) {
            let mut a = [0f32; FIELDS];
            for (i, v) in chunk.chunks_exact(4).enumerate() {
                a[i] = f32::from_le_bytes(v.try_into().expect("4 bytes"));
            }
            let d = DimQuantizer::from_array(a);
            d.validate()?;
            entries.push(d);
        }
        let state = entries.split_off(n_lambda * latent_dims);
        QuantizerTable::new(seed, stride, entries, state).map_err(|e| Error::format(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        QuantizerTable::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> QuantizerTable {
        let mut t = QuantizerTable::uniform(99, 2, 3.0, 0.2);
        for l in 0..NUM_LAMBDAS {
            for (i, d) in t.latent_row_mut(l).iter_mut().enumerate() {
                d.scale = 1.0 / (1.0 + l as f32 + 0.37 * i as f32);
                d.r_hard = 0.1 + 0.01 * i as f32;
                d.theta = 0.5 + 0.003 * l as f32;
            }
            t.state_row_mut(l)[3].dead_zone = 0.123_456_79;
        }
        t
    }

    #[test]
    fn bytes_round_trip_exactly() {
        let t = sample();
        let bytes = t.to_bytes();
        assert_eq!(bytes.len(), HEADER_LEN + 20 * 16 * (80 + 24));
        let back = QuantizerTable::from_bytes(&bytes).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.qtab");
        sample().save(&path).unwrap();
        assert_eq!(QuantizerTable::load(&path).unwrap(), sample());
    }

    #[test]
    fn rejects_bad_input() {
        let bytes = sample().to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(QuantizerTable::from_bytes(&bad), Err(Error::Format(_))));
        assert!(matches!(QuantizerTable::from_bytes(&bytes[..bytes.len() - 4]), Err(Error::Format(_))));
        let mut v2 = bytes.clone();
        v2[8] = 2;
        assert!(matches!(QuantizerTable::from_bytes(&v2), Err(Error::Format(_))));
        // r_hard = 1.5 is outside (0, 1)
        let mut bad_r = bytes;
        let off = HEADER_LEN + 8;
        bad_r[off..off + 4].copy_from_slice(&1.5f32.to_le_bytes());
        assert!(matches!(QuantizerTable::from_bytes(&bad_r), Err(Error::Format(_))));
    }
}
