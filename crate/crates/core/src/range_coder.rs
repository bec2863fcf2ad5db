//! Range coder for integer symbols under discrete Laplace models.
//!
//! 32-bit low/range registers, 16-bit cumulative frequencies and byte-wise
//! renormalization. Carries are propagated back into the already written
//! bytes, so the output is a plain big-endian byte string with no cache byte.
//! The encoder always flushes the four bytes of `low`; a decoder that reads
//! past the end of its buffer therefore knows the buffer was truncated.
//!
//! No floating point is involved once a [`SymbolModel`] has been built.

use crate::error::{Error, Result};
use crate::laplace::{truncated_pmf, LaplaceParams, MAX_SYMBOL};

pub const PRECISION_BITS: u32 = 16;
pub const TOTAL_FREQ: u32 = 1 << PRECISION_BITS;
/// Number of codable symbols, `[-255, 255]`.
pub const ALPHABET: usize = (2 * MAX_SYMBOL + 1) as usize;

const TOP: u32 = 1 << 24;

/// Static cumulative-frequency model over `[-255, 255]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolModel {
    /// `cumulative[i]` is the start of symbol `i - 255`; the last entry is
    /// `TOTAL_FREQ`.
    cumulative: Vec<u32>,
}

impl SymbolModel {
    /// Quantizes the truncated discrete Laplace pmf of `params` to integer
    /// frequencies. Every symbol gets at least 1; the distribution stays
    /// symmetric and the frequencies sum to `2^16`.
    pub fn from_params(params: &LaplaceParams) -> Self {
        SymbolModel::from_r_theta(params.r, params.theta)
    }

    pub fn from_r_theta(r: f64, theta: f64) -> Self {
        let pmf = truncated_pmf(r, theta);
        let spread = (TOTAL_FREQ - ALPHABET as u32) as f64;
        let mid = MAX_SYMBOL as usize;
        let mut freqs = vec![0u32; ALPHABET];
        let mut side = 0u32;
        for k in 1..=mid {
            let f = 1 + (pmf[mid + k] * spread).floor() as u32;
            freqs[mid + k] = f;
            freqs[mid - k] = f;
            side += f;
        }
        freqs[mid] = TOTAL_FREQ - 2 * side;
        SymbolModel::from_frequencies(&freqs).expect("Laplace frequencies are valid")
    }

    /// Builds a model from explicit frequencies, one per symbol.
    pub fn from_frequencies(freqs: &[u32]) -> Result<Self> {
        if freqs.len() != ALPHABET {
            return Err(Error::invalid(format!("expected {ALPHABET} frequencies, got {}", freqs.len())));
        }
        if freqs.contains(&0) {
            return Err(Error::invalid("zero frequency in symbol model"));
        }
        let mut cumulative = Vec::with_capacity(ALPHABET + 1);
        let mut acc = 0u32;
        cumulative.push(0);
        for &f in freqs {
            acc += f;
            cumulative.push(acc);
        }
        if acc != TOTAL_FREQ {
            return Err(Error::invalid(format!("frequencies sum to {acc}, expected {TOTAL_FREQ}")));
        }
        Ok(SymbolModel { cumulative })
    }

    pub fn freq(&self, symbol: i32) -> u32 {
        let i = (symbol + MAX_SYMBOL) as usize;
        self.cumulative[i + 1] - self.cumulative[i]
    }

    pub fn probability(&self, symbol: i32) -> f64 {
        self.freq(symbol) as f64 / TOTAL_FREQ as f64
    }

    /// Ideal code length of `symbol` under this model.
    pub fn cost_bits(&self, symbol: i32) -> f64 {
        PRECISION_BITS as f64 - (self.freq(symbol) as f64).log2()
    }

    fn range_of(&self, symbol: i32) -> (u32, u32) {
        let i = (symbol + MAX_SYMBOL) as usize;
        (self.cumulative[i], self.cumulative[i + 1] - self.cumulative[i])
    }

    fn lookup(&self, target: u32) -> usize {
        // last index with cumulative[i] <= target
        self.cumulative.partition_point(|&c| c <= target) - 1
    }
}

/// Sub-interval `[floor(range * start / 2^16), floor(range * end / 2^16))`.
#[inline]
fn split(range: u32, start: u32, end: u32) -> (u32, u32) {
    let lo = (range as u64 * start as u64) >> PRECISION_BITS;
    let hi = (range as u64 * end as u64) >> PRECISION_BITS;
    (lo as u32, hi as u32)
}

/// Coded bytes plus the number of bits the coder actually needed.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CodedBuffer {
    pub bytes: Vec<u8>,
    pub bit_count: usize,
}

impl CodedBuffer {
    pub fn len_bits(&self) -> usize {
        self.bytes.len() * 8
    }
}

pub struct RangeEncoder {
    low: u64,
    range: u32,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        RangeEncoder::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        RangeEncoder {
            low: 0,
            range: u32::MAX,
            out: Vec::new(),
        }
    }

    pub fn encode(&mut self, symbol: i32, model: &SymbolModel) -> Result<()> {
        if symbol.abs() > MAX_SYMBOL {
            return Err(Error::invalid(format!("symbol {symbol} outside [-255, 255]")));
        }
        let (start, freq) = model.range_of(symbol);
        let (lo, hi) = split(self.range, start, start + freq);
        self.low += lo as u64;
        self.range = hi - lo;
        if self.low > u32::MAX as u64 {
            self.propagate_carry();
            self.low &= u32::MAX as u64;
        }
        while self.range < TOP {
            self.out.push((self.low >> 24) as u8);
            self.low = (self.low << 8) & u32::MAX as u64;
            self.range <<= 8;
        }
        Ok(())
    }

    fn propagate_carry(&mut self) {
        for byte in self.out.iter_mut().rev() {
            if *byte == 0xFF {
                *byte = 0;
            } else {
                *byte += 1;
                return;
            }
        }
    }

    /// Bits consumed so far, rounded up.
    pub fn tell(&self) -> usize {
        self.out.len() * 8 + 32 - self.range.ilog2() as usize
    }

    pub fn finish(mut self) -> CodedBuffer {
        let bit_count = self.tell();
        self.out.extend_from_slice(&(self.low as u32).to_be_bytes());
        CodedBuffer {
            bytes: self.out,
            bit_count,
        }
    }
}

pub struct RangeDecoder<'a> {
    bytes: &'a [u8],
    pos: usize,
    code: u32,
    range: u32,
}

impl<'a> RangeDecoder<'a> {
    /// Fails when the buffer cannot even hold the final flush.
    pub fn new(bytes: &'a [u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::format("coded buffer shorter than 4 bytes"));
        }
        Ok(RangeDecoder {
            bytes,
            pos: 4,
            code: u32::from_be_bytes(bytes[..4].try_into().unwrap()),
            range: u32::MAX,
        })
    }

    /// Decodes one symbol. Reading beyond the buffer is reported as a
    /// format error; all symbols returned before that are exact.
    pub fn decode(&mut self, model: &SymbolModel) -> Result<i32> {
        self.normalize()?;
        // largest cumulative c with floor(range * c / 2^16) <= code
        let target = (((self.code as u64 + 1) << PRECISION_BITS) - 1) / self.range as u64;
        let index = model.lookup(target.min(u32::MAX as u64) as u32).min(ALPHABET - 1);
        let (lo, hi) = split(self.range, model.cumulative[index], model.cumulative[index + 1]);
        self.code -= lo;
        self.range = hi - lo;
        Ok(index as i32 - MAX_SYMBOL)
    }

    fn normalize(&mut self) -> Result<()> {
        while self.range < TOP {
            let Some(&b) = self.bytes.get(self.pos) else {
                return Err(Error::format("coded buffer truncated"));
            };
            self.pos += 1;
            self.code = (self.code << 8) | b as u32;
            self.range <<= 8;
        }
        Ok(())
    }

    /// Checks that the stream ends exactly where the encoder flushed it.
    pub fn finish(mut self) -> Result<()> {
        self.normalize()?;
        if self.pos != self.bytes.len() {
            return Err(Error::format(format!(
                "{} trailing bytes after coded symbols",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }

    /// Bytes consumed so far.
    pub fn position(&self) -> usize {
        self.pos
    }
}

/// Picks the model for symbol `i`: one model per symbol, or one shared.
fn model_at(models: &[SymbolModel], i: usize) -> &SymbolModel {
    if models.len() == 1 {
        &models[0]
    } else {
        &models[i]
    }
}

/// Encodes `symbols`, each with its own model or with a single shared one.
pub fn encode_symbols(symbols: &[i32], models: &[SymbolModel]) -> Result<CodedBuffer> {
    if models.is_empty() && !symbols.is_empty() {
        return Err(Error::invalid("no symbol model given"));
    }
    if models.len() != 1 && models.len() != symbols.len() {
        return Err(Error::invalid(format!(
            "{} models for {} symbols",
            models.len(),
            symbols.len()
        )));
    }
    let mut enc = RangeEncoder::new();
    for (i, &s) in symbols.iter().enumerate() {
        enc.encode(s, model_at(models, i))?;
    }
    Ok(enc.finish())
}

/// Decodes `n` symbols. Decoding with models other than the encoder's
/// yields garbage rather than an error.
pub fn decode_symbols(buffer: &CodedBuffer, models: &[SymbolModel], n: usize) -> Result<Vec<i32>> {
    if models.len() != 1 && models.len() != n {
        return Err(Error::invalid(format!("{} models for {n} symbols", models.len())));
    }
    let mut dec = RangeDecoder::new(&buffer.bytes)?;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        out.push(dec.decode(model_at(models, i))?);
    }
    dec.finish()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::laplace::theta_implicit;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn implicit_model(r: f64) -> SymbolModel {
        SymbolModel::from_r_theta(r, theta_implicit(r))
    }

    #[test]
    fn model_zero_frequency_matches_pmf() {
        let m = implicit_model(0.6);
        let p0 = m.freq(0) as f64 / TOTAL_FREQ as f64;
        assert!((p0 - 0.25).abs() < 0.002, "{p0}");
    }

    #[test]
    fn degenerate_model_floors_everything_else() {
        let m = implicit_model(1e-9);
        assert_eq!(m.freq(0), TOTAL_FREQ - 510);
        assert_eq!(m.freq(255), 1);
    }

    #[test]
    fn model_is_symmetric_and_valid() {
        for r in [1e-9, 0.01, 0.6, 0.95, 0.999] {
            let m = implicit_model(r);
            assert_eq!(*m.cumulative.last().unwrap(), TOTAL_FREQ);
            for k in 1..=MAX_SYMBOL {
                assert_eq!(m.freq(k), m.freq(-k));
                assert!(m.freq(k) >= 1);
            }
            assert!(m.cumulative.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn empty_and_single_symbol() {
        let m = implicit_model(0.6);
        let buf = encode_symbols(&[], std::slice::from_ref(&m)).unwrap();
        assert_eq!(decode_symbols(&buf, std::slice::from_ref(&m), 0).unwrap(), Vec::<i32>::new());
        let buf = encode_symbols(&[5], std::slice::from_ref(&m)).unwrap();
        assert_eq!(decode_symbols(&buf, std::slice::from_ref(&m), 1).unwrap(), vec![5]);
    }

    #[test]
    fn zeros_under_sharp_model_are_tiny() {
        let m = implicit_model(0.01);
        let buf = encode_symbols(&[0; 100], std::slice::from_ref(&m)).unwrap();
        assert!(buf.bytes.len() <= 8, "{}", buf.bytes.len());
    }

    #[test]
    fn out_of_range_symbol_rejected() {
        let m = implicit_model(0.6);
        let err = encode_symbols(&[3, 256], std::slice::from_ref(&m)).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn truncation_detected() {
        let m = implicit_model(0.9);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let symbols: Vec<i32> = (0..1000).map(|_| rng.random_range(-20..=20)).collect();
        let buf = encode_symbols(&symbols, std::slice::from_ref(&m)).unwrap();
        for cut in [1, 2, buf.bytes.len() / 2] {
            let short = CodedBuffer {
                bytes: buf.bytes[..buf.bytes.len() - cut].to_vec(),
                bit_count: 0,
            };
            let err = decode_symbols(&short, std::slice::from_ref(&m), symbols.len()).unwrap_err();
            assert!(matches!(err, Error::Format(_)));
        }
    }

    #[test]
    fn mixed_model_fuzz_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let models: Vec<SymbolModel> = (0..1000)
            .map(|_| implicit_model(rng.random_range(0.01..0.99)))
            .collect();
        let symbols: Vec<i32> = (0..1000).map(|_| rng.random_range(-255..=255)).collect();
        let buf = encode_symbols(&symbols, &models).unwrap();
        assert_eq!(decode_symbols(&buf, &models, symbols.len()).unwrap(), symbols);
    }

    #[test]
    fn size_within_ideal_plus_flush() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = implicit_model(0.6);
        let symbols: Vec<i32> = (0..5000).map(|_| rng.random_range(-6..=6)).collect();
        let ideal: f64 = symbols.iter().map(|&s| m.cost_bits(s)).sum();
        let buf = encode_symbols(&symbols, std::slice::from_ref(&m)).unwrap();
        assert!((buf.len_bits() as f64) <= ideal + 32.0, "{} vs {ideal}", buf.len_bits());
        assert!(buf.bit_count <= buf.len_bits());
    }

    proptest! {
        #[test]
        fn round_trip(symbols in proptest::collection::vec(-255i32..=255, 0..300), r in 0.001f64..0.999) {
            let m = implicit_model(r);
            let buf = encode_symbols(&symbols, std::slice::from_ref(&m)).unwrap();
            prop_assert_eq!(decode_symbols(&buf, std::slice::from_ref(&m), symbols.len()).unwrap(), symbols);
        }
    }
}
