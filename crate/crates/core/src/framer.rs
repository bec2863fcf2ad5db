//! Redundancy payloads: one initial state plus a strided run of latents,
//! entropy coded newest-first under an age-dependent rate schedule.

use std::collections::HashMap;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::codec::{
    dequantize, encode_stream, quantize_is, quantize_latent, InitialState, LatentVector, QuantizerTable,
    ReferenceTransform, IS_DIM, LATENT_DIM, NUM_LAMBDAS,
};
use crate::error::{Error, Result};
use crate::features::FeatureSequence;
use crate::range_coder::{RangeDecoder, RangeEncoder, SymbolModel};

pub const PAYLOAD_MAGIC: u8 = 0xD5;
/// Duration covered by one latent at stride 2.
pub const LATENT_SPAN_MS: u32 = 40;
pub const PACKET_MS: u32 = 20;
pub const DEFAULT_SCHEDULE_ID: u8 = 0;

/// λ index per latent age (0 = newest). Length is the number of latents per
/// payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RateSchedule {
    lambda_index_by_age: Vec<u8>,
}

impl RateSchedule {
    pub fn new(lambda_index_by_age: Vec<u8>) -> Result<Self> {
        if lambda_index_by_age.iter().any(|&l| l as usize >= NUM_LAMBDAS) {
            return Err(Error::invalid("schedule λ index out of range"));
        }
        if lambda_index_by_age.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid("schedule λ index must not decrease with age"));
        }
        Ok(RateSchedule { lambda_index_by_age })
    }

    pub fn duration_latents(&self) -> usize {
        self.lambda_index_by_age.len()
    }

    pub fn lambda_index_by_age(&self) -> &[u8] {
        &self.lambda_index_by_age
    }

    /// λ index of the initial state: the newest latent's.
    pub fn is_lambda(&self) -> usize {
        self.lambda_index_by_age.first().copied().unwrap_or(0) as usize
    }

    /// Prefix of the schedule holding the `k` newest ages.
    pub fn truncated(&self, k: usize) -> RateSchedule {
        RateSchedule {
            lambda_index_by_age: self.lambda_index_by_age[..k.min(self.duration_latents())].to_vec(),
        }
    }
}

/// λ index linear in age, 0 for the newest latent and 15 for the oldest.
pub fn default_schedule(duration_s: f64) -> Result<RateSchedule> {
    let latents = duration_s * 1000.0 / LATENT_SPAN_MS as f64;
    let k = latents.round();
    if !(duration_s >= 0.0) || (latents - k).abs() > 1e-6 {
        return Err(Error::invalid(format!(
            "duration {duration_s} s is not a multiple of {LATENT_SPAN_MS} ms"
        )));
    }
    let k = k as usize;
    let top = (NUM_LAMBDAS - 1) as f64;
    let ages = (0..k)
        .map(|j| {
            if k == 1 {
                0
            } else {
                (top * j as f64 / (k - 1) as f64).round() as u8
            }
        })
        .collect();
    RateSchedule::new(ages)
}

/// Schedule whose per-age rate interpolates geometrically from `newest_bits`
/// to `oldest_bits` per vector. `rates` is the mean latent rate of each λ
/// index; each age takes the index closest in log rate, then indices are
/// forced non-decreasing.
pub fn shaped_schedule(rates: &[f64], k: usize, newest_bits: f64, oldest_bits: f64) -> Result<RateSchedule> {
    if rates.len() != NUM_LAMBDAS || rates.iter().any(|&r| !(r > 0.0)) {
        return Err(Error::invalid("need one positive rate per λ index"));
    }
    if !(newest_bits > 0.0 && oldest_bits > 0.0) {
        return Err(Error::invalid("target rates must be positive"));
    }
    let mut ages = Vec::with_capacity(k);
    let mut floor = 0u8;
    for j in 0..k {
        let frac = if k > 1 { j as f64 / (k - 1) as f64 } else { 0.0 };
        let target = newest_bits * (oldest_bits / newest_bits).powf(frac);
        let best = (0..NUM_LAMBDAS)
            .min_by(|&a, &b| {
                let da = (rates[a] / target).ln().abs();
                let db = (rates[b] / target).ln().abs();
                da.total_cmp(&db)
            })
            .expect("nonempty") as u8;
        floor = floor.max(best);
        ages.push(floor);
    }
    RateSchedule::new(ages)
}

/// Quantizer table, transform and pre-shared schedules, with symbol models
/// built once.
#[derive(Debug, Clone)]
pub struct PayloadCodec {
    table: QuantizerTable,
    transform: ReferenceTransform,
    schedules: HashMap<u8, RateSchedule>,
    latent_models: Vec<Vec<SymbolModel>>,
    state_models: Vec<Vec<SymbolModel>>,
}

impl PayloadCodec {
    pub fn new(table: QuantizerTable) -> Result<Self> {
        let transform = ReferenceTransform::with_stride(table.transform_seed, table.stride)?;
        PayloadCodec::with_transform(table, transform)
    }

    pub fn with_transform(table: QuantizerTable, transform: ReferenceTransform) -> Result<Self> {
        if transform.seed() != table.transform_seed || transform.stride() != table.stride {
            return Err(Error::invalid("table was trained for a different transform"));
        }
        let latent_models = (0..NUM_LAMBDAS).map(|l| table.latent_models(l)).collect();
        let state_models = (0..NUM_LAMBDAS).map(|l| table.state_models(l)).collect();
        Ok(PayloadCodec {
            table,
            transform,
            schedules: HashMap::new(),
            latent_models,
            state_models,
        })
    }

    pub fn register(&mut self, id: u8, schedule: RateSchedule) {
        self.schedules.insert(id, schedule);
    }

    pub fn schedule(&self, id: u8) -> Result<&RateSchedule> {
        self.schedules
            .get(&id)
            .ok_or_else(|| Error::format(format!("unknown schedule id {id}")))
    }

    pub fn table(&self) -> &QuantizerTable {
        &self.table
    }

    pub fn transform(&self) -> &ReferenceTransform {
        &self.transform
    }

    pub fn stride(&self) -> usize {
        self.table.stride
    }
}

/// Decoded (or freshly built) redundancy payload.
#[derive(Debug, Clone, PartialEq)]
pub struct RedundancyPayload {
    pub newest_frame_index: u64,
    pub schedule_id: u8,
    pub is_symbols: Vec<i32>,
    pub is_dequantized: Vec<f64>,
    /// Newest first.
    pub latent_symbols: Vec<Vec<i32>>,
    pub latent_dequantized: Vec<Vec<f64>>,
    /// Latents the header promises; more than `latent_symbols.len()` after a
    /// partial parse.
    pub expected_latents: usize,
    pub bytes: Vec<u8>,
}

impl RedundancyPayload {
    /// 0 for even newest frames, 1 for odd.
    pub fn parity(&self) -> u8 {
        (self.newest_frame_index & 1) as u8
    }

    pub fn is_partial(&self) -> bool {
        self.latent_symbols.len() < self.expected_latents
    }

    /// 20-ms frame indices covered, oldest first. May start below zero for
    /// payloads near the stream start.
    pub fn span(&self, stride: usize) -> (i64, i64) {
        let newest = self.newest_frame_index as i64;
        let k = self.latent_symbols.len() as i64;
        (newest - stride as i64 * k + 1, newest)
    }
}

/// Latents a payload at `frame_index` carries: the schedule length, capped
/// so the oldest latent is not before the stream start.
pub fn latents_available(schedule: &RateSchedule, stride: usize, frame_index: u64) -> usize {
    schedule.duration_latents().min(frame_index as usize / stride + 1)
}

fn put_varint(out: &mut Vec<u8>, mut v: u64) {
    loop {
        let b = (v & 0x7f) as u8;
        v >>= 7;
        if v == 0 {
            out.push(b);
            return;
        }
        out.push(b | 0x80);
    }
}

fn get_varint(bytes: &[u8], pos: &mut usize) -> Result<u64> {
    let mut v = 0u64;
    for shift in (0..64).step_by(7) {
        let b = *bytes
            .get(*pos)
            .ok_or_else(|| Error::format("payload header truncated"))?;
        *pos += 1;
        v |= ((b & 0x7f) as u64) << shift;
        if b & 0x80 == 0 {
            return Ok(v);
        }
    }
    Err(Error::format("varint too long"))
}

/// Builds the payload sent with packet `frame_index` from the encoder outputs
/// `latents` and `states` (indexed by 20-ms step).
pub fn build_payload(
    latents: &[LatentVector],
    states: &[InitialState],
    codec: &PayloadCodec,
    schedule_id: u8,
    frame_index: u64,
) -> Result<RedundancyPayload> {
    let schedule = codec.schedule(schedule_id).map_err(|e| Error::invalid(e.to_string()))?;
    let n = frame_index as usize;
    if n >= latents.len() || n >= states.len() {
        return Err(Error::invalid(format!(
            "frame {frame_index} has not been encoded ({} steps of history)",
            latents.len().min(states.len())
        )));
    }
    let stride = codec.stride();
    let k = latents_available(schedule, stride, frame_index);
    let ages = schedule.lambda_index_by_age();
    let is_lambda = schedule.is_lambda();

    let mut bytes = vec![PAYLOAD_MAGIC, schedule_id];
    put_varint(&mut bytes, (frame_index << 1) | (frame_index & 1));

    let mut enc = RangeEncoder::new();
    let qs = quantize_is(&states[n], &codec.table, is_lambda);
    for (&s, m) in qs.symbols.iter().zip(&codec.state_models[is_lambda]) {
        enc.encode(s, m)?;
    }
    let mut latent_symbols = Vec::with_capacity(k);
    let mut latent_dequantized = Vec::with_capacity(k);
    for (j, &lambda) in ages.iter().take(k).enumerate() {
        let q = quantize_latent(&latents[n - j * stride], &codec.table, lambda as usize);
        for (&s, m) in q.symbols.iter().zip(&codec.latent_models[lambda as usize]) {
            enc.encode(s, m)?;
        }
        latent_symbols.push(q.symbols);
        latent_dequantized.push(q.dequantized);
    }
    bytes.extend_from_slice(&enc.finish().bytes);
    Ok(RedundancyPayload {
        newest_frame_index: frame_index,
        schedule_id,
        is_symbols: qs.symbols,
        is_dequantized: qs.dequantized,
        latent_symbols,
        latent_dequantized,
        expected_latents: k,
        bytes,
    })
}

/// Parses a payload, decoding at most `max_latents` latents (all when
/// `None`). A stream cut short after at least one latent yields a partial
/// result.
pub fn parse_payload(bytes: &[u8], codec: &PayloadCodec, max_latents: Option<usize>) -> Result<RedundancyPayload> {
    if bytes.len() < 3 {
        return Err(Error::format("payload too short"));
    }
    if bytes[0] != PAYLOAD_MAGIC {
        return Err(Error::format(format!("bad payload magic {:#04x}", bytes[0])));
    }
    let schedule_id = bytes[1];
    let schedule = codec.schedule(schedule_id)?;
    let mut pos = 2;
    let tagged = get_varint(bytes, &mut pos)?;
    let frame_index = tagged >> 1;
    if tagged & 1 != frame_index & 1 {
        return Err(Error::format("parity bit does not match frame index"));
    }
    let stride = codec.stride();
    let expected = latents_available(schedule, stride, frame_index);
    let wanted = max_latents.map_or(expected, |m| m.min(expected));
    let ages = schedule.lambda_index_by_age();
    let is_lambda = schedule.is_lambda();

    let body = &bytes[pos..];
    let mut dec = RangeDecoder::new(body).map_err(|_| Error::format("payload body truncated"))?;
    let mut is_symbols = Vec::with_capacity(IS_DIM);
    for m in &codec.state_models[is_lambda] {
        is_symbols.push(dec.decode(m).map_err(|_| Error::format("payload truncated inside the initial state"))?);
    }
    let mut latent_symbols = Vec::with_capacity(wanted);
    let mut latent_dequantized = Vec::with_capacity(wanted);
    'latents: for &lambda in ages.iter().take(wanted) {
        let mut symbols = Vec::with_capacity(LATENT_DIM);
        for m in &codec.latent_models[lambda as usize] {
            match dec.decode(m) {
                Ok(s) => symbols.push(s),
                Err(_) => break 'latents,
            }
        }
        latent_dequantized.push(dequantize(&symbols, codec.table.latent_row(lambda as usize)));
        latent_symbols.push(symbols);
    }
    if wanted > 0 && latent_symbols.is_empty() {
        return Err(Error::format("payload truncated before the first latent"));
    }
    if latent_symbols.len() == expected && max_latents.is_none() {
        dec.finish().map_err(|e| Error::format(format!("trailing payload bytes: {e}")))?;
    }
    Ok(RedundancyPayload {
        newest_frame_index: frame_index,
        schedule_id,
        is_dequantized: dequantize(&is_symbols, codec.table.state_row(is_lambda)),
        is_symbols,
        latent_symbols,
        latent_dequantized,
        expected_latents: expected,
        bytes: bytes.to_vec(),
    })
}

/// Decodes a parsed payload to feature vectors, chronological. Frames before
/// the stream start are dropped; returns the index of the first frame kept.
pub fn decode_payload(payload: &RedundancyPayload, codec: &PayloadCodec) -> Result<(u64, FeatureSequence)> {
    let out = crate::codec::decode_packet_latents(&payload.latent_dequantized, &payload.is_dequantized, &codec.transform)?;
    let last = 2 * payload.newest_frame_index as i64 + 1;
    let first = last + 1 - out.len() as i64;
    let skip = (-first).max(0) as usize;
    Ok((first.max(0) as u64, out.slice(skip, out.len())))
}

/// One 20-ms packet: primary payload stub plus optional redundancy bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MuxedPacket {
    pub sequence: u64,
    pub send_time_ms: u64,
    pub primary: Vec<u8>,
    pub redundancy: Option<Vec<u8>>,
}

#[derive(Serialize, Deserialize)]
struct PacketRecord {
    sequence: u64,
    send_time_ms: u64,
    primary_size_bytes: usize,
    redundancy_base64: Option<String>,
}

/// Encodes `features` and builds one packet per 20-ms step, each carrying a
/// redundancy payload under `schedule_id` and a zero-filled primary stub.
pub fn build_stream(
    features: &FeatureSequence,
    codec: &PayloadCodec,
    schedule_id: u8,
    primary_size: usize,
) -> Result<Vec<MuxedPacket>> {
    let (latents, states) = encode_stream(features, &codec.transform)?;
    (0..latents.len() as u64)
        .map(|n| {
            let p = build_payload(&latents, &states, codec, schedule_id, n)?;
            Ok(MuxedPacket {
                sequence: n,
                send_time_ms: n * PACKET_MS as u64,
                primary: vec![0; primary_size],
                redundancy: Some(p.bytes),
            })
        })
        .collect()
}

pub fn write_packets_jsonl(path: impl AsRef<Path>, packets: &[MuxedPacket]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for p in packets {
        let rec = PacketRecord {
            sequence: p.sequence,
            send_time_ms: p.send_time_ms,
            primary_size_bytes: p.primary.len(),
            redundancy_base64: p.redundancy.as_ref().map(|b| BASE64.encode(b)),
        };
        out.push_str(&serde_json::to_string(&rec).expect("packet records serialize"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_packets_jsonl(path: impl AsRef<Path>) -> Result<Vec<MuxedPacket>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut packets: Vec<MuxedPacket> = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let rec: PacketRecord =
            serde_json::from_str(line).map_err(|e| Error::format(format!("line {}: {e}", i + 1)))?;
        let redundancy = rec
            .redundancy_base64
            .map(|s| BASE64.decode(s))
            .transpose()
            .map_err(|e| Error::format(format!("line {}: {e}", i + 1)))?;
        if let Some(prev) = packets.last() {
            if rec.sequence <= prev.sequence {
                return Err(Error::format(format!("line {}: sequence numbers must increase", i + 1)));
            }
        }
        packets.push(MuxedPacket {
            sequence: rec.sequence,
            send_time_ms: rec.send_time_ms,
            primary: vec![0; rec.primary_size_bytes],
            redundancy,
        });
    }
    Ok(packets)
}

/// Wire-size statistics of the payloads a schedule produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BitBudget {
    pub packets: usize,
    pub mean_bits: f64,
    pub min_bits: usize,
    pub max_bits: usize,
    pub redundancy_bps: f64,
}

/// Mean payload size over every steady-state packet (full schedule length
/// available) of every probe sequence.
pub fn payload_bit_budget(codec: &PayloadCodec, schedule_id: u8, probe: &[FeatureSequence]) -> Result<BitBudget> {
    let schedule = codec.schedule(schedule_id)?;
    let full_from = (schedule.duration_latents().max(1) - 1) * codec.stride();
    let mut sizes = Vec::new();
    for seq in probe {
        let (latents, states) = encode_stream(seq, &codec.transform)?;
        for n in full_from..latents.len() {
            let p = build_payload(&latents, &states, codec, schedule_id, n as u64)?;
            sizes.push(8 * p.bytes.len());
        }
    }
    if sizes.is_empty() {
        return Err(Error::invalid("probe sequences are shorter than the schedule"));
    }
    let mean = sizes.iter().sum::<usize>() as f64 / sizes.len() as f64;
    Ok(BitBudget {
        packets: sizes.len(),
        mean_bits: mean,
        min_bits: *sizes.iter().min().expect("nonempty"),
        max_bits: *sizes.iter().max().expect("nonempty"),
        redundancy_bps: mean * 1000.0 / PACKET_MS as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::gen_synthetic_features;
    use std::sync::OnceLock;

    struct Fixture {
        codec: PayloadCodec,
        latents: Vec<LatentVector>,
        states: Vec<InitialState>,
    }

    fn fixture() -> &'static Fixture {
        static F: OnceLock<Fixture> = OnceLock::new();
        F.get_or_init(|| {
            let mut table = QuantizerTable::uniform(7, 2, 2.0, 0.2);
            for l in 0..NUM_LAMBDAS {
                for d in table.latent_row_mut(l) {
                    d.scale = 2.0 * 0.8f32.powi(l as i32);
                }
            }
            let mut codec = PayloadCodec::new(table).unwrap();
            codec.register(0, default_schedule(1.04).unwrap());
            codec.register(1, default_schedule(0.04).unwrap());
            let f = gen_synthetic_features(3, 400).unwrap();
            let (latents, states) = encode_stream(&f, codec.transform()).unwrap();
            Fixture { codec, latents, states }
        })
    }

    #[test]
    fn default_schedule_shape() {
        let s = default_schedule(0.04).unwrap();
        assert_eq!(s.lambda_index_by_age(), &[0]);
        let s = default_schedule(1.04).unwrap();
        assert_eq!(s.duration_latents(), 26);
        assert_eq!(s.lambda_index_by_age()[0], 0);
        assert_eq!(s.lambda_index_by_age()[25], 15);
        assert!(s.lambda_index_by_age().windows(2).all(|w| w[0] <= w[1]));
        assert!(matches!(default_schedule(0.05), Err(Error::InvalidArgument(_))));
        assert_eq!(default_schedule(0.0).unwrap().duration_latents(), 0);
    }

    #[test]
    fn schedule_rejects_decreasing_ages() {
        assert!(RateSchedule::new(vec![0, 3, 2]).is_err());
        assert!(RateSchedule::new(vec![0, 16]).is_err());
    }

    #[test]
    fn shaped_schedule_interpolates_rates() {
        let rates: Vec<f64> = (0..16).map(|l| 80.0 * 0.85f64.powi(l)).collect();
        let s = shaped_schedule(&rates, 26, 50.0, 6.0).unwrap();
        let first = rates[s.lambda_index_by_age()[0] as usize];
        let last = rates[s.lambda_index_by_age()[25] as usize];
        assert!((first / 50.0).ln().abs() < 0.1, "{first}");
        assert!(last < 10.0, "{last}");
    }

    #[test]
    fn round_trip_and_length() {
        let fx = fixture();
        let p = build_payload(&fx.latents, &fx.states, &fx.codec, 0, 120).unwrap();
        assert_eq!(p.latent_symbols.len(), 26);
        let q = parse_payload(&p.bytes, &fx.codec, None).unwrap();
        assert_eq!(q.latent_symbols, p.latent_symbols);
        assert_eq!(q.is_symbols, p.is_symbols);
        assert_eq!(q.latent_dequantized, p.latent_dequantized);
        assert_eq!(q.newest_frame_index, 120);
        assert!(!q.is_partial());
        let (first, frames) = decode_payload(&q, &fx.codec).unwrap();
        assert_eq!(frames.len(), 104);
        assert_eq!(first, 2 * 120 + 2 - 104);
    }

    #[test]
    fn minimal_payload() {
        let fx = fixture();
        let p = build_payload(&fx.latents, &fx.states, &fx.codec, 1, 77).unwrap();
        let q = parse_payload(&p.bytes, &fx.codec, None).unwrap();
        assert_eq!(q.latent_symbols.len(), 1);
        assert_eq!(decode_payload(&q, &fx.codec).unwrap().1.len(), 4);
    }

    #[test]
    fn consecutive_payloads_alternate_parity_and_overlap() {
        let fx = fixture();
        let a = build_payload(&fx.latents, &fx.states, &fx.codec, 0, 100).unwrap();
        let b = build_payload(&fx.latents, &fx.states, &fx.codec, 0, 101).unwrap();
        assert_ne!(a.parity(), b.parity());
        let (a0, a1) = a.span(2);
        let (b0, b1) = b.span(2);
        assert_eq!((a1 - a0 + 1, b1 - b0 + 1), (52, 52));
        assert_eq!((b0 - a0, b1 - a1), (1, 1));
    }

    #[test]
    fn early_payloads_cover_from_stream_start() {
        let fx = fixture();
        for n in 0..60u64 {
            let p = build_payload(&fx.latents, &fx.states, &fx.codec, 0, n).unwrap();
            let (lo, hi) = p.span(2);
            assert_eq!(hi, n as i64);
            assert!(lo <= 0 || p.latent_symbols.len() == 26, "n {n} lo {lo}");
            assert!(lo >= -1);
        }
    }

    #[test]
    fn future_frame_rejected() {
        let fx = fixture();
        let err = build_payload(&fx.latents, &fx.states, &fx.codec, 0, 200);
        assert!(matches!(err, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn unknown_schedule_is_format_error() {
        let fx = fixture();
        let mut bytes = build_payload(&fx.latents, &fx.states, &fx.codec, 0, 80).unwrap().bytes;
        bytes[1] = 9;
        assert!(matches!(parse_payload(&bytes, &fx.codec, None), Err(Error::Format(_))));
        bytes[1] = 0;
        bytes[0] ^= 1;
        assert!(matches!(parse_payload(&bytes, &fx.codec, None), Err(Error::Format(_))));
    }

    #[test]
    fn truncation_gives_partial_result() {
        let fx = fixture();
        let p = build_payload(&fx.latents, &fx.states, &fx.codec, 0, 150).unwrap();
        let full = parse_payload(&p.bytes, &fx.codec, None).unwrap();
        let cut = parse_payload(&p.bytes[..p.bytes.len() * 2 / 3], &fx.codec, None).unwrap();
        assert!(cut.is_partial());
        let k = cut.latent_symbols.len();
        assert!((1..26).contains(&k));
        assert_eq!(&full.latent_symbols[..k], &cut.latent_symbols[..]);
        assert!(matches!(parse_payload(&p.bytes[..8], &fx.codec, None), Err(Error::Format(_))));
    }

    #[test]
    fn prefix_decode_matches_full() {
        let fx = fixture();
        let p = build_payload(&fx.latents, &fx.states, &fx.codec, 0, 99).unwrap();
        let full = parse_payload(&p.bytes, &fx.codec, None).unwrap();
        let part = parse_payload(&p.bytes, &fx.codec, Some(3)).unwrap();
        assert_eq!(part.latent_symbols, full.latent_symbols[..3].to_vec());
        let (_, a) = decode_payload(&full, &fx.codec).unwrap();
        let (_, b) = decode_payload(&part, &fx.codec).unwrap();
        // newest 12 frames agree
        assert_eq!(&a.frames()[a.len() - 12..], b.frames());
    }

    #[test]
    fn packets_jsonl_round_trip() {
        let fx = fixture();
        let f = gen_synthetic_features(4, 40).unwrap();
        let packets = build_stream(&f, &fx.codec, 0, 60).unwrap();
        assert_eq!(packets.len(), 20);
        assert!(packets.windows(2).all(|w| w[1].sequence == w[0].sequence + 1
            && w[1].send_time_ms == w[0].send_time_ms + 20));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        write_packets_jsonl(&path, &packets).unwrap();
        assert_eq!(read_packets_jsonl(&path).unwrap(), packets);
    }

    #[test]
    fn budget_of_empty_schedule_is_is_only() {
        let mut codec = fixture().codec.clone();
        codec.register(5, RateSchedule::new(vec![]).unwrap());
        let probe = vec![gen_synthetic_features(5, 100).unwrap()];
        let b = payload_bit_budget(&codec, 5, &probe).unwrap();
        let (latents, states) = encode_stream(&probe[0], codec.transform()).unwrap();
        let p = build_payload(&latents, &states, &codec, 5, 10).unwrap();
        assert!(p.latent_symbols.is_empty());
        let q = parse_payload(&p.bytes, &codec, None).unwrap();
        assert_eq!(q.is_symbols, p.is_symbols);
        assert!(b.mean_bits > 0.0 && b.max_bits <= 8 * (4 + 4 + IS_DIM * 4));
        assert_eq!(b.redundancy_bps, b.mean_bits * 50.0);
    }
}
