//! Two-state burst-loss channel and a receiver that fills each loss gap from
//! the redundancy in the first packet to arrive after it.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::NUM_LAMBDAS;
use crate::error::{Error, Result};
use crate::features::FeatureSequence;
use crate::framer::{decode_payload, parse_payload, MuxedPacket, PayloadCodec, PACKET_MS};
use crate::trainer::distortion;

/// Feature frames per 20-ms packet.
const FRAMES_PER_PACKET: usize = 2;

/// Gilbert channel: every packet sent in the bad state is lost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossModel {
    pub p_good_to_bad: f64,
    pub p_bad_to_good: f64,
    pub seed: u64,
}

impl LossModel {
    pub fn new(p_good_to_bad: f64, p_bad_to_good: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_good_to_bad) || !(p_bad_to_good > 0.0 && p_bad_to_good <= 1.0) {
            return Err(Error::invalid(format!(
                "transition probabilities out of range: {p_good_to_bad}, {p_bad_to_good}"
            )));
        }
        Ok(LossModel {
            p_good_to_bad,
            p_bad_to_good,
            seed,
        })
    }

    /// Parameters giving a stationary loss rate `avg_loss` and geometric
    /// bursts of mean `mean_burst` packets.
    pub fn from_average(avg_loss: f64, mean_burst: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&avg_loss) {
            return Err(Error::invalid(format!("average loss {avg_loss} outside [0, 1)")));
        }
        if !(mean_burst >= 1.0) {
            return Err(Error::invalid(format!("mean burst {mean_burst} below 1")));
        }
        let p_bg = 1.0 / mean_burst;
        let p_gb = p_bg * avg_loss / (1.0 - avg_loss);
        if p_gb > 1.0 {
            return Err(Error::invalid("loss rate and burst length are incompatible"));
        }
        LossModel::new(p_gb, p_bg, seed)
    }

    pub fn stationary_loss(&self) -> f64 {
        self.p_good_to_bad / (self.p_good_to_bad + self.p_bad_to_good)
    }

    /// Trace of `n` packets; the first state is drawn from the stationary
    /// distribution.
    pub fn trace(&self, n: usize) -> LossTrace {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut bad = rng.random::<f64>() < self.stationary_loss();
        let mut arrived = Vec::with_capacity(n);
        for _ in 0..n {
            arrived.push(!bad);
            let flip = if bad { self.p_bad_to_good } else { self.p_good_to_bad };
            if rng.random::<f64>() < flip {
                bad = !bad;
            }
        }
        LossTrace { arrived }
    }
}

pub fn gen_loss_trace(avg_loss: f64, mean_burst_packets: f64, n: usize, seed: u64) -> Result<LossTrace> {
    Ok(LossModel::from_average(avg_loss, mean_burst_packets, seed)?.trace(n))
}

/// Per-packet arrival flags at 20-ms spacing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LossTrace {
    pub arrived: Vec<bool>,
}

impl LossTrace {
    pub fn lossless(n: usize) -> Self {
        LossTrace { arrived: vec![true; n] }
    }

    /// Lossless except for `len` packets starting at `start`.
    pub fn single_burst(n: usize, start: usize, len: usize) -> Self {
        let mut t = LossTrace::lossless(n);
        for a in t.arrived.iter_mut().skip(start).take(len) {
            *a = false;
        }
        t
    }

    pub fn len(&self) -> usize {
        self.arrived.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrived.is_empty()
    }

    pub fn loss_rate(&self) -> f64 {
        if self.arrived.is_empty() {
            return 0.0;
        }
        self.arrived.iter().filter(|a| !**a).count() as f64 / self.arrived.len() as f64
    }

    /// Maximal runs of lost packets as `(start, length)`.
    pub fn bursts(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut start = None;
        for (i, &a) in self.arrived.iter().enumerate() {
            match (a, start) {
                (false, None) => start = Some(i),
                (true, Some(s)) => {
                    out.push((s, i - s));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            out.push((s, self.arrived.len() - s));
        }
        out
    }

    pub fn mean_burst(&self) -> f64 {
        let b = self.bursts();
        if b.is_empty() {
            return 0.0;
        }
        b.iter().map(|&(_, l)| l as f64).sum::<f64>() / b.len() as f64
    }

    pub fn to_text(&self) -> String {
        let mut s: String = self.arrived.iter().map(|&a| if a { '1' } else { '0' }).collect();
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let body = text.strip_suffix('\n').unwrap_or(text);
        let body = body.strip_suffix('\r').unwrap_or(body);
        let arrived = body
            .chars()
            .map(|c| match c {
                '1' => Ok(true),
                '0' => Ok(false),
                other => Err(Error::format(format!("unexpected character {other:?} in loss trace"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(LossTrace { arrived })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        LossTrace::from_text(&text)
    }
}

/// Receiver outcome. Frame counts are 10-ms feature frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub frames_total: usize,
    pub frames_recovered_primary: usize,
    pub frames_recovered_redundancy: usize,
    pub frames_unrecovered: usize,
    /// Redundancy-recovered frames by latent age in the payload used.
    pub recovered_by_age: Vec<usize>,
    pub recovered_by_lambda: Vec<usize>,
    pub redundancy_bitrate_bps: f64,
    /// Loss gaps closed by an arriving packet.
    pub gaps: usize,
    /// Lost packets at the end of the stream with no later arrival.
    pub trailing_lost_packets: usize,
    pub mean_burst_packets: f64,
    pub max_burst_covered_packets: usize,
    pub decoder_invocations: usize,
    /// Mean distortion of redundancy-recovered frames, when a reference was
    /// given and anything was recovered.
    pub recovered_distortion: Option<f64>,
}

/// Plays `stream` through `trace`. Arrived packets supply their own primary
/// frames; the first arrival after a gap has its redundancy parsed once, up
/// to the oldest latent the gap needs.
pub fn simulate(
    stream: &[MuxedPacket],
    trace: &LossTrace,
    codec: &PayloadCodec,
    reference: Option<&FeatureSequence>,
) -> Result<RecoveryReport> {
    if stream.len() != trace.len() {
        return Err(Error::invalid(format!(
            "stream has {} packets, trace {}",
            stream.len(),
            trace.len()
        )));
    }
    if let Some(r) = reference {
        if r.len() < stream.len() * FRAMES_PER_PACKET {
            return Err(Error::invalid("reference features shorter than the stream"));
        }
    }
    let stride = codec.stride();
    let redundancy_bits: usize = stream.iter().map(|p| 8 * p.redundancy.as_ref().map_or(0, Vec::len)).sum();
    let mut report = RecoveryReport {
        frames_total: stream.len() * FRAMES_PER_PACKET,
        frames_recovered_primary: 0,
        frames_recovered_redundancy: 0,
        frames_unrecovered: 0,
        recovered_by_age: Vec::new(),
        recovered_by_lambda: vec![0; NUM_LAMBDAS],
        redundancy_bitrate_bps: if stream.is_empty() {
            0.0
        } else {
            redundancy_bits as f64 / stream.len() as f64 * 1000.0 / PACKET_MS as f64
        },
        gaps: 0,
        trailing_lost_packets: 0,
        mean_burst_packets: 0.0,
        max_burst_covered_packets: 0,
        decoder_invocations: 0,
        recovered_distortion: None,
    };
    let mut burst_sum = 0usize;
    let mut dist_sum = 0.0;
    let mut dist_frames = 0usize;
    let mut gap_start: Option<usize> = None;
    for (n, &arrived) in trace.arrived.iter().enumerate() {
        if !arrived {
            gap_start.get_or_insert(n);
            continue;
        }
        report.frames_recovered_primary += FRAMES_PER_PACKET;
        let Some(g) = gap_start.take() else { continue };
        report.gaps += 1;
        burst_sum += n - g;
        let mut recovered_packets = 0;
        if let Some(bytes) = &stream[n].redundancy {
            report.decoder_invocations += 1;
            let needed = (n - g) / stride + 1;
            if let Ok(payload) = parse_payload(bytes, codec, Some(needed)) {
                let schedule = codec.schedule(payload.schedule_id)?;
                let have = payload.latent_symbols.len();
                let decoded = match reference {
                    Some(_) => Some(decode_payload(&payload, codec)?),
                    None => None,
                };
                for f in g..n {
                    let age = (payload.newest_frame_index as usize - f) / stride;
                    if payload.newest_frame_index as usize != n || age >= have {
                        continue;
                    }
                    recovered_packets += 1;
                    if report.recovered_by_age.len() <= age {
                        report.recovered_by_age.resize(age + 1, 0);
                    }
                    report.recovered_by_age[age] += FRAMES_PER_PACKET;
                    report.recovered_by_lambda[schedule.lambda_index_by_age()[age] as usize] += FRAMES_PER_PACKET;
                    if let (Some(reference), Some((first, frames))) = (reference, &decoded) {
                        let lo = FRAMES_PER_PACKET * f;
                        let off = lo - *first as usize;
                        let got = frames.slice(off, off + FRAMES_PER_PACKET);
                        dist_sum += distortion(&reference.slice(lo, lo + FRAMES_PER_PACKET), &got)?
                            * FRAMES_PER_PACKET as f64;
                        dist_frames += FRAMES_PER_PACKET;
                    }
                }
            }
        }
        report.frames_recovered_redundancy += recovered_packets * FRAMES_PER_PACKET;
        report.frames_unrecovered += (n - g - recovered_packets) * FRAMES_PER_PACKET;
        if recovered_packets == n - g {
            report.max_burst_covered_packets = report.max_burst_covered_packets.max(n - g);
        }
    }
    if let Some(g) = gap_start {
        report.trailing_lost_packets = trace.len() - g;
        report.frames_unrecovered += report.trailing_lost_packets * FRAMES_PER_PACKET;
    }
    if report.gaps > 0 {
        report.mean_burst_packets = burst_sum as f64 / report.gaps as f64;
    }
    if dist_frames > 0 {
        report.recovered_distortion = Some(dist_sum / dist_frames as f64);
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub loss_rate: f64,
    pub trace_loss_rate: f64,
    pub report: RecoveryReport,
}

/// Simulates `stream` under a Gilbert trace for each loss rate, all with the
/// same seed.
pub fn sweep(
    stream: &[MuxedPacket],
    codec: &PayloadCodec,
    loss_rates: &[f64],
    mean_burst: f64,
    seed: u64,
    reference: Option<&FeatureSequence>,
) -> Result<Vec<SweepPoint>> {
    loss_rates
        .iter()
        .map(|&rate| {
            let trace = gen_loss_trace(rate, mean_burst, stream.len(), seed)?;
            Ok(SweepPoint {
                loss_rate: rate,
                trace_loss_rate: trace.loss_rate(),
                report: simulate(stream, &trace, codec, reference)?,
            })
        })
        .collect()
}
