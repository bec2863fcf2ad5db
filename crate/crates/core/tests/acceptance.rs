//! Acceptance suite. Prints one PASS/FAIL line per criterion and fails at the
//! end if any criterion failed. Run with `--nocapture` to see the lines.

use std::time::Instant;

use dred::cli::{register_schedule, RunConfig};
use dred::codec::QuantizerTable;
use dred::features::{gen_synthetic_features, synthetic_corpus};
use dred::framer::{
    build_stream, decode_payload, default_schedule, parse_payload, payload_bit_budget, MuxedPacket, PayloadCodec,
};
use dred::laplace::{
    continuous_pdf, discrete_pmf, rate_bits, symbol_bits, theta_implicit, truncated_pmf, MAX_SYMBOL,
};
use dred::netsim::{gen_loss_trace, simulate, LossTrace};
use dred::range_coder::{decode_symbols, encode_symbols, SymbolModel};
use dred::trainer::{grad_check, train_tables, GradCheckConfig, TrainConfig};
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PACKETS_10S: usize = 500;
const FRAMES_PER_PACKET: usize = 2;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

// Adaptive Simpson, used as an independent quadrature oracle.
fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    rec(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 40)
}

fn pmf_entropy(pmf: &[f64]) -> f64 {
    pmf.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.log2()).sum()
}

fn laplace_math() -> Outcome {
    let mut worst_push: f64 = 0.0;
    for r in [0.3, 0.6, 0.9] {
        let f = |z: f64| continuous_pdf(z, r);
        for theta in [0.5, 0.75, theta_implicit(r)] {
            for k in -12i32..=12 {
                let (lo, hi) = match k {
                    0 => (-theta, theta),
                    k if k > 0 => (k as f64 + theta - 1.0, k as f64 + theta),
                    k => (k as f64 - theta, k as f64 + 1.0 - theta),
                };
                let mass = simpson(&f, lo, hi, 1e-14);
                worst_push = worst_push.max((mass - discrete_pmf(k, r, theta)).abs());
            }
        }
    }
    let mut worst_rate: f64 = 0.0;
    for r in [0.1, 0.3, 0.6, 0.9, 0.99] {
        for k in -40i32..=40 {
            let d = symbol_bits(k, r, theta_implicit(r)) - rate_bits(k.abs() as f64, r);
            worst_rate = worst_rate.max(d.abs());
        }
    }
    let h_small = pmf_entropy(&truncated_pmf(1e-6, theta_implicit(1e-6)));
    let degenerate_ok = h_small < 1e-4 && rate_bits(0.0, 1e-12) == 0.0 && rate_bits(3.0, 1e-12) == 0.0;
    check(
        worst_push < 1e-9 && worst_rate < 1e-12 && degenerate_ok,
        format!("pushforward max err {worst_push:.2e}, rate identity max err {worst_rate:.2e}, H(r=1e-6) = {h_small:.2e}"),
    )
}

fn gradients() -> Outcome {
    let report = grad_check(&GradCheckConfig::default()).expect("grad check runs");
    check(
        report.points >= 100 && report.max_rel_err() < 1e-4,
        format!("{} points, max relative error {:.2e}", report.points, report.max_rel_err()),
    )
}

fn entropy_coder() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xc0de);
    let mut failures = 0;
    for _ in 0..10_000 {
        let n = rng.random_range(0..64);
        let models: Vec<SymbolModel> = (0..n)
            .map(|_| {
                let r = rng.random_range(0.01..0.99);
                let theta = if rng.random_bool(0.5) { theta_implicit(r) } else { rng.random_range(0.5..3.0) };
                SymbolModel::from_r_theta(r, theta)
            })
            .collect();
        let symbols: Vec<i32> = (0..n)
            .map(|_| match rng.random_range(0..10) {
                0 => MAX_SYMBOL * if rng.random_bool(0.5) { 1 } else { -1 },
                1..=3 => rng.random_range(-MAX_SYMBOL..=MAX_SYMBOL),
                _ => rng.random_range(-3..=3),
            })
            .collect();
        let ok = encode_symbols(&symbols, &models)
            .and_then(|buf| decode_symbols(&buf, &models, n))
            .is_ok_and(|back| back == symbols);
        failures += usize::from(!ok);
    }

    let r = 0.6;
    let theta = theta_implicit(r);
    let pmf = truncated_pmf(r, theta);
    let oracle = pmf_entropy(&pmf);
    let dist = WeightedIndex::new(&pmf).expect("valid pmf");
    let samples: Vec<i32> = (0..100_000).map(|_| dist.sample(&mut rng) as i32 - MAX_SYMBOL).collect();
    let model = SymbolModel::from_r_theta(r, theta);
    let buf = encode_symbols(&samples, std::slice::from_ref(&model)).expect("encodes");
    let bits = 8.0 * buf.bytes.len() as f64 / samples.len() as f64;
    let rel = (bits - oracle).abs() / oracle;
    check(
        failures == 0 && rel < 0.01,
        format!("{failures} round-trip failures in 10^4; {bits:.4} bits/symbol vs entropy {oracle:.4} ({:.3}%)", 100.0 * rel),
    )
}

fn rd_training(table_out: &mut Option<QuantizerTable>) -> Outcome {
    let corpus = synthetic_corpus(11, 110, 400).expect("corpus");
    let outcome = train_tables(&TrainConfig::default(), &corpus).expect("training runs");
    let pts = &outcome.points;
    let rate_mono = pts.windows(2).all(|w| w[1].mean_rate_bits <= w[0].mean_rate_bits);
    let dist_mono = pts.windows(2).all(|w| w[1].mean_distortion >= w[0].mean_distortion);
    let dims_mono = pts.windows(2).all(|w| w[1].nondegenerate_dims <= w[0].nondegenerate_dims);
    let (first, last) = (&pts[0], &pts[pts.len() - 1]);
    *table_out = Some(outcome.table);
    check(
        pts.len() == 16 && rate_mono && dist_mono && dims_mono && last.nondegenerate_dims < first.nondegenerate_dims,
        format!(
            "rate {:.1} -> {:.1} bits, distortion {:.3} -> {:.3}, dims {} -> {} (monotone: rate {rate_mono}, distortion {dist_mono}, dims {dims_mono})",
            first.mean_rate_bits,
            last.mean_rate_bits,
            first.mean_distortion,
            last.mean_distortion,
            first.nondegenerate_dims,
            last.nondegenerate_dims
        ),
    )
}

fn default_codec(table: &QuantizerTable) -> PayloadCodec {
    let mut codec = PayloadCodec::new(table.clone()).expect("codec");
    codec.register(0, default_schedule(1.04).expect("schedule"));
    codec
}

fn stream_10s(codec: &PayloadCodec, seed: u64) -> Vec<MuxedPacket> {
    let features = gen_synthetic_features(seed, PACKETS_10S * FRAMES_PER_PACKET).expect("features");
    build_stream(&features, codec, 0, 40).expect("stream")
}

fn burst_coverage(table: &QuantizerTable) -> Outcome {
    let codec = default_codec(table);
    let k = codec.schedule(0).expect("registered").duration_latents();
    // newest latent covers its packet and the one before; each older one two more
    let reach = codec.stride() * k - 1;
    let stream = stream_10s(&codec, 21);
    let mut mismatches = 0;
    let mut longest_clean = 0;
    for len in 1..=54 {
        let mut all_clean = true;
        for start in 0..=PACKETS_10S - len {
            let report = simulate(&stream, &LossTrace::single_burst(PACKETS_10S, start, len), &codec, None)
                .expect("simulate");
            let expected = if start + len == PACKETS_10S {
                len * FRAMES_PER_PACKET
            } else {
                len.saturating_sub(reach) * FRAMES_PER_PACKET
            };
            mismatches += usize::from(report.frames_unrecovered != expected);
            all_clean &= start + len == PACKETS_10S || report.frames_unrecovered == 0;
        }
        if all_clean && longest_clean == len - 1 {
            longest_clean = len;
        }
    }
    check(
        reach == 51 && longest_clean == 51 && mismatches == 0,
        format!("bursts up to {longest_clean} packets fully covered; {mismatches} cases off the expected shortfall"),
    )
}

fn self_containment(table: &QuantizerTable) -> Outcome {
    let codec = default_codec(table);
    let stream = stream_10s(&codec, 22);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut mutation_diffs = 0;
    let mut prefix_diffs = 0;
    for n in [0usize, 1, 7, 50, 51, 52, 250, 499] {
        let bytes = stream[n].redundancy.clone().expect("redundancy present");
        let full = parse_payload(&bytes, &codec, None).expect("parses");
        let (first, frames) = decode_payload(&full, &codec).expect("decodes");

        let mut mutated = stream.clone();
        for (i, p) in mutated.iter_mut().enumerate() {
            if i != n {
                if let Some(b) = p.redundancy.as_mut() {
                    rng.fill(&mut b[..]);
                }
                rng.fill(&mut p.primary[..]);
            }
        }
        let again = parse_payload(mutated[n].redundancy.as_ref().unwrap(), &codec, None).expect("parses");
        let redecoded = decode_payload(&again, &codec).expect("decodes");
        mutation_diffs += usize::from(again != full || redecoded != (first, frames.clone()));

        let end = first as usize + frames.len();
        for k in 1..=full.latent_symbols.len() {
            let part = parse_payload(&bytes, &codec, Some(k)).expect("prefix parses");
            let (pf, pframes) = decode_payload(&part, &codec).expect("prefix decodes");
            let off = pf as usize - first as usize;
            let same = part.latent_symbols[..] == full.latent_symbols[..k]
                && pf as usize + pframes.len() == end
                && pframes.frames() == &frames.frames()[off..];
            prefix_diffs += usize::from(!same);
        }
    }
    check(
        mutation_diffs == 0 && prefix_diffs == 0,
        format!("{mutation_diffs} payloads changed under mutation, {prefix_diffs} prefix decodes differ"),
    )
}

fn loss_statistics() -> Outcome {
    let trace = gen_loss_trace(0.184, 5.0, 1_000_000, 7).expect("trace");
    let (loss, burst) = (trace.loss_rate(), trace.mean_burst());
    check(
        (loss - 0.184).abs() <= 0.003 && (burst - 5.0).abs() <= 0.1,
        format!("loss rate {loss:.4}, mean burst {burst:.3}"),
    )
}

fn on_demand(table: &QuantizerTable) -> Outcome {
    let codec = default_codec(table);
    let stream = stream_10s(&codec, 23);
    let mut mismatches = 0;
    for seed in 0..100u64 {
        let trace = gen_loss_trace(0.05 + 0.004 * seed as f64, 1.0 + (seed % 9) as f64, PACKETS_10S, seed).expect("trace");
        let gaps = (1..trace.len()).filter(|&n| trace.arrived[n] && !trace.arrived[n - 1]).count();
        let report = simulate(&stream, &trace, &codec, None).expect("simulate");
        mismatches += usize::from(report.decoder_invocations != gaps);
    }
    let lossless = simulate(&stream, &LossTrace::lossless(PACKETS_10S), &codec, None).expect("simulate");
    check(
        mismatches == 0 && lossless.decoder_invocations == 0,
        format!("{mismatches} of 100 traces with invocations != gaps; {} invocations lossless", lossless.decoder_invocations),
    )
}

fn budget_shape(table: &QuantizerTable) -> Outcome {
    let mut codec = PayloadCodec::new(table.clone()).expect("codec");
    let mut cfg = RunConfig::new();
    cfg.set("schedule", "shaped");
    let id = register_schedule(&cfg, &mut codec).expect("shaped schedule");
    let probe = synthetic_corpus(1234, 5, 1000).expect("probe");
    let budget = payload_bit_budget(&codec, id, &probe).expect("budget");
    let ages = codec.schedule(id).expect("registered").lambda_index_by_age().to_vec();
    check(
        budget.mean_bits <= 800.0,
        format!(
            "{:.1} bits/packet mean ({:.1} kb/s), max {} bits; λ index by age {:?}",
            budget.mean_bits,
            budget.redundancy_bps / 1000.0,
            budget.max_bits,
            ages
        ),
    )
}

#[test]
fn acceptance() {
    let mut table = None;
    let mut failed = Vec::new();
    let mut run = |n: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let o = f();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {n} {verdict} [{name}] {} ({:.1} s)", o.detail, t.elapsed().as_secs_f64());
        if !o.pass {
            failed.push(n);
        }
    };
    run(1, "laplace math", &mut laplace_math);
    run(2, "gradient check", &mut gradients);
    run(3, "entropy coder", &mut entropy_coder);
    run(4, "rd training", &mut || rd_training(&mut table));
    let table = table.expect("trained table");
    run(5, "burst coverage", &mut || burst_coverage(&table));
    run(6, "self-containment and prefixes", &mut || self_containment(&table));
    run(7, "loss statistics", &mut loss_statistics);
    run(8, "on-demand decoding", &mut || on_demand(&table));
    run(9, "budget shape", &mut || budget_shape(&table));
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
