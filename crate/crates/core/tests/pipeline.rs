use dred::codec::{QuantizerTable, NUM_LAMBDAS};
use dred::features::gen_synthetic_features;
use dred::framer::{
    build_stream, decode_payload, default_schedule, parse_payload, read_packets_jsonl, write_packets_jsonl, PayloadCodec,
};
use dred::netsim::{gen_loss_trace, simulate, LossTrace};
use dred::trainer::distortion;

fn codec() -> PayloadCodec {
    let mut table = QuantizerTable::uniform(7, 2, 1.0, 0.2);
    for l in 0..NUM_LAMBDAS {
        for d in table.latent_row_mut(l) {
            d.scale = 4.0 * 0.8f32.powi(l as i32);
        }
        for d in table.state_row_mut(l) {
            d.scale = 8.0;
        }
    }
    let mut codec = PayloadCodec::new(table).unwrap();
    codec.register(0, default_schedule(1.04).unwrap());
    codec
}

fn varint_len(mut v: u64) -> usize {
    let mut n = 1;
    while v >= 0x80 {
        v >>= 7;
        n += 1;
    }
    n
}

#[test]
fn features_to_packets_to_recovered_features() {
    let codec = codec();
    let features = gen_synthetic_features(3, 600).unwrap();
    let stream = build_stream(&features, &codec, 0, 40).unwrap();
    assert_eq!(stream.len(), 300);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("stream.jsonl");
    write_packets_jsonl(&path, &stream).unwrap();
    let back = read_packets_jsonl(&path).unwrap();
    assert_eq!(back, stream);

    let report = simulate(&back, &LossTrace::single_burst(300, 120, 30), &codec, Some(&features)).unwrap();
    assert_eq!(report.frames_unrecovered, 0);
    assert_eq!(report.frames_recovered_redundancy, 60);
    assert_eq!(report.decoder_invocations, 1);
    let d = report.recovered_distortion.unwrap();
    assert!(d.is_finite() && d < 20.0, "recovered distortion {d}");
}

#[test]
fn newer_latents_decode_closer_to_the_truth() {
    let codec = codec();
    let features = gen_synthetic_features(4, 600).unwrap();
    let stream = build_stream(&features, &codec, 0, 40).unwrap();
    let (mut newest, mut oldest) = (0.0, 0.0);
    for n in (100..290).step_by(10) {
        let p = parse_payload(stream[n].redundancy.as_ref().unwrap(), &codec, None).unwrap();
        let (first, out) = decode_payload(&p, &codec).unwrap();
        let first = first as usize;
        let end = first + out.len();
        newest += distortion(&features.slice(end - 4, end), &out.slice(out.len() - 4, out.len())).unwrap();
        oldest += distortion(&features.slice(first, first + 4), &out.slice(0, 4)).unwrap();
    }
    assert!(newest < oldest, "newest {newest} vs oldest {oldest}");
}

#[test]
fn payload_size_is_header_plus_model_code_length() {
    let codec = codec();
    let features = gen_synthetic_features(5, 400).unwrap();
    let stream = build_stream(&features, &codec, 0, 40).unwrap();
    let schedule = codec.schedule(0).unwrap();
    let ages = schedule.lambda_index_by_age();
    for (n, packet) in stream.iter().enumerate().skip(1).step_by(7) {
        let bytes = packet.redundancy.as_ref().unwrap();
        let p = parse_payload(bytes, &codec, None).unwrap();
        let state_models = codec.table().state_models(schedule.is_lambda());
        let mut cost: f64 = p.is_symbols.iter().zip(&state_models).map(|(&s, m)| m.cost_bits(s)).sum();
        for (j, symbols) in p.latent_symbols.iter().enumerate() {
            let models = codec.table().latent_models(ages[j] as usize);
            cost += symbols.iter().zip(&models).map(|(&s, m)| m.cost_bits(s)).sum::<f64>();
        }
        let header = 2 + varint_len((n as u64) << 1 | (n as u64 & 1));
        let coded = 8.0 * (bytes.len() - header) as f64;
        // 32-bit flush on top of the ideal code length, within a byte
        assert!((coded - cost - 32.0).abs() <= 8.0 + 1e-6, "packet {n}: coded {coded}, model {cost}");
    }
}

#[test]
fn unrecovered_frames_grow_with_loss_rate_on_average() {
    let codec = codec();
    let features = gen_synthetic_features(6, 1000).unwrap();
    let stream = build_stream(&features, &codec, 0, 40).unwrap();
    let rates = [0.05, 0.15, 0.3, 0.45];
    let seeds = 24;
    let mut mean_lost = vec![0.0; rates.len()];
    for (i, &rate) in rates.iter().enumerate() {
        for seed in 0..seeds {
            let trace = gen_loss_trace(rate, 40.0, stream.len(), seed).unwrap();
            mean_lost[i] += simulate(&stream, &trace, &codec, None).unwrap().frames_unrecovered as f64 / seeds as f64;
        }
    }
    assert!(mean_lost.windows(2).all(|w| w[1] >= w[0]), "{mean_lost:?}");
    assert!(mean_lost[rates.len() - 1] > mean_lost[0]);
}
