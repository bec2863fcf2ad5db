use dred::codec::QuantizerTable;
use dred::features::gen_synthetic_features;
use dred::framer::{build_stream, default_schedule, PayloadCodec};
use dred::netsim::{gen_loss_trace, simulate, sweep, LossTrace};

fn main() -> dred::Result<()> {
    let mut codec = PayloadCodec::new(QuantizerTable::uniform(7, 2, 1.5, 0.2))?;
    codec.register(0, default_schedule(1.04)?);
    let features = gen_synthetic_features(9, 1000)?;
    let stream = build_stream(&features, &codec, 0, 40)?;

    for burst in [10, 51, 52, 53] {
        let r = simulate(&stream, &LossTrace::single_burst(stream.len(), 200, burst), &codec, None)?;
        println!("burst {burst:>2}: recovered {:>3}, unrecovered {}", r.frames_recovered_redundancy, r.frames_unrecovered);
    }

    let trace = gen_loss_trace(0.184, 5.0, 100_000, 1)?;
    println!("gilbert trace: loss {:.4}, mean burst {:.3}", trace.loss_rate(), trace.mean_burst());

    for p in sweep(&stream, &codec, &[0.0, 0.1, 0.2, 0.4], 5.0, 3, Some(&features))? {
        let r = &p.report;
        println!(
            "loss {:.1}: primary {:>3} redundancy {:>3} lost {:>3} decodes {:>2} distortion {:?}",
            p.trace_loss_rate, r.frames_recovered_primary, r.frames_recovered_redundancy, r.frames_unrecovered, r.decoder_invocations, r.recovered_distortion
        );
    }
    Ok(())
}
