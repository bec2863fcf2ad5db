use dred::codec::{encode_stream, QuantizerTable, NUM_LAMBDAS};
use dred::features::gen_synthetic_features;
use dred::framer::{build_payload, decode_payload, default_schedule, parse_payload, PayloadCodec};

fn main() -> dred::Result<()> {
    // Untrained table: finer scales at low λ index.
    let mut table = QuantizerTable::uniform(7, 2, 1.0, 0.2);
    for l in 0..NUM_LAMBDAS {
        for d in table.latent_row_mut(l) {
            d.scale = 3.0 * 0.8f32.powi(l as i32);
        }
    }
    let mut codec = PayloadCodec::new(table)?;
    codec.register(0, default_schedule(1.04)?);

    let features = gen_synthetic_features(1, 400)?;
    let (latents, states) = encode_stream(&features, codec.transform())?;
    let payload = build_payload(&latents, &states, &codec, 0, 150)?;
    println!("payload for frame 150: {} bytes, {} latents, parity {}", payload.bytes.len(), payload.latent_symbols.len(), payload.parity());

    let parsed = parse_payload(&payload.bytes, &codec, None)?;
    let (first, frames) = decode_payload(&parsed, &codec)?;
    println!("full decode: feature frames {first}..{}", first + frames.len() as u64);

    let newest_only = parse_payload(&payload.bytes, &codec, Some(3))?;
    let (first, frames) = decode_payload(&newest_only, &codec)?;
    println!("first 3 latents: feature frames {first}..{}", first + frames.len() as u64);

    let cut = parse_payload(&payload.bytes[..payload.bytes.len() / 2], &codec, None)?;
    println!("half the bytes: {} of {} latents", cut.latent_symbols.len(), cut.expected_latents);
    Ok(())
}
