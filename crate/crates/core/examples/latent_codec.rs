use dred::codec::{decode_packet_latents, encode_stream, quantize_is, quantize_latent, QuantizerTable, ReferenceTransform};
use dred::features::gen_synthetic_features;
use dred::trainer::distortion;

fn main() -> dred::Result<()> {
    let transform = ReferenceTransform::new(7)?;
    let features = gen_synthetic_features(5, 400)?;
    let (latents, states) = encode_stream(&features, &transform)?;
    println!("{} latents of {} values", latents.len(), latents[0].values.len());

    // Decode the 26 even-strided latents ending at step 199 at a few scales.
    let newest = 199;
    let truth = features.slice(2 * (newest + 1) - 104, 2 * (newest + 1));
    for scale in [8.0, 2.0, 0.5] {
        let table = QuantizerTable::uniform(7, 2, scale, 0.1);
        let zd: Vec<Vec<f64>> = (0..26).map(|j| quantize_latent(&latents[newest - 2 * j], &table, 0).dequantized).collect();
        let sd = quantize_is(&states[newest], &table, 0).dequantized;
        let out = decode_packet_latents(&zd, &sd, &transform)?;
        println!("scale {scale:>4}: {} frames, distortion {:.4}", out.len(), distortion(&truth, &out)?);
    }
    Ok(())
}
