use dred::features::{gen_synthetic_features, read_features, write_features};

fn main() -> dred::Result<()> {
    let seq = gen_synthetic_features(42, 400)?;
    let path = std::env::temp_dir().join("dred-example.feat");
    write_features(&path, &seq)?;
    let back = read_features(&path)?;
    assert_eq!(back, seq);

    println!("{} frames, {} ms, {} bytes", seq.len(), seq.duration_ms(), seq.to_bytes().len());
    for f in &seq.frames()[..5] {
        println!("c0 {:+.3}  c1 {:+.3}  pitch {:.3}  voicing {:+.2}", f.cepstrum[0], f.cepstrum[1], f.pitch, f.voicing);
    }
    Ok(())
}
