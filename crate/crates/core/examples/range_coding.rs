use dred::laplace::{symbol_bits, theta_implicit, truncated_pmf, MAX_SYMBOL};
use dred::range_coder::{decode_symbols, encode_symbols, SymbolModel};
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> dred::Result<()> {
    let r = 0.6;
    let theta = theta_implicit(r);
    let model = SymbolModel::from_r_theta(r, theta);

    let pmf = truncated_pmf(r, theta);
    let dist = WeightedIndex::new(&pmf).expect("valid pmf");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let symbols: Vec<i32> = (0..20_000).map(|_| dist.sample(&mut rng) as i32 - MAX_SYMBOL).collect();

    let coded = encode_symbols(&symbols, std::slice::from_ref(&model))?;
    let back = decode_symbols(&coded, std::slice::from_ref(&model), symbols.len())?;
    assert_eq!(back, symbols);

    let entropy: f64 = pmf.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.log2()).sum();
    let ideal: f64 = symbols.iter().map(|&k| symbol_bits(k, r, theta)).sum();
    println!("{} symbols: {} bytes", symbols.len(), coded.bytes.len());
    println!(
        "coded {:.4} bits/symbol, sample code length {:.4}, model entropy {:.4}",
        8.0 * coded.bytes.len() as f64 / symbols.len() as f64,
        ideal / symbols.len() as f64,
        entropy
    );
    Ok(())
}
