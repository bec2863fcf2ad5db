use dred::laplace::{discrete_pmf, rate_bits, scale_quantize, soft_deadzone, symbol_bits, theta_implicit, unscale};

fn main() {
    let r = 0.6;
    let theta = theta_implicit(r);
    println!("r = {r}, implicit theta = {theta:.6}");
    for k in 0..4 {
        println!("P({k}) = {:.6}  -log2 P = {:.4}  rate_bits = {:.4}", discrete_pmf(k, r, theta), symbol_bits(k, r, theta), rate_bits(k as f64, r));
    }

    let (q, delta) = (2.5, 0.3);
    for z in [-1.3, -0.1, 0.15, 0.7, 2.2] {
        let k = scale_quantize(z, q, delta);
        println!("z {z:+.2} -> zeta {:+.3} -> symbol {k:+} -> {:+.3}", soft_deadzone(q * z, delta), unscale(k, q));
    }
}
