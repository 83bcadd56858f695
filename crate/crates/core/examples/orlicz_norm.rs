//! Empirical ψ₂ norm of a standard normal sample against `sqrt(8/3)`.

use pege::diagnostics::estimate_orlicz_norm;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() -> pege::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for n in [1_000, 10_000, 100_000, 1_000_000] {
        let xs: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let est = estimate_orlicz_norm(&xs, 2)?;
        println!("n = {n:7}  K̂ = {:.4}", est.k_hat);
    }
    println!("exact     {:.4}", (8.0f64 / 3.0).sqrt());
    Ok(())
}
