//! Estimation error under pure exploration, scaled by `sqrt(ln m / m)`.

use pege::experiment::{concentration_scan, ExperimentConfig};

fn main() -> pege::Result<()> {
    let cfg =
        ExperimentConfig::load(concat!(env!("CARGO_MANIFEST_DIR"), "/configs/concentration.json"))?.with_seed_count(20);
    let res = concentration_scan(&cfg)?;
    for p in &res.points {
        println!(
            "m = {:4}  ratio = {:.3}  λ_min = {:.1}",
            p.m, p.median_ratio, p.median_lambda_min
        );
    }
    println!(
        "λ_min growth per episode {:.3}, information value {:.3}",
        res.lambda_slope, res.information_value
    );
    Ok(())
}
