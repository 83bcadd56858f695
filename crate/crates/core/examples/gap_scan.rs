//! Quadratic growth of the performance gap `J(ψ_θ') − V*` in `|θ' − θ|`.

use pege::experiment::{gap_scan, ExperimentConfig, GapSpec};

fn main() -> pege::Result<()> {
    let cfg = ExperimentConfig::load(concat!(env!("CARGO_MANIFEST_DIR"), "/configs/gap_scan_lq.json"))?;
    let spec = GapSpec {
        center: cfg.theta()?,
        radii: vec![0.1, 0.2, 0.4],
        directions: GapSpec::random_directions(1, 3, 3, 11),
        expected_exponent: 2.0,
        n_pairs: 2000,
        seed: 5,
        antithetic: true,
    };
    let res = gap_scan(&spec, &cfg.cost_spec()?, &cfg.grid()?, &cfg.x0_vec(), &cfg.hjb)?;
    for p in &res.points {
        println!("r = {:.2}  gap = {:.5} ± {:.5}", p.radius, p.mean_gap, p.se);
    }
    println!("log-log slope: {:?}", res.slope);
    Ok(())
}
