//! Greedy-only learning never excites the second actuator, so its prior
//! entry is never corrected; periodic exploration fixes that.

use pege::experiment::ExperimentConfig;
use pege::pege::run_pege;

fn main() -> pege::Result<()> {
    let cfg = ExperimentConfig::load(concat!(env!("CARGO_MANIFEST_DIR"), "/configs/incomplete_demo.json"))?;
    for greedy_only in [true, false] {
        let mut c = cfg.clone();
        c.greedy_only = greedy_only;
        c.n_episodes = 1024;
        let ledger = run_pege(&c.pege_config(1)?)?;
        let last = ledger.records.last().unwrap();
        println!(
            "{:12}  R(1024) = {:8.3}  final θ̂ = {:.3?}",
            if greedy_only { "greedy-only" } else { "PEGE" },
            ledger.regret(),
            last.theta_hat.as_slice()
        );
    }
    Ok(())
}
