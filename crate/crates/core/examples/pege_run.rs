//! One learning run on the LQ example with its regret decomposition.

use pege::experiment::ExperimentConfig;
use pege::pege::{evaluate_ledger, regret_decompose, run_pege};

fn main() -> pege::Result<()> {
    let mut cfg = ExperimentConfig::load(concat!(env!("CARGO_MANIFEST_DIR"), "/configs/pege_run.json"))?;
    cfg.n_episodes = 40;
    let pc = cfg.pege_config(1)?;
    let mut ledger = run_pege(&pc)?;
    evaluate_ledger(&pc, &mut ledger, 400)?;
    println!("V* = {:.4}", ledger.v_star.baseline());
    println!("exploration episodes: {:?}", ledger.exploration_indices());
    let d = regret_decompose(&ledger)?;
    println!(
        "R(N) = {:.3}  noise = {:.3}  exploration = {:.3}  exploitation = {:.3}",
        d.regret, d.noise, d.exploration, d.exploitation
    );
    let last = ledger.records.last().unwrap();
    println!("final θ̃ = {:.3?}", last.theta_tilde.as_slice());
    ledger.write_csv(std::io::stdout().lock())?;
    Ok(())
}
