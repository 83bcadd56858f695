//! Matrix-normal posterior after a handful of exploration episodes.

use nalgebra::{DMatrix, DVector};
use pege::estimator::{init_stats, map_estimate, min_eigen, update_stats};
use pege::model::ParamTheta;
use pege::policy::{make_exploration_policy, ExplorationSpec};
use pege::sde::{simulate_episode, NoiseStream, TimeGrid};

fn main() -> pege::Result<()> {
    let theta = ParamTheta::new(
        DMatrix::from_element(1, 1, -0.3),
        DMatrix::from_row_slice(1, 2, &[1.0, 0.7]),
    )?;
    let explore = make_exploration_policy(&ExplorationSpec::uniform(vec![vec![1.0, 0.0], vec![0.0, 1.0]], 1.0))?;
    let grid = TimeGrid::new(1.0, 1000)?;
    let mut stats = init_stats(&DMatrix::zeros(1, 3), &DMatrix::identity(3, 3))?;
    for m in 1..=40u64 {
        let traj = simulate_episode(
            &theta,
            &explore,
            &grid,
            &DVector::zeros(1),
            Some(&mut NoiseStream::new(7, m)),
        )?;
        stats = update_stats(&stats, &traj)?;
        if m.is_power_of_two() {
            let est = map_estimate(&stats)?;
            println!(
                "m = {m:2}  θ̂ = [{:+.3}, {:+.3}, {:+.3}]  λ_min = {:.2}  error = {:.3}",
                est[(0, 0)],
                est[(0, 1)],
                est[(0, 2)],
                min_eigen(&stats),
                (&est - theta.stacked()).norm()
            );
        }
    }
    Ok(())
}
