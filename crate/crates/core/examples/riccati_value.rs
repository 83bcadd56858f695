//! Solve the LQ Riccati equation for the scalar two-actuator example and
//! compare against the closed form `p_t = 1 / (1 + 2 (T − t))`.

use nalgebra::{DMatrix, DVector};
use pege::model::{ParamTheta, QuadraticCost};
use pege::riccati::solve_riccati;
use pege::sde::TimeGrid;

fn main() -> pege::Result<()> {
    let theta = ParamTheta::new(DMatrix::zeros(1, 1), DMatrix::from_row_slice(1, 2, &[1.0, 1.0]))?;
    let cost = QuadraticCost::new(DMatrix::zeros(1, 1), DMatrix::identity(2, 2), DMatrix::identity(1, 1))?;
    let grid = TimeGrid::new(1.0, 1000)?;
    let sol = solve_riccati(&cost, &theta, &grid)?;
    for k in (0..=grid.n_steps()).step_by(250) {
        let t = grid.time(k);
        println!(
            "t = {t:.2}  p = {:.10}  exact = {:.10}",
            sol.p_path()[k][(0, 0)],
            1.0 / (1.0 + 2.0 * (1.0 - t))
        );
    }
    println!(
        "V*(x0 = 0) = {:.6}  (ln 3 / 2 = {:.6})",
        sol.value(&DVector::zeros(1)),
        3f64.ln() / 2.0
    );
    Ok(())
}
