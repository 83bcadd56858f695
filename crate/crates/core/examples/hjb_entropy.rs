//! Entropy-regularized HJB on a 1-D state: value table, residual and the
//! softmax feedback it induces.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use pege::hjb::{entropy_policy, hjb_residual, solve_hjb_entropy, HjbOptions};
use pege::model::{EntropyCost, LinearCoefficient, ParamTheta, TerminalCost};

fn main() -> pege::Result<()> {
    let theta = ParamTheta::new(
        DMatrix::from_element(1, 1, -0.5),
        DMatrix::from_row_slice(1, 2, &[1.0, -1.0]),
    )?;
    let cost = EntropyCost {
        fbar0: LinearCoefficient::Affine {
            c: DVector::from_vec(vec![0.0, 0.2]),
            k: DMatrix::from_row_slice(2, 1, &[0.5, -0.5]),
        },
        terminal: TerminalCost::Quadratic(DMatrix::identity(1, 1)),
    };
    let opts = HjbOptions::default();
    let sol = Arc::new(solve_hjb_entropy(&cost, &theta, &opts.time_grid(1.0)?, &opts)?);
    let mid = sol.n_x() / 2;
    println!("V(0, 0) = {:.6}", sol.value(0, mid));
    println!("residual on |x| ≤ 1: {:.3e}", hjb_residual(&sol, &cost, &theta, 1.0)?);
    let pol = entropy_policy(&sol, &theta, &cost)?;
    for x in [-1.0, 0.0, 1.0] {
        let a = pol.act(0.0, &DVector::from_element(1, x));
        println!("ψ(0, {x:+.1}) = [{:.4}, {:.4}]", a[0], a[1]);
    }
    Ok(())
}
