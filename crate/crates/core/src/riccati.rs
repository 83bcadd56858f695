//! Finite-horizon LQ synthesis.
//!
//! Backward matrix Riccati ODE
//! `P' = P B R⁻¹ Bᵀ P − AᵀP − P A − Q`, `P_T = G`, together with the value
//! offset `q' = −tr(P)`, `q_T = 0`, integrated with classical RK4 on the
//! time grid. The optimal value from `x₀` is `x₀ᵀ P₀ x₀ + q₀` and the greedy
//! feedback is `ψ(t, x) = −R⁻¹ Bᵀ P_t x`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{dim_err, Error, Result};
use crate::model::{min_sym_eigenvalue, spectral_norm, ParamTheta, QuadraticCost};
use crate::policy::{Policy, PolicyKind};
use crate::sde::TimeGrid;

/// Riccati path on a time grid.
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    grid: TimeGrid,
    p: Vec<DMatrix<f64>>,
    q: Vec<f64>,
}

impl RiccatiSolution {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// `P_{t_k}` for every grid node.
    pub fn p_path(&self) -> &[DMatrix<f64>] {
        &self.p
    }

    /// `q_{t_k} = ∫_{t_k}^T tr(P_s) ds`.
    pub fn offset_path(&self) -> &[f64] {
        &self.q
    }

    pub fn p0(&self) -> &DMatrix<f64> {
        &self.p[0]
    }

    /// `x₀ᵀ P₀ x₀ + q₀`.
    pub fn value(&self, x0: &DVector<f64>) -> f64 {
        (x0.transpose() * &self.p[0] * x0)[(0, 0)] + self.q[0]
    }

    /// Rows `t,p_11..p_dd,q`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let d = self.p[0].nrows();
        let mut header = vec!["t".to_string()];
        for i in 1..=d {
            for j in 1..=d {
                header.push(format!("p_{i}{j}"));
            }
        }
        header.push("q".into());
        w.write_record(&header)?;
        for (k, (p, q)) in self.p.iter().zip(&self.q).enumerate() {
            let mut rec = vec![self.grid.time(k).to_string()];
            for i in 0..d {
                for j in 0..d {
                    rec.push(p[(i, j)].to_string());
                }
            }
            rec.push(q.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

struct RiccatiRhs {
    a: DMatrix<f64>,
    q: DMatrix<f64>,
    s: DMatrix<f64>,
}

impl RiccatiRhs {
    /// `(dP/dt, dq/dt)`.
    fn eval(&self, p: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
        let ap = self.a.transpose() * p;
        let dp = p * &self.s * p - &ap - ap.transpose() - &self.q;
        (dp, -p.trace())
    }
}

/// Integrate the Riccati equation backward from `P_T = G`.
pub fn solve_riccati(cost: &QuadraticCost, theta: &ParamTheta, grid: &TimeGrid) -> Result<RiccatiSolution> {
    let d = theta.state_dim();
    let p_dim = theta.action_dim();
    if cost.q().nrows() != d {
        return Err(dim_err("Riccati Q", d, cost.q().nrows()));
    }
    if cost.r().nrows() != p_dim {
        return Err(dim_err("Riccati R", p_dim, cost.r().nrows()));
    }
    let r_inv = cost
        .r()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("R".into()))?
        .inverse();
    let b = theta.b();
    let rhs = RiccatiRhs {
        a: theta.a().clone(),
        q: cost.q().clone(),
        s: b * &r_inv * b.transpose(),
    };
    let n = grid.n_steps();
    let h = grid.dt();
    let mut p = vec![DMatrix::zeros(d, d); n + 1];
    let mut q = vec![0.0; n + 1];
    p[n] = cost.g().clone();
    for k in (0..n).rev() {
        // Backward step of size h: integrate dY/ds = −F(Y) in s = T − t.
        let y = &p[k + 1];
        let (k1, l1) = rhs.eval(y);
        let (k2, l2) = rhs.eval(&(y - &k1 * (0.5 * h)));
        let (k3, l3) = rhs.eval(&(y - &k2 * (0.5 * h)));
        let (k4, l4) = rhs.eval(&(y - &k3 * h));
        let step = (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        let next = y - step;
        let next = (&next + next.transpose()) * 0.5;
        q[k] = q[k + 1] - (l1 + 2.0 * l2 + 2.0 * l3 + l4) * (h / 6.0);
        let min_eig = min_sym_eigenvalue(&next);
        if !min_eig.is_finite() || min_eig < -1e-8 {
            return Err(Error::RiccatiIndefinite {
                t: grid.time(k),
                min_eig,
            });
        }
        p[k] = next;
    }
    Ok(RiccatiSolution { grid: *grid, p, q })
}

/// `ψ(t, x) = −R⁻¹ Bᵀ P_t x` with `P_t` taken at the nearest grid node.
pub fn lq_policy(riccati: &RiccatiSolution, theta: &ParamTheta, cost: &QuadraticCost) -> Result<Policy> {
    let r_chol = cost
        .r()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("R".into()))?;
    let bt = theta.b().transpose();
    let gains: Vec<DMatrix<f64>> = riccati.p.iter().map(|p| r_chol.solve(&(&bt * p))).collect();
    let budget = gains.iter().map(spectral_norm).fold(0.0, f64::max);
    Ok(Policy::from_parts(
        PolicyKind::LqGreedy {
            grid: riccati.grid,
            gains,
        },
        theta.action_dim(),
        Some(theta.state_dim()),
        budget,
    ))
}
