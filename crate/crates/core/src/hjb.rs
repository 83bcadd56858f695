//! Explicit finite-difference solver for the scalar entropy-regularized HJB
//!
//! ```text
//! ∂_t V + ½ ∂_xx V + A x ∂_x V − h*(−Bᵀ ∂_x V − f̄₀(t, x)) = 0,   V(T, ·) = g
//! ```
//!
//! on `[0, T] × [−L, L]`, stepping backward in time. The diffusion term uses
//! the centered second difference, the transport term is upwinded on the
//! sign of `A x`, and the Hamiltonian sees the centered first difference.
//! At `±L` the second difference is copied from the neighbouring node and the
//! gradient is linearly extrapolated from the two nearest interior gradients.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{h_star, EntropyCost, LinearCoefficient, ParamTheta};
use crate::policy::{Policy, PolicyKind};
use crate::sde::TimeGrid;

use std::sync::Arc;

/// Stability factor: explicit steps require `dt ≤ CFL_FACTOR · dx²`.
pub const CFL_FACTOR: f64 = 0.4;

/// Spatial box and (optionally) the time resolution of the HJB grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HjbOptions {
    pub half_width: f64,
    pub n_x: usize,
    /// Time steps; `None` picks the coarsest grid that satisfies the CFL guard.
    #[serde(default)]
    pub n_t: Option<usize>,
}

impl Default for HjbOptions {
    fn default() -> Self {
        Self {
            half_width: 4.0,
            n_x: 201,
            n_t: None,
        }
    }
}

impl HjbOptions {
    pub fn dx(&self) -> f64 {
        2.0 * self.half_width / (self.n_x - 1) as f64
    }

    /// Time grid on `[0, horizon]` honoring the CFL guard unless `n_t` is set.
    pub fn time_grid(&self, horizon: f64) -> Result<TimeGrid> {
        let n_t = match self.n_t {
            Some(n) => n,
            None => {
                let limit = CFL_FACTOR * self.dx().powi(2);
                let mut n = ((horizon / limit).ceil() as usize).max(1);
                while horizon / n as f64 > limit {
                    n += 1;
                }
                n
            }
        };
        TimeGrid::new(horizon, n_t)
    }
}

/// Value table and its spatial gradient on the `(t, x)` grid.
#[derive(Debug, Clone)]
pub struct HjbSolution {
    grid: TimeGrid,
    half_width: f64,
    n_x: usize,
    dx: f64,
    /// Row-major `(n_t+1) × n_x`.
    v: Vec<f64>,
    dvdx: Vec<f64>,
}

impl HjbSolution {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn x(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.dx
    }

    pub fn x_grid(&self) -> Vec<f64> {
        (0..self.n_x).map(|i| self.x(i)).collect()
    }

    pub fn value(&self, k: usize, i: usize) -> f64 {
        self.v[k * self.n_x + i]
    }

    pub fn gradient(&self, k: usize, i: usize) -> f64 {
        self.dvdx[k * self.n_x + i]
    }

    /// `V` as a `(n_t+1) × n_x` matrix (time along rows).
    pub fn value_table(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.grid.n_steps() + 1, self.n_x, &self.v)
    }

    pub fn gradient_table(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.grid.n_steps() + 1, self.n_x, &self.dvdx)
    }

    #[inline]
    pub(crate) fn clamp_x(&self, x: f64) -> f64 {
        x.clamp(-self.half_width, self.half_width)
    }

    /// Bilinear interpolation of `∂_x V` in `(t, x)`, clamped to the grid box.
    #[inline]
    pub fn interpolate_dvdx(&self, t: f64, x: f64) -> f64 {
        let n_t = self.grid.n_steps();
        let horizon = self.grid.horizon();
        let (k0, wt) = if horizon > 0.0 {
            let s = (t / horizon).clamp(0.0, 1.0) * n_t as f64;
            let k0 = (s.floor() as usize).min(n_t.saturating_sub(1));
            (k0, s - k0 as f64)
        } else {
            (0, 0.0)
        };
        let s = (self.clamp_x(x) + self.half_width) / self.dx;
        let i0 = (s.floor() as usize).min(self.n_x - 2);
        let wx = s - i0 as f64;
        let at = |k: usize| {
            let row = &self.dvdx[k * self.n_x..(k + 1) * self.n_x];
            row[i0] * (1.0 - wx) + row[i0 + 1] * wx
        };
        if wt == 0.0 || n_t == 0 {
            at(k0)
        } else {
            at(k0) * (1.0 - wt) + at(k0 + 1) * wt
        }
    }

    /// Largest slope of `∂_x V` between adjacent nodes.
    pub fn max_gradient_slope(&self) -> f64 {
        let mut m = 0.0f64;
        for row in self.dvdx.chunks(self.n_x) {
            for w in row.windows(2) {
                m = m.max((w[1] - w[0]).abs() / self.dx);
            }
        }
        m
    }

    /// Rows `t,v_1..v_{n_x}` (values row-major over the space grid).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((0..self.n_x).map(|i| format!("x={}", self.x(i))));
        w.write_record(&header)?;
        for (k, row) in self.v.chunks(self.n_x).enumerate() {
            let mut rec = vec![self.grid.time(k).to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn scalar_params(theta: &ParamTheta) -> Result<(f64, Vec<f64>)> {
    if theta.state_dim() != 1 {
        return Err(Error::Unsupported(format!(
            "HJB solver handles d = 1 only (got d = {})",
            theta.state_dim()
        )));
    }
    let b = theta.b().row(0).iter().copied().collect();
    Ok((theta.a()[(0, 0)], b))
}

/// Centered gradient of one time level, linear extrapolation at the ends.
fn centered_gradient(v: &[f64], dx: f64, out: &mut [f64]) {
    let n = v.len();
    for i in 1..n - 1 {
        out[i] = (v[i + 1] - v[i - 1]) / (2.0 * dx);
    }
    out[0] = 2.0 * out[1] - out[2];
    out[n - 1] = 2.0 * out[n - 2] - out[n - 3];
}

/// Solve the scalar entropy HJB backward from `V(T, ·) = g`.
pub fn solve_hjb_entropy(
    cost: &EntropyCost,
    theta: &ParamTheta,
    grid: &TimeGrid,
    opts: &HjbOptions,
) -> Result<HjbSolution> {
    let (a, b) = scalar_params(theta)?;
    let p = b.len();
    if cost.fbar0.action_dim() != p {
        return Err(crate::error::dim_err("HJB f̄₀", p, cost.fbar0.action_dim()));
    }
    if !(opts.half_width > 0.0) {
        return Err(Error::InvalidArgument("half_width must be positive".into()));
    }
    if opts.n_x < 51 || opts.n_x % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "n_x must be odd and >= 51, got {}",
            opts.n_x
        )));
    }
    let dx = opts.dx();
    let dt = grid.dt();
    let limit = CFL_FACTOR * dx * dx;
    if dt > limit {
        return Err(Error::Cfl { dt, limit });
    }
    let n_x = opts.n_x;
    let n_t = grid.n_steps();
    let xs: Vec<f64> = (0..n_x).map(|i| -opts.half_width + i as f64 * dx).collect();

    let mut v = vec![0.0; (n_t + 1) * n_x];
    let mut dvdx = vec![0.0; (n_t + 1) * n_x];
    for (i, &x) in xs.iter().enumerate() {
        v[n_t * n_x + i] = cost.terminal.eval(&[x]);
    }

    let mut grad = vec![0.0; n_x];
    let mut second = vec![0.0; n_x];
    let mut fbar = vec![0.0; p];
    let mut z = vec![0.0; p];
    for k in (0..n_t).rev() {
        let t_next = grid.time(k + 1);
        let (head, tail) = v.split_at_mut((k + 1) * n_x);
        let cur = &tail[..n_x];
        let new = &mut head[k * n_x..];

        centered_gradient(cur, dx, &mut grad);
        dvdx[(k + 1) * n_x..(k + 2) * n_x].copy_from_slice(&grad);
        for i in 1..n_x - 1 {
            second[i] = (cur[i + 1] - 2.0 * cur[i] + cur[i - 1]) / (dx * dx);
        }
        second[0] = second[1];
        second[n_x - 1] = second[n_x - 2];

        for i in 0..n_x {
            let x = xs[i];
            let ax = a * x;
            let transport = if i == 0 || i == n_x - 1 {
                grad[i]
            } else if ax > 0.0 {
                (cur[i + 1] - cur[i]) / dx
            } else {
                (cur[i] - cur[i - 1]) / dx
            };
            cost.fbar0.eval_into(t_next, &[x], &mut fbar);
            for j in 0..p {
                z[j] = -b[j] * grad[i] - fbar[j];
            }
            new[i] = cur[i] + dt * (0.5 * second[i] + ax * transport - h_star(&z));
        }
        if new[..n_x].iter().any(|v| !v.is_finite()) {
            return Err(Error::HjbBlowup { step: k });
        }
    }
    let (first, _) = v.split_at(n_x);
    centered_gradient(first, dx, &mut grad);
    dvdx[..n_x].copy_from_slice(&grad);

    Ok(HjbSolution {
        grid: *grid,
        half_width: opts.half_width,
        n_x,
        dx,
        v,
        dvdx,
    })
}

/// Max-norm residual of the HJB equation on the computed table.
///
/// Uses second-order centered differences in both `t` and `x` (independent
/// of the upwinded marching stencil) over interior time levels and nodes with
/// `|x| ≤ window`.
pub fn hjb_residual(sol: &HjbSolution, cost: &EntropyCost, theta: &ParamTheta, window: f64) -> Result<f64> {
    let (a, b) = scalar_params(theta)?;
    let p = b.len();
    let n_t = sol.grid.n_steps();
    let n_x = sol.n_x;
    let dx = sol.dx;
    let dt = sol.grid.dt();
    let mut fbar = vec![0.0; p];
    let mut z = vec![0.0; p];
    let mut worst = 0.0f64;
    for k in 1..n_t {
        let t = sol.grid.time(k);
        for i in 1..n_x - 1 {
            let x = sol.x(i);
            if x.abs() > window {
                continue;
            }
            let vt = (sol.value(k + 1, i) - sol.value(k - 1, i)) / (2.0 * dt);
            let vx = (sol.value(k, i + 1) - sol.value(k, i - 1)) / (2.0 * dx);
            let vxx = (sol.value(k, i + 1) - 2.0 * sol.value(k, i) + sol.value(k, i - 1)) / (dx * dx);
            cost.fbar0.eval_into(t, &[x], &mut fbar);
            for j in 0..p {
                z[j] = -b[j] * vx - fbar[j];
            }
            let r = vt + 0.5 * vxx + a * x * vx - h_star(&z);
            worst = worst.max(r.abs());
        }
    }
    Ok(worst)
}

/// `ψ(t, x) = softmax(−B ∂_x V(t, x) − f̄₀(t, x))`, with `x` clamped to `[−L, L]`.
pub fn entropy_policy(hjb: &Arc<HjbSolution>, theta: &ParamTheta, cost: &EntropyCost) -> Result<Policy> {
    let (_, b) = scalar_params(theta)?;
    let b = DVector::from_vec(b);
    // softmax is ½-Lipschitz; |ψ(t, 0)| ≤ 1 on the simplex.
    let slope = 0.5 * (b.norm() * hjb.max_gradient_slope() + cost.fbar0.lipschitz());
    let budget = slope.max(1.0);
    let fbar0: LinearCoefficient = cost.fbar0.clone();
    Ok(Policy::from_parts(
        PolicyKind::EntropyGreedy {
            table: Arc::clone(hjb),
            b: b.clone(),
            fbar0,
        },
        b.len(),
        Some(1),
        budget,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TerminalCost;
    use std::f64::consts::LN_2;

    fn decoupled(p: usize, c: Vec<f64>) -> (EntropyCost, ParamTheta) {
        let cost = EntropyCost {
            fbar0: LinearCoefficient::Constant(DVector::from_vec(c)),
            terminal: TerminalCost::Zero,
        };
        (
            cost,
            ParamTheta::new(DMatrix::zeros(1, 1), DMatrix::zeros(1, p)).unwrap(),
        )
    }

    #[test]
    fn decoupled_value_is_affine_in_time() {
        let (cost, th) = decoupled(2, vec![0.0, 0.0]);
        let opts = HjbOptions::default();
        let grid = opts.time_grid(1.0).unwrap();
        let sol = solve_hjb_entropy(&cost, &th, &grid, &opts).unwrap();
        for i in 1..sol.n_x() - 1 {
            assert!((sol.value(0, i) + LN_2).abs() < 1e-4);
        }
    }

    #[test]
    fn heat_equation_quadratic() {
        let cost = EntropyCost {
            fbar0: LinearCoefficient::Constant(DVector::zeros(1)),
            terminal: TerminalCost::Quadratic(DMatrix::identity(1, 1)),
        };
        let th = ParamTheta::zeros(1, 1);
        let opts = HjbOptions::default();
        let grid = opts.time_grid(1.0).unwrap();
        let sol = solve_hjb_entropy(&cost, &th, &grid, &opts).unwrap();
        for k in [0, grid.n_steps() / 2] {
            let t = grid.time(k);
            for i in 0..sol.n_x() {
                let x = sol.x(i);
                assert!((sol.value(k, i) - (x * x + 1.0 - t)).abs() < 1e-3, "k={k} i={i}");
            }
        }
    }

    #[test]
    fn zero_horizon_is_terminal() {
        let cost = EntropyCost {
            fbar0: LinearCoefficient::Constant(DVector::from_vec(vec![0.3, -0.1])),
            terminal: TerminalCost::Quadratic(DMatrix::from_element(1, 1, 0.5)),
        };
        let th = ParamTheta::new(
            DMatrix::from_element(1, 1, 0.2),
            DMatrix::from_row_slice(1, 2, &[1.0, -1.0]),
        )
        .unwrap();
        let opts = HjbOptions::default();
        let grid = TimeGrid::new(0.0, 3).unwrap();
        let sol = solve_hjb_entropy(&cost, &th, &grid, &opts).unwrap();
        for i in 0..sol.n_x() {
            let x = sol.x(i);
            assert_eq!(sol.value(0, i), 0.5 * x * x);
        }
    }

    #[test]
    fn cfl_violation() {
        let (cost, th) = decoupled(2, vec![0.0, 0.0]);
        let opts = HjbOptions {
            half_width: 4.0,
            n_x: 201,
            n_t: None,
        };
        let err = solve_hjb_entropy(&cost, &th, &TimeGrid::new(1.0, 100).unwrap(), &opts).unwrap_err();
        assert!(matches!(err, Error::Cfl { .. }));
    }

    #[test]
    fn rejects_bad_grids() {
        let (cost, th) = decoupled(2, vec![0.0, 0.0]);
        let grid = TimeGrid::new(1.0, 100_000).unwrap();
        for n_x in [50, 52, 21] {
            let opts = HjbOptions {
                half_width: 1.0,
                n_x,
                n_t: None,
            };
            assert!(solve_hjb_entropy(&cost, &th, &grid, &opts).is_err());
        }
        let th2 = ParamTheta::zeros(2, 2);
        assert!(matches!(
            solve_hjb_entropy(&cost, &th2, &grid, &HjbOptions::default()),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn decoupled_policy_is_constant_softmax() {
        let (cost, th) = decoupled(2, vec![0.4, -0.4]);
        let opts = HjbOptions::default();
        let grid = opts.time_grid(0.5).unwrap();
        let sol = Arc::new(solve_hjb_entropy(&cost, &th, &grid, &opts).unwrap());
        let pol = entropy_policy(&sol, &th, &cost).unwrap();
        let expect = crate::model::grad_h_star(&[-0.4, 0.4]);
        for (t, x) in [(0.0, 0.0), (0.25, 1.3), (0.5, -9.0)] {
            let a = pol.act(t, &DVector::from_vec(vec![x]));
            assert!((a[0] - expect.as_slice()[0]).abs() < 1e-12);
            assert!((a.sum() - 1.0).abs() < 1e-12);
        }
    }
}
