//! Euler–Maruyama episodes of `dX = (A X + B ψ(t, X)) dt + dW`.
//!
//! Only the observed state path and the regressor `Z = (X; ψ(t, X))` leave
//! this module; the Brownian increments stay inside [`NoiseStream`].

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::model::{CostSpec, ParamTheta};
use crate::policy::Policy;

/// States with a coordinate beyond this magnitude abort the episode.
pub const BLOWUP_BOUND: f64 = 1e8;

/// Uniform discretization of `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if !(horizon >= 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "horizon must be finite and >= 0, got {horizon}"
            )));
        }
        if n_steps == 0 {
            return Err(Error::InvalidArgument("n_steps must be positive".into()));
        }
        Ok(Self { horizon, n_steps })
    }

    /// Grid with the default step `dt = 1e-3 T`.
    pub fn with_default_step(horizon: f64) -> Result<Self> {
        Self::new(horizon, 1000)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    /// `t_k = T k / n`, so that `t_n = T` exactly.
    #[inline]
    pub fn time(&self, k: usize) -> f64 {
        if k == self.n_steps {
            self.horizon
        } else {
            self.horizon * k as f64 / self.n_steps as f64
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|k| self.time(k)).collect()
    }

    /// Index of the grid node nearest to `t` (clamped to the grid).
    #[inline]
    pub fn nearest(&self, t: f64) -> usize {
        if self.horizon == 0.0 {
            return 0;
        }
        let k = (t / self.horizon * self.n_steps as f64).round();
        if k <= 0.0 {
            0
        } else {
            (k as usize).min(self.n_steps)
        }
    }
}

/// Gaussian noise source for one episode, `stream(base_seed, episode_index)`.
///
/// ChaCha's 64-bit stream id keeps episode streams disjoint for a shared seed.
pub struct NoiseStream {
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn new(base_seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
        rng.set_stream(stream);
        Self { rng }
    }

    #[inline]
    fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }
}

/// Observed path of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    grid: TimeGrid,
    times: Vec<f64>,
    x_path: DMatrix<f64>,
    z_path: DMatrix<f64>,
}

impl Trajectory {
    /// Assemble a trajectory from raw paths (used for synthetic inputs).
    pub fn from_paths(grid: TimeGrid, x_path: DMatrix<f64>, z_path: DMatrix<f64>) -> Result<Self> {
        let rows = grid.n_steps() + 1;
        if x_path.nrows() != rows || z_path.nrows() != rows {
            return Err(dim_err(
                "Trajectory rows",
                rows,
                format!("{}/{}", x_path.nrows(), z_path.nrows()),
            ));
        }
        if z_path.ncols() <= x_path.ncols() {
            return Err(dim_err(
                "Trajectory z columns",
                format!(">{}", x_path.ncols()),
                z_path.ncols(),
            ));
        }
        Ok(Self {
            grid,
            times: grid.times(),
            x_path,
            z_path,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// `(n_steps+1) × d` observed states.
    pub fn x_path(&self) -> &DMatrix<f64> {
        &self.x_path
    }

    /// `(n_steps+1) × (d+p)` regressor rows `(X_k; ψ(t_k, X_k))`.
    pub fn z_path(&self) -> &DMatrix<f64> {
        &self.z_path
    }

    pub fn state_dim(&self) -> usize {
        self.x_path.ncols()
    }

    pub fn action_dim(&self) -> usize {
        self.z_path.ncols() - self.x_path.ncols()
    }

    pub fn terminal_state(&self) -> DVector<f64> {
        self.x_path.row(self.grid.n_steps()).transpose()
    }

    /// Write `t,x_1..x_d,z_1..z_{d+p}` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let d = self.state_dim();
        let dz = self.z_path.ncols();
        let mut header = vec!["t".to_string()];
        header.extend((1..=d).map(|i| format!("x_{i}")));
        header.extend((1..=dz).map(|i| format!("z_{i}")));
        w.write_record(&header)?;
        for (k, t) in self.times.iter().enumerate() {
            let mut rec = vec![t.to_string()];
            rec.extend((0..d).map(|j| self.x_path[(k, j)].to_string()));
            rec.extend((0..dz).map(|j| self.z_path[(k, j)].to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Realized episode cost; `valid == false` iff the value is `+∞`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeCost {
    pub value: f64,
    pub valid: bool,
}

impl EpisodeCost {
    fn from_value(value: f64) -> Self {
        Self {
            value,
            valid: !(value.is_infinite() && value > 0.0),
        }
    }
}

/// Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl McEstimate {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let se = if n > 1 {
            let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, se, n }
    }
}

fn check_dims(theta: &ParamTheta, policy: &Policy, x0: &DVector<f64>) -> Result<()> {
    if policy.action_dim() != theta.action_dim() {
        return Err(dim_err(
            "policy action dim vs B columns",
            theta.action_dim(),
            policy.action_dim(),
        ));
    }
    if x0.len() != theta.state_dim() {
        return Err(dim_err("x0", theta.state_dim(), x0.len()));
    }
    if let Some(d) = policy.state_dim() {
        if d != theta.state_dim() {
            return Err(dim_err("policy state dim", theta.state_dim(), d));
        }
    }
    Ok(())
}

/// Shared Euler–Maruyama loop. `visit(k, t_k, x_k, a_k)` is called for
/// `k = 0..=n`; the state update uses the left endpoint.
fn integrate<F>(
    theta: &ParamTheta,
    policy: &Policy,
    grid: &TimeGrid,
    x0: &[f64],
    mut noise: Option<&mut NoiseStream>,
    mut visit: F,
) -> Result<()>
where
    F: FnMut(usize, f64, &[f64], &[f64]),
{
    let d = theta.state_dim();
    let p = theta.action_dim();
    let a_mat = theta.a().as_slice();
    let b_mat = theta.b().as_slice();
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let mut x = x0.to_vec();
    let mut next = vec![0.0; d];
    let mut act = vec![0.0; p];
    let n = grid.n_steps();
    for k in 0..n {
        let t = grid.time(k);
        policy.act_into(t, &x, &mut act);
        visit(k, t, &x, &act);
        for i in 0..d {
            let mut drift = 0.0;
            for j in 0..d {
                drift += a_mat[i + j * d] * x[j];
            }
            for j in 0..p {
                drift += b_mat[i + j * d] * act[j];
            }
            let dw = match noise.as_deref_mut() {
                Some(s) => sqrt_dt * s.standard_normal(),
                None => 0.0,
            };
            next[i] = x[i] + drift * dt + dw;
        }
        std::mem::swap(&mut x, &mut next);
        let norm = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !(norm <= BLOWUP_BOUND) {
            return Err(Error::SimulationBlowup { step: k + 1, norm });
        }
    }
    let t = grid.time(n);
    policy.act_into(t, &x, &mut act);
    visit(n, t, &x, &act);
    Ok(())
}

/// Simulate one episode and record the observed path.
pub fn simulate_episode(
    theta: &ParamTheta,
    policy: &Policy,
    grid: &TimeGrid,
    x0: &DVector<f64>,
    noise: Option<&mut NoiseStream>,
) -> Result<Trajectory> {
    check_dims(theta, policy, x0)?;
    let d = theta.state_dim();
    let p = theta.action_dim();
    let rows = grid.n_steps() + 1;
    let mut x_path = DMatrix::zeros(rows, d);
    let mut z_path = DMatrix::zeros(rows, d + p);
    integrate(theta, policy, grid, x0.as_slice(), noise, |k, _t, x, a| {
        for (j, v) in x.iter().enumerate() {
            x_path[(k, j)] = *v;
            z_path[(k, j)] = *v;
        }
        for (j, v) in a.iter().enumerate() {
            z_path[(k, d + j)] = *v;
        }
    })?;
    Ok(Trajectory {
        grid: *grid,
        times: grid.times(),
        x_path,
        z_path,
    })
}

/// Left-endpoint quadrature of the running cost plus the terminal cost.
///
/// The action at each node is read from the recorded regressor, which by
/// construction equals `policy(t_k, X_k)`.
pub fn episode_cost(traj: &Trajectory, spec: &CostSpec, policy: &Policy) -> Result<EpisodeCost> {
    if policy.action_dim() != traj.action_dim() {
        return Err(dim_err("episode_cost policy", traj.action_dim(), policy.action_dim()));
    }
    if let Some(p) = spec.action_dim() {
        if p != traj.action_dim() {
            return Err(dim_err("episode_cost spec", p, traj.action_dim()));
        }
    }
    let d = traj.state_dim();
    let p = traj.action_dim();
    let dt = traj.grid.dt();
    let n = traj.grid.n_steps();
    let mut x = vec![0.0; d];
    let mut a = vec![0.0; p];
    let mut total = 0.0;
    for k in 0..n {
        for j in 0..d {
            x[j] = traj.z_path[(k, j)];
        }
        for j in 0..p {
            a[j] = traj.z_path[(k, d + j)];
        }
        let f = spec.running(traj.times[k], &x, &a);
        if f.is_infinite() && f > 0.0 {
            return Ok(EpisodeCost::from_value(f64::INFINITY));
        }
        total += f * dt;
    }
    for j in 0..d {
        x[j] = traj.x_path[(n, j)];
    }
    Ok(EpisodeCost::from_value(total + spec.terminal(&x)))
}

/// Episode cost without materializing the trajectory.
pub(crate) fn simulate_cost(
    theta: &ParamTheta,
    policy: &Policy,
    spec: &CostSpec,
    grid: &TimeGrid,
    x0: &DVector<f64>,
    noise: &mut NoiseStream,
) -> Result<EpisodeCost> {
    let dt = grid.dt();
    let n = grid.n_steps();
    let mut total = 0.0;
    let mut infinite = false;
    integrate(theta, policy, grid, x0.as_slice(), Some(noise), |k, t, x, a| {
        if k < n {
            let f = spec.running(t, x, a);
            if f.is_infinite() && f > 0.0 {
                infinite = true;
            }
            total += f * dt;
        } else {
            total += spec.terminal(x);
        }
    })?;
    Ok(if infinite {
        EpisodeCost::from_value(f64::INFINITY)
    } else {
        EpisodeCost::from_value(total)
    })
}

fn collect_costs(costs: Vec<Result<EpisodeCost>>) -> Result<Vec<f64>> {
    let total = costs.len();
    let mut values = Vec::with_capacity(total);
    let mut bad = 0;
    for c in costs {
        let c = c?;
        if c.valid {
            values.push(c.value);
        } else {
            bad += 1;
        }
    }
    if bad > 0 {
        return Err(Error::InvalidCost { count: bad, total });
    }
    Ok(values)
}

/// Realized costs of `n` independent episodes on streams `0..n` of `seed`.
pub fn mc_cost_samples(
    theta: &ParamTheta,
    policy: &Policy,
    spec: &CostSpec,
    grid: &TimeGrid,
    x0: &DVector<f64>,
    n: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    check_dims(theta, policy, x0)?;
    let costs: Vec<_> = (0..n as u64)
        .into_par_iter()
        .map(|i| simulate_cost(theta, policy, spec, grid, x0, &mut NoiseStream::new(seed, i)))
        .collect();
    collect_costs(costs)
}

/// Monte Carlo estimate of `J(ψ; θ)` over streams `0..n_mc` of `seed`.
pub fn mc_policy_value(
    theta: &ParamTheta,
    policy: &Policy,
    spec: &CostSpec,
    grid: &TimeGrid,
    x0: &DVector<f64>,
    n_mc: usize,
    seed: u64,
) -> Result<McEstimate> {
    if n_mc < 2 {
        return Err(Error::InvalidArgument("n_mc must be at least 2".into()));
    }
    Ok(McEstimate::from_samples(&mc_cost_samples(
        theta, policy, spec, grid, x0, n_mc, seed,
    )?))
}

/// Paired (common random numbers) estimate of `J(ψ_a; θ) − J(ψ_b; θ)`:
/// both policies see the same noise stream in every replication.
#[allow(clippy::too_many_arguments)]
pub fn mc_paired_difference(
    theta: &ParamTheta,
    policy_a: &Policy,
    policy_b: &Policy,
    spec: &CostSpec,
    grid: &TimeGrid,
    x0: &DVector<f64>,
    n_mc: usize,
    seed: u64,
) -> Result<McEstimate> {
    mc_contrast(theta, &[(policy_a, 1.0), (policy_b, -1.0)], spec, grid, x0, n_mc, seed)
}

/// Common-random-numbers estimate of `Σᵢ wᵢ J(ψᵢ; θ)`: every policy sees the
/// same noise stream in each replication.
pub fn mc_contrast(
    theta: &ParamTheta,
    terms: &[(&Policy, f64)],
    spec: &CostSpec,
    grid: &TimeGrid,
    x0: &DVector<f64>,
    n_mc: usize,
    seed: u64,
) -> Result<McEstimate> {
    if n_mc < 2 {
        return Err(Error::InvalidArgument("n_mc must be at least 2".into()));
    }
    for (p, _) in terms {
        check_dims(theta, p, x0)?;
    }
    let values: Vec<Result<EpisodeCost>> = (0..n_mc as u64)
        .into_par_iter()
        .map(|i| {
            let mut total = 0.0;
            for (p, w) in terms {
                let c = simulate_cost(theta, p, spec, grid, x0, &mut NoiseStream::new(seed, i))?;
                if !c.valid {
                    return Ok(EpisodeCost::from_value(f64::INFINITY));
                }
                total += w * c.value;
            }
            Ok(EpisodeCost::from_value(total))
        })
        .collect();
    Ok(McEstimate::from_samples(&collect_costs(values)?))
}
