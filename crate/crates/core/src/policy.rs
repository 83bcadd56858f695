//! Lipschitz feedback laws `(t, x) ↦ a`.
//!
//! Every [`Policy`] carries a declared Lipschitz budget `C` with
//! `|ψ(t, 0)| ≤ C` and `|ψ(t, x) − ψ(t, y)| ≤ C |x − y|`. Greedy policies
//! are synthesized by [`crate::riccati`] (quadratic costs) and
//! [`crate::hjb`] (entropy-regularized costs); the exploration policy is the
//! piecewise-constant schedule built by [`make_exploration_policy`].

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::hjb::HjbSolution;
use crate::model::{on_simplex, softmax_into, CostSpec, LinearCoefficient, ParamTheta};
use crate::sde::{simulate_episode, NoiseStream, TimeGrid};

#[derive(Debug, Clone)]
pub(crate) enum PolicyKind {
    Zero,
    Constant(DVector<f64>),
    Exploration {
        actions: Vec<DVector<f64>>,
        /// Interior breakpoints `t_1 < … < t_{p-1}`.
        breakpoints: Vec<f64>,
    },
    LqGreedy {
        grid: TimeGrid,
        /// `R⁻¹BᵀP_k`, one `p×d` gain per grid node.
        gains: Vec<DMatrix<f64>>,
    },
    EntropyGreedy {
        table: Arc<HjbSolution>,
        b: DVector<f64>,
        fbar0: LinearCoefficient,
    },
}

/// Feedback law with its declared Lipschitz budget.
#[derive(Debug, Clone)]
pub struct Policy {
    kind: PolicyKind,
    action_dim: usize,
    state_dim: Option<usize>,
    lipschitz_budget: f64,
}

impl Policy {
    pub(crate) fn from_parts(
        kind: PolicyKind,
        action_dim: usize,
        state_dim: Option<usize>,
        lipschitz_budget: f64,
    ) -> Self {
        Self {
            kind,
            action_dim,
            state_dim,
            lipschitz_budget,
        }
    }

    /// `ψ ≡ 0` in `ℝᵖ`.
    pub fn zero(action_dim: usize) -> Self {
        Self::from_parts(PolicyKind::Zero, action_dim, None, 0.0)
    }

    /// `ψ ≡ a`.
    pub fn constant(a: DVector<f64>) -> Self {
        let norm = a.norm();
        let p = a.len();
        Self::from_parts(PolicyKind::Constant(a), p, None, norm)
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    /// State dimension the policy was built for; `None` for state-free laws.
    pub fn state_dim(&self) -> Option<usize> {
        self.state_dim
    }

    pub fn lipschitz_budget(&self) -> f64 {
        self.lipschitz_budget
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            PolicyKind::Zero => "zero",
            PolicyKind::Constant(_) => "constant",
            PolicyKind::Exploration { .. } => "exploration",
            PolicyKind::LqGreedy { .. } => "lq-greedy",
            PolicyKind::EntropyGreedy { .. } => "entropy-greedy",
        }
    }

    /// Evaluate `ψ(t, x)` into `out` without allocating.
    #[inline]
    pub fn act_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        match &self.kind {
            PolicyKind::Zero => out.iter_mut().for_each(|o| *o = 0.0),
            PolicyKind::Constant(a) => out.copy_from_slice(a.as_slice()),
            PolicyKind::Exploration { actions, breakpoints } => {
                let cell = breakpoints.iter().take_while(|&&b| t >= b).count();
                out.copy_from_slice(actions[cell].as_slice());
            }
            PolicyKind::LqGreedy { grid, gains } => {
                let k = &gains[grid.nearest(t)];
                let (p, d) = k.shape();
                let ks = k.as_slice();
                for (i, o) in out.iter_mut().enumerate().take(p) {
                    let mut v = 0.0;
                    for j in 0..d {
                        v -= ks[i + j * p] * x[j];
                    }
                    *o = v;
                }
            }
            PolicyKind::EntropyGreedy { table, b, fbar0 } => {
                let xc = table.clamp_x(x[0]);
                let grad = table.interpolate_dvdx(t, xc);
                fbar0.eval_into(t, &[xc], out);
                for (o, bj) in out.iter_mut().zip(b.iter()) {
                    *o = -bj * grad - *o;
                }
                let mut z = [0.0f64; 16];
                if out.len() <= z.len() {
                    let z = &mut z[..out.len()];
                    z.copy_from_slice(out);
                    softmax_into(z, out);
                } else {
                    let z = out.to_vec();
                    softmax_into(&z, out);
                }
            }
        }
    }

    pub fn act(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.action_dim);
        self.act_into(t, x.as_slice(), out.as_mut_slice());
        out
    }
}

/// Piecewise-constant exploration schedule: action `a_k` on `[t_{k-1}, t_k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplorationSpec {
    pub actions: Vec<Vec<f64>>,
    /// Full partition `0 = t_0 < t_1 < … < t_p = T`.
    pub partition: Vec<f64>,
}

impl ExplorationSpec {
    /// Equal-length cells over `[0, horizon]`.
    pub fn uniform(actions: Vec<Vec<f64>>, horizon: f64) -> Self {
        let p = actions.len();
        let partition = (0..=p).map(|k| horizon * k as f64 / p as f64).collect();
        Self { actions, partition }
    }

    /// Smallest singular value of the stacked action matrix.
    pub fn sigma_min(&self) -> f64 {
        let p = self.actions.len();
        let m = DMatrix::from_fn(p, p, |i, j| self.actions[i].get(j).copied().unwrap_or(f64::NAN));
        m.svd(false, false).singular_values.min()
    }

    /// Every action must lie in the cost's effective domain.
    pub fn check_domain(&self, spec: &CostSpec) -> Result<()> {
        if let CostSpec::EntropyRegularized(_) = spec {
            for a in &self.actions {
                if !on_simplex(a) || a.iter().any(|&v| v <= 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "exploration action {a:?} must lie in the simplex interior for the entropy cost"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Build `ψᵉ` from linearly independent actions on a partition of `[0, T]`.
pub fn make_exploration_policy(spec: &ExplorationSpec) -> Result<Policy> {
    let p = spec.actions.len();
    if p == 0 {
        return Err(Error::InvalidArgument("exploration needs at least one action".into()));
    }
    if let Some(a) = spec.actions.iter().find(|a| a.len() != p) {
        return Err(dim_err("exploration action", p, a.len()));
    }
    if spec.partition.len() != p + 1 {
        return Err(dim_err("exploration partition", p + 1, spec.partition.len()));
    }
    if spec.partition[0] != 0.0 || spec.partition.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidArgument(
            "partition must start at 0 and be strictly increasing".into(),
        ));
    }
    let sigma_min = spec.sigma_min();
    if !(sigma_min > 1e-10) {
        return Err(Error::DependentActions { sigma_min });
    }
    let actions: Vec<DVector<f64>> = spec.actions.iter().map(|a| DVector::from_column_slice(a)).collect();
    let budget = actions.iter().map(|a| a.norm()).fold(0.0, f64::max);
    let breakpoints = spec.partition[1..p].to_vec();
    Ok(Policy::from_parts(
        PolicyKind::Exploration { actions, breakpoints },
        p,
        None,
        budget,
    ))
}

/// Monte Carlo information value `Λ_min(ψ, θ)`.
#[derive(Debug, Clone)]
pub struct InformationValue {
    /// Estimate of `E[∫ Z Zᵀ dt]`.
    pub gram: DMatrix<f64>,
    pub lambda_min: f64,
    pub n_mc: usize,
}

/// `λ_min(E[∫₀ᵀ Z Zᵀ dt])` from `n_mc` seeded episodes.
pub fn compute_information_value(
    policy: &Policy,
    theta: &ParamTheta,
    grid: &TimeGrid,
    x0: &DVector<f64>,
    n_mc: usize,
    seed: u64,
) -> Result<InformationValue> {
    if n_mc < 2 {
        return Err(Error::InvalidArgument("n_mc must be at least 2".into()));
    }
    let dz = theta.state_dim() + theta.action_dim();
    let grams: Vec<Result<DMatrix<f64>>> = (0..n_mc as u64)
        .into_par_iter()
        .map(|i| {
            let traj = simulate_episode(theta, policy, grid, x0, Some(&mut NoiseStream::new(seed, i)))?;
            Ok(path_gram(traj.z_path(), grid.dt(), grid.n_steps()))
        })
        .collect();
    let mut sum = DMatrix::zeros(dz, dz);
    for g in grams {
        sum += g?;
    }
    let gram = sum / n_mc as f64;
    let lambda_min = SymmetricEigen::new((&gram + gram.transpose()) * 0.5).eigenvalues.min();
    Ok(InformationValue { gram, lambda_min, n_mc })
}

/// `Σ_{k<n} Z_k Z_kᵀ dt` over the left endpoints.
pub(crate) fn path_gram(z: &DMatrix<f64>, dt: f64, n: usize) -> DMatrix<f64> {
    let dz = z.ncols();
    let mut g = DMatrix::zeros(dz, dz);
    for k in 0..n {
        for i in 0..dz {
            let zi = z[(k, i)] * dt;
            for j in i..dz {
                g[(i, j)] += zi * z[(k, j)];
            }
        }
    }
    for i in 0..dz {
        for j in 0..i {
            g[(i, j)] = g[(j, i)];
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exploration_cells() {
        let spec = ExplorationSpec {
            actions: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            partition: vec![0.0, 0.5, 1.0],
        };
        let pol = make_exploration_policy(&spec).unwrap();
        let any = DVector::from_vec(vec![123.0]);
        assert_eq!(pol.act(0.3, &any).as_slice(), &[1.0, 0.0]);
        assert_eq!(pol.act(0.7, &any).as_slice(), &[0.0, 1.0]);
        assert_eq!(pol.act(0.5, &any).as_slice(), &[0.0, 1.0]);
        assert_eq!(pol.act(1.0, &any).as_slice(), &[0.0, 1.0]);
        assert_eq!(pol.lipschitz_budget(), 1.0);
    }

    #[test]
    fn exploration_single_action() {
        let pol = make_exploration_policy(&ExplorationSpec::uniform(vec![vec![1.0]], 2.0)).unwrap();
        for t in [0.0, 0.9, 2.0] {
            assert_eq!(pol.act(t, &DVector::from_vec(vec![-4.0]))[0], 1.0);
        }
    }

    #[test]
    fn exploration_dependent_actions_rejected() {
        let spec = ExplorationSpec::uniform(vec![vec![1.0, 0.0], vec![2.0, 0.0]], 1.0);
        assert!(matches!(
            make_exploration_policy(&spec),
            Err(Error::DependentActions { .. })
        ));
    }

    #[test]
    fn exploration_domain_check() {
        use crate::model::{EntropyCost, TerminalCost};
        let spec = CostSpec::EntropyRegularized(EntropyCost {
            fbar0: LinearCoefficient::Constant(DVector::zeros(2)),
            terminal: TerminalCost::Zero,
        });
        let corner = ExplorationSpec::uniform(vec![vec![1.0, 0.0], vec![0.0, 1.0]], 1.0);
        assert!(corner.check_domain(&spec).is_err());
        let interior = ExplorationSpec::uniform(vec![vec![0.8, 0.2], vec![0.2, 0.8]], 1.0);
        assert!(interior.check_domain(&spec).is_ok());
    }

    #[test]
    fn zero_policy_has_no_action_information() {
        let th = ParamTheta::new(DMatrix::zeros(1, 1), DMatrix::from_row_slice(1, 2, &[1.0, 1.0])).unwrap();
        let grid = TimeGrid::new(1.0, 100).unwrap();
        let iv = compute_information_value(&Policy::zero(2), &th, &grid, &DVector::zeros(1), 50, 1).unwrap();
        assert!(iv.lambda_min.abs() < 1e-12);
        assert_eq!(iv.gram[(1, 1)], 0.0);
    }

    #[test]
    fn gram_is_symmetric_sum() {
        let z = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 100.0, 100.0]);
        let g = path_gram(&z, 0.5, 2);
        assert_eq!(g, DMatrix::from_row_slice(2, 2, &[5.0, 7.0, 7.0, 10.0]));
    }
}
