//! Phased exploration with greedy exploitation.
//!
//! Cycle `k` runs one exploration episode under `ψᵉ`, refreshes the truncated
//! MAP estimate `θ̄`, then runs `m(k)` episodes under the greedy policy
//! `ψ_θ̄`. The posterior statistics absorb every episode; with
//! `optional_update` the estimate (and the greedy policy) is also refreshed
//! after each exploitation episode.
//!
//! Episode indices are 1-based. With `C(K) = K + Σ_{k≤K} m(k)` the
//! exploration episodes are exactly `{C(k−1) + 1 : k ≥ 1}`.

use std::collections::HashMap;
use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{init_stats, map_estimate, min_eigen, truncate, update_stats, SufficientStats, TruncationSpec};
use crate::hjb::{entropy_policy, solve_hjb_entropy, HjbOptions};
use crate::model::{CostSpec, ParamBox, ParamTheta};
use crate::policy::{make_exploration_policy, ExplorationSpec, Policy};
use crate::riccati::{lq_policy, solve_riccati};
use crate::sde::{episode_cost, mc_policy_value, simulate_episode, McEstimate, NoiseStream, TimeGrid, Trajectory};

/// Seed salt for evaluation runs so they never share streams with the learner.
pub const EVAL_SALT: u64 = 0x5EED_E7A1_0000_0001;
/// Seed salt for optimal-value estimation.
pub const VSTAR_SALT: u64 = 0x5EED_0057_A200_0002;

/// Number of exploitation episodes per cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    /// `m(k) = ⌊k^r⌋`, `r ∈ (0, 1]`.
    PowerFloor { r: f64 },
    /// `m(k) = 2^k`.
    Doubling,
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Schedule::PowerFloor { r } if !(r > 0.0 && r <= 1.0) => Err(Error::InvalidArgument(format!(
                "power-floor exponent must lie in (0, 1], got {r}"
            ))),
            _ => Ok(()),
        }
    }

    fn m_unchecked(&self, k: usize) -> usize {
        match *self {
            Schedule::PowerFloor { r } => {
                let v = (k as f64).powf(r);
                // guard against 2.9999999 for perfect powers
                let f = (v + 1e-9).floor();
                f.max(1.0) as usize
            }
            Schedule::Doubling => 1usize.checked_shl(k as u32).unwrap_or(usize::MAX),
        }
    }

    /// `C(K) = K + Σ_{k≤K} m(k)`.
    pub fn cumulative(&self, cycles: usize) -> usize {
        (1..=cycles).fold(0usize, |acc, k| {
            acc.saturating_add(1).saturating_add(self.m_unchecked(k))
        })
    }
}

/// `m(k)` for cycle `k ≥ 1`.
pub fn schedule_m(sched: &Schedule, k: usize) -> Result<usize> {
    if k < 1 {
        return Err(Error::InvalidArgument("cycles are numbered from 1".into()));
    }
    Ok(sched.m_unchecked(k))
}

/// `κ(m) = min{k : C(k) ≥ m}` for episode `m ≥ 1`.
pub fn cycle_of(sched: &Schedule, m: usize) -> Result<usize> {
    if m < 1 {
        return Err(Error::InvalidArgument("episodes are numbered from 1".into()));
    }
    let mut k = 0;
    let mut c = 0usize;
    while c < m {
        k += 1;
        c = c.saturating_add(1 + sched.m_unchecked(k));
    }
    Ok(k)
}

/// True when episode `m` is the first episode of its cycle.
pub fn is_exploration_slot(sched: &Schedule, m: usize) -> Result<bool> {
    let k = cycle_of(sched, m)?;
    Ok(m == sched.cumulative(k - 1) + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Explore,
    Exploit,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Explore => "explore",
            Phase::Exploit => "exploit",
        }
    }
}

/// Prior `MN(θ̂₀, I, V₀)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Prior {
    pub theta0_hat: DMatrix<f64>,
    pub v0: DMatrix<f64>,
}

impl Prior {
    /// `θ̂₀ = 0`, `V₀ = I`.
    pub fn standard(d: usize, p: usize) -> Self {
        Self {
            theta0_hat: DMatrix::zeros(d, d + p),
            v0: DMatrix::identity(d + p, d + p),
        }
    }
}

/// Everything a single learning run needs.
#[derive(Debug, Clone)]
pub struct PegeConfig {
    /// True parameter driving the simulator.
    pub theta: ParamTheta,
    pub param_box: ParamBox,
    pub cost: CostSpec,
    pub grid: TimeGrid,
    pub x0: DVector<f64>,
    pub prior: Prior,
    pub truncation: TruncationSpec,
    pub exploration: ExplorationSpec,
    pub schedule: Schedule,
    pub n_episodes: usize,
    pub optional_update: bool,
    /// Replace every exploration episode by a greedy one (ablation).
    pub greedy_only: bool,
    pub seed: u64,
    pub hjb: HjbOptions,
    /// Monte Carlo budget for `V*` when no closed form is available.
    pub vstar_mc: usize,
}

impl PegeConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        let (d, p) = (self.theta.state_dim(), self.theta.action_dim());
        if !self.param_box.contains(&self.theta) {
            return Err(Error::Config("true θ lies outside the parameter box".into()));
        }
        if !self.truncation.strictly_contains(&self.param_box) {
            return Err(Error::Config(
                "truncation box must strictly contain the parameter box".into(),
            ));
        }
        if self.prior.theta0_hat.shape() != (d, d + p) || self.prior.v0.shape() != (d + p, d + p) {
            return Err(Error::Config("prior dimensions do not match θ".into()));
        }
        if self.x0.len() != d {
            return Err(Error::Config(format!("x0 must have length {d}")));
        }
        if self.cost.action_dim() != Some(p) {
            return Err(Error::Config("cost action dimension does not match B".into()));
        }
        if self.n_episodes == 0 {
            return Err(Error::Config("n_episodes must be positive".into()));
        }
        let e = &self.exploration;
        let span = e.partition.last().copied().unwrap_or(f64::NAN);
        if (span - self.grid.horizon()).abs() > 1e-12 {
            return Err(Error::Config("exploration partition must end at the horizon".into()));
        }
        e.check_domain(&self.cost)?;
        make_exploration_policy(e)?;
        Ok(())
    }
}

/// Greedy policy `ψ_θ` for the configured cost family.
pub fn greedy_policy(theta: &ParamTheta, cost: &CostSpec, grid: &TimeGrid, hjb: &HjbOptions) -> Result<Policy> {
    match cost {
        CostSpec::SmoothQuadratic(c) => {
            let sol = solve_riccati(c, theta, grid)?;
            lq_policy(&sol, theta, c)
        }
        CostSpec::EntropyRegularized(c) => {
            let hgrid = hjb.time_grid(grid.horizon())?;
            let sol = Arc::new(solve_hjb_entropy(c, theta, &hgrid, hjb)?);
            entropy_policy(&sol, theta, c)
        }
    }
}

/// `V*(θ) = J(ψ_θ; θ)`: Monte Carlo under the greedy policy, plus the Riccati
/// value `x₀ᵀP₀x₀ + q₀` for quadratic costs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimalValue {
    pub mc: McEstimate,
    pub analytic: Option<f64>,
}

impl OptimalValue {
    /// Value used as the regret baseline.
    pub fn baseline(&self) -> f64 {
        self.analytic.unwrap_or(self.mc.mean)
    }
}

#[allow(clippy::too_many_arguments)]
pub fn estimate_optimal_value(
    theta: &ParamTheta,
    cost: &CostSpec,
    grid: &TimeGrid,
    x0: &DVector<f64>,
    n_mc: usize,
    seed: u64,
    hjb: &HjbOptions,
) -> Result<OptimalValue> {
    let policy = greedy_policy(theta, cost, grid, hjb)?;
    let mc = mc_policy_value(theta, &policy, cost, grid, x0, n_mc, seed)?;
    let analytic = match cost {
        CostSpec::SmoothQuadratic(c) => Some(solve_riccati(c, theta, grid)?.value(x0)),
        CostSpec::EntropyRegularized(_) => None,
    };
    Ok(OptimalValue { mc, analytic })
}

/// Which policy generated an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PolicyRef {
    Exploration,
    /// Index into [`RegretLedger::greedy_thetas`].
    Greedy(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub m: usize,
    pub cycle: usize,
    pub phase: Phase,
    pub cost: f64,
    pub policy: PolicyRef,
    /// Untruncated MAP estimate after this episode.
    pub theta_hat: DMatrix<f64>,
    /// Truncated estimate in force after this episode.
    pub theta_tilde: DMatrix<f64>,
    /// Whether `θ̄` was refreshed after this episode.
    pub refreshed: bool,
    pub lambda_min: f64,
    pub precision_diag: Vec<f64>,
    /// `J(Ψ_m; θ)` once the ledger has been evaluated.
    pub j_value: Option<McEstimate>,
}

/// Per-episode costs, phases and the regret path of one run.
#[derive(Debug, Clone)]
pub struct RegretLedger {
    pub records: Vec<EpisodeRecord>,
    pub v_star: OptimalValue,
    /// Distinct `θ̄` used by greedy episodes, in order of first use.
    pub greedy_thetas: Vec<DMatrix<f64>>,
    pub initial_precision_diag: Vec<f64>,
    /// Posterior statistics after the last episode.
    pub final_stats: SufficientStats,
}

/// `(noise, exploration, exploitation)` split of `R(N)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegretDecomposition {
    /// `Σ (ℓ_m − J(Ψ_m; θ))`.
    pub noise: f64,
    /// `Σ_{m ∈ E} (J(ψᵉ; θ) − V*)`.
    pub exploration: f64,
    /// `Σ_{m ∉ E} (J(Ψ_m; θ) − V*)`.
    pub exploitation: f64,
    pub regret: f64,
}

impl RegretLedger {
    pub fn n_episodes(&self) -> usize {
        self.records.len()
    }

    /// `R(n) = Σ_{m≤n} (ℓ_m − V*)` for `n = 1..=N`.
    pub fn regret_path(&self) -> Vec<f64> {
        let v = self.v_star.baseline();
        let mut acc = 0.0;
        self.records
            .iter()
            .map(|r| {
                acc += r.cost - v;
                acc
            })
            .collect()
    }

    pub fn regret(&self) -> f64 {
        self.regret_path().last().copied().unwrap_or(0.0)
    }

    pub fn exploration_indices(&self) -> Vec<usize> {
        self.records
            .iter()
            .filter(|r| r.phase == Phase::Explore)
            .map(|r| r.m)
            .collect()
    }

    /// Rows `m,cycle,phase,cost,regret_cum,theta_tilde_*,lambda_min`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let width = self.records.first().map_or(0, |r| r.theta_tilde.len());
        let mut header: Vec<String> = ["m", "cycle", "phase", "cost", "regret_cum"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend((1..=width).map(|i| format!("theta_tilde_{i}")));
        header.push("lambda_min".into());
        w.write_record(&header)?;
        for (r, cum) in self.records.iter().zip(self.regret_path()) {
            let mut rec = vec![
                r.m.to_string(),
                r.cycle.to_string(),
                r.phase.as_str().to_string(),
                r.cost.to_string(),
                cum.to_string(),
            ];
            for row in r.theta_tilde.row_iter() {
                rec.extend(row.iter().map(|v| v.to_string()));
            }
            rec.push(r.lambda_min.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

struct GreedyCache<'a> {
    cost: &'a CostSpec,
    grid: &'a TimeGrid,
    hjb: &'a HjbOptions,
    index: HashMap<Vec<i64>, usize>,
    policies: Vec<Arc<Policy>>,
    thetas: Vec<DMatrix<f64>>,
}

fn quantize(theta: &DMatrix<f64>) -> Vec<i64> {
    theta.iter().map(|v| (v * 1e12).round() as i64).collect()
}

impl<'a> GreedyCache<'a> {
    fn new(cost: &'a CostSpec, grid: &'a TimeGrid, hjb: &'a HjbOptions) -> Self {
        Self {
            cost,
            grid,
            hjb,
            index: HashMap::new(),
            policies: Vec::new(),
            thetas: Vec::new(),
        }
    }

    fn get(&mut self, theta_bar: &DMatrix<f64>, d: usize) -> Result<(usize, Arc<Policy>)> {
        let key = quantize(theta_bar);
        if let Some(&i) = self.index.get(&key) {
            return Ok((i, Arc::clone(&self.policies[i])));
        }
        let theta = ParamTheta::from_stacked(theta_bar, d)?;
        let policy = Arc::new(greedy_policy(&theta, self.cost, self.grid, self.hjb)?);
        let i = self.policies.len();
        self.policies.push(Arc::clone(&policy));
        self.thetas.push(theta_bar.clone());
        self.index.insert(key, i);
        Ok((i, policy))
    }
}

fn at_episode<T>(episode: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Episode {
        episode,
        source: Box::new(e),
    })
}

/// Run the learner for `n_episodes`, estimating `V*` first.
pub fn run_pege(config: &PegeConfig) -> Result<RegretLedger> {
    config.validate()?;
    let v_star = estimate_optimal_value(
        &config.theta,
        &config.cost,
        &config.grid,
        &config.x0,
        config.vstar_mc,
        config.seed ^ VSTAR_SALT,
        &config.hjb,
    )?;
    run_pege_with_baseline(config, v_star)
}

/// Run the learner against a precomputed `V*` (shared across seeds).
pub fn run_pege_with_baseline(config: &PegeConfig, v_star: OptimalValue) -> Result<RegretLedger> {
    config.validate()?;
    let d = config.theta.state_dim();
    let explore = make_exploration_policy(&config.exploration)?;
    let mut cache = GreedyCache::new(&config.cost, &config.grid, &config.hjb);

    let mut stats = init_stats(&config.prior.theta0_hat, &config.prior.v0)?;
    let initial_precision_diag = stats.precision().diagonal().iter().copied().collect();
    let mut theta_bar = truncate(&config.truncation, &map_estimate(&stats)?, None);

    let mut records = Vec::with_capacity(config.n_episodes);
    let mut cycle = 0usize;
    let mut next_explore = 1usize;
    for m in 1..=config.n_episodes {
        let slot = m == next_explore;
        if slot {
            cycle += 1;
            next_explore = config.schedule.cumulative(cycle) + 1;
        }
        let (phase, policy_ref, policy) = if slot && !config.greedy_only {
            (Phase::Explore, PolicyRef::Exploration, Arc::new(explore.clone()))
        } else {
            let (i, pol) = at_episode(m, cache.get(&theta_bar, d))?;
            (Phase::Exploit, PolicyRef::Greedy(i), pol)
        };

        let mut noise = NoiseStream::new(config.seed, m as u64);
        let traj = at_episode(
            m,
            simulate_episode(&config.theta, &policy, &config.grid, &config.x0, Some(&mut noise)),
        )?;
        let cost = at_episode(m, episode_cost(&traj, &config.cost, &policy))?;
        if !cost.valid {
            return Err(Error::Episode {
                episode: m,
                source: Box::new(Error::InvalidCost { count: 1, total: 1 }),
            });
        }
        stats = at_episode(m, update_stats(&stats, &traj))?;
        let theta_hat = at_episode(m, map_estimate(&stats))?;
        let refreshed = slot || config.optional_update;
        if refreshed {
            theta_bar = truncate(&config.truncation, &theta_hat, None);
        }
        records.push(EpisodeRecord {
            m,
            cycle,
            phase,
            cost: cost.value,
            policy: policy_ref,
            theta_hat,
            theta_tilde: theta_bar.clone(),
            refreshed,
            lambda_min: min_eigen(&stats),
            precision_diag: stats.precision().diagonal().iter().copied().collect(),
            j_value: None,
        });
    }
    Ok(RegretLedger {
        records,
        v_star,
        greedy_thetas: cache.thetas,
        initial_precision_diag,
        final_stats: stats,
    })
}

/// Re-simulate episode `m` of a finished run from its policy record and
/// noise stream. The path matches the one the learner observed.
pub fn replay_episode(config: &PegeConfig, ledger: &RegretLedger, m: usize) -> Result<Trajectory> {
    let rec = ledger
        .records
        .get(m.wrapping_sub(1))
        .ok_or_else(|| Error::InvalidArgument(format!("episode {m} not in ledger")))?;
    let policy = match rec.policy {
        PolicyRef::Exploration => make_exploration_policy(&config.exploration)?,
        PolicyRef::Greedy(i) => {
            let theta = ParamTheta::from_stacked(&ledger.greedy_thetas[i], config.theta.state_dim())?;
            greedy_policy(&theta, &config.cost, &config.grid, &config.hjb)?
        }
    };
    simulate_episode(
        &config.theta,
        &policy,
        &config.grid,
        &config.x0,
        Some(&mut NoiseStream::new(config.seed, m as u64)),
    )
}

/// Policy the learner would run in episode `N + 1` after `ledger`.
pub fn next_policy(config: &PegeConfig, ledger: &RegretLedger) -> Result<Policy> {
    let m = ledger.n_episodes() + 1;
    if is_exploration_slot(&config.schedule, m)? && !config.greedy_only {
        return make_exploration_policy(&config.exploration);
    }
    let theta_bar = match ledger.records.last() {
        Some(r) => r.theta_tilde.clone(),
        None => truncate(
            &config.truncation,
            &map_estimate(&init_stats(&config.prior.theta0_hat, &config.prior.v0)?)?,
            None,
        ),
    };
    let theta = ParamTheta::from_stacked(&theta_bar, config.theta.state_dim())?;
    greedy_policy(&theta, &config.cost, &config.grid, &config.hjb)
}

/// Fill `J(Ψ_m; θ)` for every episode with `n_mc` evaluation episodes per
/// distinct policy, drawn from a seed namespace disjoint from the learner's.
pub fn evaluate_ledger(config: &PegeConfig, ledger: &mut RegretLedger, n_mc: usize) -> Result<()> {
    let eval_seed = config.seed ^ EVAL_SALT;
    let d = config.theta.state_dim();
    let mut explore_value = None;
    let mut greedy_values: Vec<Option<McEstimate>> = vec![None; ledger.greedy_thetas.len()];
    for rec in &mut ledger.records {
        let value = match rec.policy {
            PolicyRef::Exploration => match explore_value {
                Some(v) => v,
                None => {
                    let pol = make_exploration_policy(&config.exploration)?;
                    let v = mc_policy_value(
                        &config.theta,
                        &pol,
                        &config.cost,
                        &config.grid,
                        &config.x0,
                        n_mc,
                        eval_seed,
                    )?;
                    explore_value = Some(v);
                    v
                }
            },
            PolicyRef::Greedy(i) => match greedy_values[i] {
                Some(v) => v,
                None => {
                    let th = ParamTheta::from_stacked(&ledger.greedy_thetas[i], d)?;
                    let pol = greedy_policy(&th, &config.cost, &config.grid, &config.hjb)?;
                    let v = mc_policy_value(
                        &config.theta,
                        &pol,
                        &config.cost,
                        &config.grid,
                        &config.x0,
                        n_mc,
                        eval_seed,
                    )?;
                    greedy_values[i] = Some(v);
                    v
                }
            },
        };
        rec.j_value = Some(value);
    }
    Ok(())
}

/// Split `R(N)` into the martingale noise, exploration and exploitation sums.
pub fn regret_decompose(ledger: &RegretLedger) -> Result<RegretDecomposition> {
    let v = ledger.v_star.baseline();
    let mut out = RegretDecomposition {
        noise: 0.0,
        exploration: 0.0,
        exploitation: 0.0,
        regret: 0.0,
    };
    for r in &ledger.records {
        let j = r.j_value.ok_or(Error::MissingEvaluation)?.mean;
        out.noise += r.cost - j;
        match r.phase {
            Phase::Explore => out.exploration += j - v,
            Phase::Exploit => out.exploitation += j - v,
        }
        out.regret += r.cost - v;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_examples() {
        assert_eq!(schedule_m(&Schedule::PowerFloor { r: 1.0 }, 3).unwrap(), 3);
        assert_eq!(schedule_m(&Schedule::PowerFloor { r: 0.5 }, 4).unwrap(), 2);
        assert_eq!(schedule_m(&Schedule::Doubling, 3).unwrap(), 8);
        assert!(schedule_m(&Schedule::Doubling, 0).is_err());
    }

    #[test]
    fn cycle_examples() {
        let lin = Schedule::PowerFloor { r: 1.0 };
        assert_eq!((1..=3).map(|k| lin.cumulative(k)).collect::<Vec<_>>(), vec![2, 5, 9]);
        assert_eq!(cycle_of(&lin, 7).unwrap(), 3);
        assert_eq!(cycle_of(&Schedule::Doubling, 1).unwrap(), 1);
        assert_eq!(cycle_of(&Schedule::PowerFloor { r: 0.3 }, 1).unwrap(), 1);
        assert_eq!(
            (1..=3).map(|k| Schedule::Doubling.cumulative(k)).collect::<Vec<_>>(),
            vec![3, 8, 17]
        );
        assert_eq!(cycle_of(&Schedule::Doubling, 9).unwrap(), 3);
        assert!(cycle_of(&lin, 0).is_err());
    }

    #[test]
    fn power_floor_never_zero() {
        let s = Schedule::PowerFloor { r: 0.01 };
        for k in 1..200 {
            assert!(schedule_m(&s, k).unwrap() >= 1);
        }
        assert!(Schedule::PowerFloor { r: 1.5 }.validate().is_err());
        assert!(Schedule::PowerFloor { r: 0.0 }.validate().is_err());
    }

    #[test]
    fn exploration_slots() {
        let s = Schedule::PowerFloor { r: 1.0 };
        let slots: Vec<usize> = (1..=12).filter(|&m| is_exploration_slot(&s, m).unwrap()).collect();
        assert_eq!(slots, vec![1, 3, 6, 10]);
    }
}
