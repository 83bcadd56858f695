//! Config-driven experiment harness.
//!
//! One JSON document describes the model, cost, learner and the block for the
//! chosen experiment. Every run writes `config_echo.json` (the resolved config
//! and its SHA-256), a `summary.json`, and one CSV per table. Table rows carry
//! the seed count and config hash.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::diagnostics::{bernstein_tail_check, estimate_stratified_orlicz, StratifiedOrlicz};
use crate::error::{Error, Result};
use crate::estimator::{init_stats, map_estimate, min_eigen, update_stats, TruncationMode, TruncationSpec};
use crate::hjb::{entropy_policy, hjb_residual, solve_hjb_entropy, HjbOptions};
use crate::model::{CostSpec, EntropyCost, LinearCoefficient, ParamBox, ParamTheta, QuadraticCost, TerminalCost};
use crate::pege::{
    estimate_optimal_value, evaluate_ledger, greedy_policy, next_policy, regret_decompose, replay_episode,
    run_pege_with_baseline, OptimalValue, PegeConfig, Prior, RegretLedger, Schedule, EVAL_SALT, VSTAR_SALT,
};
use crate::policy::{compute_information_value, make_exploration_policy, ExplorationSpec};
use crate::riccati::solve_riccati;
use crate::sde::{
    mc_contrast, mc_cost_samples, mc_paired_difference, mc_policy_value, simulate_episode, NoiseStream, TimeGrid,
};

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    PegeRun,
    RegretScan,
    GapScan,
    Concentration,
    IncompleteDemo,
    Orlicz,
    RiccatiCheck,
    HjbCheck,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::PegeRun => "pege-run",
            ExperimentKind::RegretScan => "regret-scan",
            ExperimentKind::GapScan => "gap-scan",
            ExperimentKind::Concentration => "concentration",
            ExperimentKind::IncompleteDemo => "incomplete-demo",
            ExperimentKind::Orlicz => "orlicz",
            ExperimentKind::RiccatiCheck => "riccati-check",
            ExperimentKind::HjbCheck => "hjb-check",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxBlock {
    pub lower: Rows,
    pub upper: Rows,
}

/// True parameter and the box `Θ`, both as stacked `[A B]` rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub a: Rows,
    pub b: Rows,
    #[serde(rename = "box")]
    pub param_box: BoxBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum LinearBlock {
    Constant(Vec<f64>),
    Affine { c: Vec<f64>, k: Rows },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum CostBlock {
    Quadratic {
        q: Rows,
        r: Rows,
        g: Rows,
    },
    Entropy {
        fbar0: LinearBlock,
        #[serde(default)]
        terminal: Option<Rows>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorBlock {
    pub theta0_hat: Rows,
    pub v0: Rows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TruncModeBlock {
    Clamp,
    Fallback(Rows),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationBlock {
    /// Gap between `Θ` and `K` on every entry.
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default = "default_trunc_mode")]
    pub mode: TruncModeBlock,
}

fn default_margin() -> f64 {
    0.5
}

fn default_trunc_mode() -> TruncModeBlock {
    TruncModeBlock::Clamp
}

impl Default for TruncationBlock {
    fn default() -> Self {
        Self {
            margin: default_margin(),
            mode: TruncModeBlock::Clamp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplorationBlock {
    pub actions: Rows,
    /// Defaults to equal cells.
    #[serde(default)]
    pub partition: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum SeedsBlock {
    List(Vec<u64>),
    Range { base: u64, count: usize },
}

impl Default for SeedsBlock {
    fn default() -> Self {
        SeedsBlock::Range { base: 1, count: 1 }
    }
}

impl SeedsBlock {
    pub fn resolve(&self) -> Vec<u64> {
        match self {
            SeedsBlock::List(v) => v.clone(),
            SeedsBlock::Range { base, count } => (0..*count as u64).map(|i| base + i).collect(),
        }
    }

    fn base(&self) -> u64 {
        match self {
            SeedsBlock::List(v) => v.first().copied().unwrap_or(1),
            SeedsBlock::Range { base, .. } => *base,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegretScanBlock {
    pub n_grid: Vec<usize>,
    pub schedules: Vec<Schedule>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GapScanBlock {
    pub radii: Vec<f64>,
    pub n_directions: usize,
    pub n_pairs: usize,
    /// `2r`, reported next to the fitted slope.
    #[serde(default = "default_exponent")]
    pub expected_exponent: f64,
    #[serde(default)]
    pub direction_seed: u64,
    /// Evaluate every direction together with its negative.
    #[serde(default = "default_true")]
    pub antithetic: bool,
}

fn default_true() -> bool {
    true
}

fn default_exponent() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConcentrationBlock {
    pub m_grid: Vec<usize>,
    #[serde(default = "default_info_mc")]
    pub info_mc: usize,
}

fn default_info_mc() -> usize {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IncompleteBlock {
    pub n_grid: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrliczBlock {
    /// Episodes simulated with frozen noise before the probed episode.
    pub prefix: usize,
    pub n_strata: usize,
    pub n_inner: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiccatiCheckBlock {
    /// Step counts, each doubling the previous.
    pub refinements: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HjbCheckBlock {
    /// Spatial node counts for the residual study.
    pub refinements: Vec<usize>,
    /// Residual is measured on `|x| ≤ window`.
    pub window: f64,
}

fn default_steps() -> usize {
    1000
}
fn default_episodes() -> usize {
    200
}
fn default_mc() -> usize {
    2000
}
fn default_delta() -> f64 {
    0.05
}
fn default_schedule() -> Schedule {
    Schedule::PowerFloor { r: 1.0 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub experiment: Option<ExperimentKind>,
    pub model: ModelBlock,
    pub cost: CostBlock,
    pub horizon: f64,
    #[serde(default = "default_steps")]
    pub n_steps: usize,
    pub x0: Vec<f64>,
    #[serde(default)]
    pub prior: Option<PriorBlock>,
    #[serde(default)]
    pub truncation: TruncationBlock,
    #[serde(default)]
    pub exploration: Option<ExplorationBlock>,
    #[serde(default = "default_schedule")]
    pub schedule: Schedule,
    #[serde(default = "default_episodes")]
    pub n_episodes: usize,
    #[serde(default)]
    pub optional_update: bool,
    #[serde(default)]
    pub greedy_only: bool,
    #[serde(default)]
    pub hjb: HjbOptions,
    #[serde(default = "default_mc")]
    pub vstar_mc: usize,
    /// Evaluation episodes per distinct policy; 0 skips the decomposition.
    #[serde(default = "default_mc")]
    pub eval_mc: usize,
    /// pege-run: also write every episode path under `trajectories/`.
    #[serde(default)]
    pub dump_trajectories: bool,
    #[serde(default)]
    pub seeds: SeedsBlock,
    /// Quantile bands are reported at `δ/2` and `1 − δ/2`.
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub regret_scan: Option<RegretScanBlock>,
    #[serde(default)]
    pub gap_scan: Option<GapScanBlock>,
    #[serde(default)]
    pub concentration: Option<ConcentrationBlock>,
    #[serde(default)]
    pub incomplete_demo: Option<IncompleteBlock>,
    #[serde(default)]
    pub orlicz: Option<OrliczBlock>,
    #[serde(default)]
    pub riccati_check: Option<RiccatiCheckBlock>,
    #[serde(default)]
    pub hjb_check: Option<HjbCheckBlock>,
}

fn mat(rows: &Rows, what: &str) -> Result<DMatrix<f64>> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, Vec::len);
    if nr == 0 || nc == 0 || rows.iter().any(|r| r.len() != nc) {
        return Err(Error::Config(format!("{what} must be a non-empty rectangular matrix")));
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let theta = self.theta()?;
        self.cost_spec()?;
        self.grid()?;
        let bx = self.param_box()?;
        if !bx.contains(&theta) {
            return Err(Error::Config("true θ lies outside the parameter box".into()));
        }
        if self.x0.len() != theta.state_dim() {
            return Err(Error::Config(format!("x0 must have length {}", theta.state_dim())));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config("delta must lie in (0, 1)".into()));
        }
        if self.seeds.resolve().is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        self.schedule.validate()?;
        Ok(())
    }

    /// Config hash: SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    /// Replace the seed count, keeping the base seed.
    pub fn with_seed_count(mut self, count: usize) -> Self {
        self.seeds = SeedsBlock::Range {
            base: self.seeds.base(),
            count,
        };
        self
    }

    pub fn theta(&self) -> Result<ParamTheta> {
        ParamTheta::new(mat(&self.model.a, "model.a")?, mat(&self.model.b, "model.b")?)
    }

    pub fn param_box(&self) -> Result<ParamBox> {
        ParamBox::new(
            mat(&self.model.param_box.lower, "box.lower")?,
            mat(&self.model.param_box.upper, "box.upper")?,
        )
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.horizon, self.n_steps)
    }

    pub fn cost_spec(&self) -> Result<CostSpec> {
        Ok(match &self.cost {
            CostBlock::Quadratic { q, r, g } => CostSpec::SmoothQuadratic(QuadraticCost::new(
                mat(q, "cost.q")?,
                mat(r, "cost.r")?,
                mat(g, "cost.g")?,
            )?),
            CostBlock::Entropy { fbar0, terminal } => {
                let fbar0 = match fbar0 {
                    LinearBlock::Constant(c) => LinearCoefficient::Constant(DVector::from_vec(c.clone())),
                    LinearBlock::Affine { c, k } => LinearCoefficient::Affine {
                        c: DVector::from_vec(c.clone()),
                        k: mat(k, "cost.fbar0.k")?,
                    },
                };
                let terminal = match terminal {
                    None => TerminalCost::Zero,
                    Some(g) => TerminalCost::Quadratic(mat(g, "cost.terminal")?),
                };
                CostSpec::EntropyRegularized(EntropyCost { fbar0, terminal })
            }
        })
    }

    pub fn x0_vec(&self) -> DVector<f64> {
        DVector::from_vec(self.x0.clone())
    }

    fn exploration_spec(&self) -> Result<ExplorationSpec> {
        let e = self
            .exploration
            .as_ref()
            .ok_or_else(|| Error::Config("this experiment needs an `exploration` block".into()))?;
        Ok(match &e.partition {
            Some(p) => ExplorationSpec {
                actions: e.actions.clone(),
                partition: p.clone(),
            },
            None => ExplorationSpec::uniform(e.actions.clone(), self.horizon),
        })
    }

    /// Learner config for one seed.
    pub fn pege_config(&self, seed: u64) -> Result<PegeConfig> {
        let theta = self.theta()?;
        let (d, p) = (theta.state_dim(), theta.action_dim());
        let param_box = self.param_box()?;
        let prior = match &self.prior {
            Some(pr) => Prior {
                theta0_hat: mat(&pr.theta0_hat, "prior.theta0_hat")?,
                v0: mat(&pr.v0, "prior.v0")?,
            },
            None => Prior::standard(d, p),
        };
        let mode = match &self.truncation.mode {
            TruncModeBlock::Clamp => TruncationMode::Clamp,
            TruncModeBlock::Fallback(f) => TruncationMode::Fallback(mat(f, "truncation.fallback")?),
        };
        let truncation = TruncationSpec::around_box(&param_box, self.truncation.margin, mode)?;
        let cfg = PegeConfig {
            theta,
            param_box,
            cost: self.cost_spec()?,
            grid: self.grid()?,
            x0: self.x0_vec(),
            prior,
            truncation,
            exploration: self.exploration_spec()?,
            schedule: self.schedule,
            n_episodes: self.n_episodes,
            optional_update: self.optional_update,
            greedy_only: self.greedy_only,
            seed,
            hjb: self.hjb,
            vstar_mc: self.vstar_mc,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn optimal_value(&self) -> Result<OptimalValue> {
        estimate_optimal_value(
            &self.theta()?,
            &self.cost_spec()?,
            &self.grid()?,
            &self.x0_vec(),
            self.vstar_mc,
            self.seeds.base() ^ VSTAR_SALT,
            &self.hjb,
        )
    }
}

/// Least-squares fit of `ln y = slope · ln x + intercept`.
pub fn loglog_fit(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    linear_fit(&pts)
}

fn linear_fit(pts: &[(f64, f64)]) -> Option<(f64, f64)> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Linear-interpolation sample quantile, `q ∈ [0, 1]`.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    let h = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn s<T: ToString>(v: T) -> String {
    v.to_string()
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    let f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(f, v)?;
    Ok(())
}

fn frob(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm()
}

// ---------------------------------------------------------------------------
// pege-run

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub regret: f64,
    pub theta_error: f64,
    pub decomposition: Option<crate::pege::RegretDecomposition>,
}

/// Run the learner once per seed, with the decomposition when `eval_mc > 0`.
pub fn pege_runs(cfg: &ExperimentConfig) -> Result<(OptimalValue, Vec<(RunSummary, RegretLedger)>)> {
    let v_star = cfg.optimal_value()?;
    let runs = cfg
        .seeds
        .resolve()
        .into_par_iter()
        .map(|seed| {
            let pc = cfg.pege_config(seed)?;
            let mut ledger = run_pege_with_baseline(&pc, v_star)?;
            let decomposition = if cfg.eval_mc > 0 {
                evaluate_ledger(&pc, &mut ledger, cfg.eval_mc)?;
                Some(regret_decompose(&ledger)?)
            } else {
                None
            };
            let last = ledger.records.last().expect("at least one episode");
            let summary = RunSummary {
                seed,
                regret: ledger.regret(),
                theta_error: frob(&last.theta_tilde, &pc.theta.stacked()),
                decomposition,
            };
            log::info!("pege-run seed {seed}: R(N) = {:.4}", summary.regret);
            Ok((summary, ledger))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((v_star, runs))
}

fn write_pege_run(cfg: &ExperimentConfig, out: &Path, hash: &str) -> Result<Value> {
    let (v_star, runs) = pege_runs(cfg)?;
    let n_seeds = runs.len();
    let mut table = Table::new(&[
        "seed",
        "n_episodes",
        "regret",
        "noise",
        "exploration",
        "exploitation",
        "theta_error",
        "n_seeds",
        "config_hash",
    ]);
    for (r, ledger) in &runs {
        let name = if n_seeds == 1 {
            "ledger.csv".to_string()
        } else {
            format!("ledger_seed_{}.csv", r.seed)
        };
        ledger.write_csv(BufWriter::new(File::create(out.join(name))?))?;
        let stats_name = if n_seeds == 1 {
            "stats.json".to_string()
        } else {
            format!("stats_seed_{}.json", r.seed)
        };
        write_json(&out.join(stats_name), &ledger.final_stats.snapshot()?)?;
        if cfg.dump_trajectories {
            let dir = out.join("trajectories");
            std::fs::create_dir_all(&dir)?;
            let pc = cfg.pege_config(r.seed)?;
            for m in 1..=ledger.n_episodes() {
                replay_episode(&pc, ledger, m)?.save_csv(dir.join(format!("seed_{}_ep_{m}.csv", r.seed)))?;
            }
        }
        let d = r.decomposition;
        let f = |v: Option<f64>| v.map_or_else(|| "NaN".into(), s);
        table.push(vec![
            s(r.seed),
            s(ledger.n_episodes()),
            s(r.regret),
            f(d.map(|d| d.noise)),
            f(d.map(|d| d.exploration)),
            f(d.map(|d| d.exploitation)),
            s(r.theta_error),
            s(n_seeds),
            s(hash),
        ]);
    }
    table.write(&out.join("runs.csv"))?;

    let regrets: Vec<f64> = runs.iter().map(|r| r.0.regret).collect();
    let (mean, se) = mean_se(&regrets);
    let mut summary = json!({
        "experiment": "pege-run",
        "n_seeds": n_seeds,
        "config_hash": hash,
        "v_star": v_star,
        "mean_regret": mean,
        "regret_se": se,
        "regret_band": [quantile(&regrets, cfg.delta / 2.0), quantile(&regrets, 1.0 - cfg.delta / 2.0)],
    });
    if cfg.eval_mc > 0 {
        let noise: Vec<f64> = runs.iter().filter_map(|r| r.0.decomposition.map(|d| d.noise)).collect();
        let (nm, nse) = mean_se(&noise);
        summary["noise_term"] = json!({ "mean": nm, "se": nse, "z": if nse > 0.0 { nm / nse } else { 0.0 } });
        let n = cfg.n_episodes;
        let diffs = DMatrix::from_fn(n_seeds, n, |i, m| {
            let rec = &runs[i].1.records[m];
            rec.cost - rec.j_value.expect("evaluated").mean
        });
        let per_episode: Vec<f64> = noise.iter().map(|v| v / n as f64).collect();
        let sd = quantile(&per_episode.iter().map(|v| v.abs()).collect::<Vec<_>>(), 0.5).max(1e-12);
        let eps: Vec<f64> = [0.5, 1.0, 2.0, 3.0, 4.0].iter().map(|c| c * sd).collect();
        let rep = bernstein_tail_check(&diffs, &eps)?;
        rep.write_csv(BufWriter::new(File::create(out.join("bernstein.csv"))?))?;
        summary["bernstein"] = serde_json::to_value(&rep)?;
    }
    Ok(summary)
}

// ---------------------------------------------------------------------------
// regret-scan

#[derive(Debug, Clone, Serialize)]
pub struct RegretPoint {
    pub n: usize,
    pub mean: f64,
    pub se: f64,
    pub band: (f64, f64),
    pub median: f64,
    /// Median over seeds of `R(N)/(ln N)²`.
    pub median_log2_ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScheduleScan {
    pub schedule: Schedule,
    pub points: Vec<RegretPoint>,
    pub slope: Option<f64>,
}

fn schedule_label(s: &Schedule) -> String {
    match s {
        Schedule::PowerFloor { r } => format!("power_floor_r{r}"),
        Schedule::Doubling => "doubling".into(),
    }
}

/// Regret paths from a single run to `max N` per seed; every `R(N)` on the
/// grid is read off that path (the learner never looks at `N`).
pub fn regret_paths(cfg: &ExperimentConfig, v_star: OptimalValue, n_max: usize) -> Result<Vec<Vec<f64>>> {
    cfg.seeds
        .resolve()
        .into_par_iter()
        .map(|seed| {
            let mut pc = cfg.pege_config(seed)?;
            pc.n_episodes = n_max;
            let path = run_pege_with_baseline(&pc, v_star)?.regret_path();
            log::info!(
                "{} seed {seed}: R({n_max}) = {:.4}",
                schedule_label(&pc.schedule),
                path[n_max - 1]
            );
            Ok(path)
        })
        .collect()
}

fn summarize_paths(paths: &[Vec<f64>], n_grid: &[usize], delta: f64) -> Vec<RegretPoint> {
    n_grid
        .iter()
        .map(|&n| {
            let vals: Vec<f64> = paths.iter().map(|p| p[n - 1]).collect();
            let (mean, se) = mean_se(&vals);
            let ratios: Vec<f64> = vals.iter().map(|v| v / (n as f64).ln().powi(2)).collect();
            RegretPoint {
                n,
                mean,
                se,
                band: (quantile(&vals, delta / 2.0), quantile(&vals, 1.0 - delta / 2.0)),
                median: quantile(&vals, 0.5),
                median_log2_ratio: quantile(&ratios, 0.5),
            }
        })
        .collect()
}

pub fn regret_scan(cfg: &ExperimentConfig) -> Result<Vec<ScheduleScan>> {
    let block = cfg
        .regret_scan
        .as_ref()
        .ok_or_else(|| Error::Config("regret-scan needs a `regret_scan` block".into()))?;
    let n_max = *block
        .n_grid
        .iter()
        .max()
        .ok_or_else(|| Error::Config("n_grid is empty".into()))?;
    if block.n_grid.contains(&0) {
        return Err(Error::Config("n_grid entries must be positive".into()));
    }
    let v_star = cfg.optimal_value()?;
    block
        .schedules
        .iter()
        .map(|sched| {
            let mut c = cfg.clone();
            c.schedule = *sched;
            let paths = regret_paths(&c, v_star, n_max)?;
            let points = summarize_paths(&paths, &block.n_grid, cfg.delta);
            let xs: Vec<f64> = points.iter().map(|p| p.n as f64).collect();
            let ys: Vec<f64> = points.iter().map(|p| p.mean).collect();
            Ok(ScheduleScan {
                schedule: *sched,
                slope: loglog_fit(&xs, &ys).map(|f| f.0),
                points,
            })
        })
        .collect()
}

fn write_regret_scan(cfg: &ExperimentConfig, out: &Path, hash: &str) -> Result<Value> {
    let scans = regret_scan(cfg)?;
    let n_seeds = cfg.seeds.resolve().len();
    let mut table = Table::new(&[
        "schedule",
        "n",
        "mean_regret",
        "se",
        "band_lo",
        "band_hi",
        "median_regret",
        "median_regret_over_log2",
        "n_seeds",
        "config_hash",
    ]);
    for sc in &scans {
        for p in &sc.points {
            table.push(vec![
                schedule_label(&sc.schedule),
                s(p.n),
                s(p.mean),
                s(p.se),
                s(p.band.0),
                s(p.band.1),
                s(p.median),
                s(p.median_log2_ratio),
                s(n_seeds),
                s(hash),
            ]);
        }
    }
    table.write(&out.join("regret_scan.csv"))?;
    Ok(json!({
        "experiment": "regret-scan",
        "n_seeds": n_seeds,
        "config_hash": hash,
        "schedules": scans,
    }))
}

// ---------------------------------------------------------------------------
// gap-scan

/// Perturbation study around `θ₀`.
#[derive(Debug, Clone)]
pub struct GapSpec {
    pub center: ParamTheta,
    pub radii: Vec<f64>,
    /// Unit-Frobenius directions in stacked `[A B]` space.
    pub directions: Vec<DMatrix<f64>>,
    pub expected_exponent: f64,
    pub n_pairs: usize,
    pub seed: u64,
    /// Average each direction with its negative on the same noise, which
    /// cancels the pathwise first-order term of the cost difference.
    pub antithetic: bool,
}

impl GapSpec {
    pub fn random_directions(d: usize, dz: usize, count: usize, seed: u64) -> Vec<DMatrix<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let m: DMatrix<f64> = DMatrix::from_fn(d, dz, |_, _| StandardNormal.sample(&mut rng));
                let n = m.norm();
                m / n
            })
            .collect()
    }

    /// All perturbed parameters must stay inside `K`.
    pub fn check_inside(&self, k: &TruncationSpec) -> Result<()> {
        let c = self.center.stacked();
        for r in &self.radii {
            for dir in &self.directions {
                let sign_ok = |s: f64| k.contains(&(&c + dir * (s * r)));
                if !sign_ok(1.0) || (self.antithetic && !sign_ok(-1.0)) {
                    return Err(Error::Config(format!("θ₀ + {r}·direction leaves the truncation box")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GapPoint {
    pub radius: f64,
    pub mean_gap: f64,
    pub se: f64,
    pub per_direction: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GapScanResult {
    pub points: Vec<GapPoint>,
    pub slope: Option<f64>,
    /// `exp(intercept)`: fitted `L_Θ`.
    pub fitted_constant: Option<f64>,
    pub expected_exponent: f64,
    pub used_radii: Vec<f64>,
    pub inconclusive: bool,
}

/// `J(ψ_θ; θ₀) − J(ψ_{θ₀}; θ₀)` on common random numbers.
pub fn gap_scan(
    spec: &GapSpec,
    cost: &CostSpec,
    grid: &TimeGrid,
    x0: &DVector<f64>,
    hjb: &HjbOptions,
) -> Result<GapScanResult> {
    let d = spec.center.state_dim();
    let base = greedy_policy(&spec.center, cost, grid, hjb)?;
    let c = spec.center.stacked();
    let mut points = Vec::with_capacity(spec.radii.len());
    for &radius in &spec.radii {
        let mut gaps = Vec::new();
        let mut var = 0.0;
        for dir in &spec.directions {
            let th = ParamTheta::from_stacked(&(&c + dir * radius), d)?;
            let pol = greedy_policy(&th, cost, grid, hjb)?;
            let est = if spec.antithetic {
                let th_neg = ParamTheta::from_stacked(&(&c - dir * radius), d)?;
                let neg = greedy_policy(&th_neg, cost, grid, hjb)?;
                let terms = [(&pol, 0.5), (&neg, 0.5), (&base, -1.0)];
                mc_contrast(&spec.center, &terms, cost, grid, x0, spec.n_pairs, spec.seed)?
            } else {
                mc_paired_difference(&spec.center, &pol, &base, cost, grid, x0, spec.n_pairs, spec.seed)?
            };
            gaps.push(est.mean);
            var += est.se * est.se;
        }
        let k = gaps.len() as f64;
        let mean_gap = gaps.iter().sum::<f64>() / k;
        log::info!("gap-scan radius {radius}: gap {mean_gap:.4e}");
        points.push(GapPoint {
            radius,
            mean_gap,
            se: var.sqrt() / k,
            per_direction: gaps,
        });
    }
    let used: Vec<&GapPoint> = points
        .iter()
        .filter(|p| p.radius > 0.0 && p.mean_gap > 5.0 * p.se)
        .collect();
    let xs: Vec<f64> = used.iter().map(|p| p.radius).collect();
    let ys: Vec<f64> = used.iter().map(|p| p.mean_gap).collect();
    let fit = loglog_fit(&xs, &ys);
    Ok(GapScanResult {
        slope: fit.map(|f| f.0),
        fitted_constant: fit.map(|f| f.1.exp()),
        expected_exponent: spec.expected_exponent,
        used_radii: xs,
        inconclusive: fit.is_none(),
        points,
    })
}

fn gap_spec(cfg: &ExperimentConfig) -> Result<GapSpec> {
    let block = cfg
        .gap_scan
        .as_ref()
        .ok_or_else(|| Error::Config("gap-scan needs a `gap_scan` block".into()))?;
    let center = cfg.theta()?;
    let (d, p) = (center.state_dim(), center.action_dim());
    let spec = GapSpec {
        directions: GapSpec::random_directions(d, d + p, block.n_directions, block.direction_seed),
        center,
        radii: block.radii.clone(),
        expected_exponent: block.expected_exponent,
        n_pairs: block.n_pairs,
        seed: cfg.seeds.base() ^ EVAL_SALT,
        antithetic: block.antithetic,
    };
    let mode = TruncationMode::Clamp;
    spec.check_inside(&TruncationSpec::around_box(
        &cfg.param_box()?,
        cfg.truncation.margin,
        mode,
    )?)?;
    Ok(spec)
}

fn write_gap_scan(cfg: &ExperimentConfig, out: &Path, hash: &str) -> Result<Value> {
    let spec = gap_spec(cfg)?;
    let res = gap_scan(&spec, &cfg.cost_spec()?, &cfg.grid()?, &cfg.x0_vec(), &cfg.hjb)?;
    let mut table = Table::new(&["radius", "mean_gap", "se", "n_pairs", "n_directions", "config_hash"]);
    for p in &res.points {
        table.push(vec![
            s(p.radius),
            s(p.mean_gap),
            s(p.se),
            s(spec.n_pairs),
            s(spec.directions.len()),
            s(hash),
        ]);
    }
    table.write(&out.join("gap_scan.csv"))?;
    Ok(json!({
        "experiment": "gap-scan",
        "n_seeds": 1,
        "config_hash": hash,
        "result": res,
    }))
}

// ---------------------------------------------------------------------------
// concentration

#[derive(Debug, Clone, Serialize)]
pub struct ConcentrationPoint {
    pub m: usize,
    /// Median over seeds of `λ_min(G_m) |θ̂_m − θ|²`.
    pub median_ratio: f64,
    pub q90_ratio: f64,
    pub ln_m: f64,
    pub median_lambda_min: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConcentrationResult {
    pub points: Vec<ConcentrationPoint>,
    /// `max_m q90(m) / ln m`.
    pub fitted_c: f64,
    /// Largest increase `(q90/ln m)_j / (q90/ln m)_i` over `i < j`.
    pub upward_drift: f64,
    /// `max / min` of `q90/ln m` over the grid.
    pub spread: f64,
    /// Slope of median `λ_min(G_m)` against the exploration count.
    pub lambda_slope: f64,
    /// `Λ_min(ψᵉ, θ)` by Monte Carlo.
    pub information_value: f64,
}

/// Pure exploration: every episode runs `ψᵉ`.
pub fn concentration_scan(cfg: &ExperimentConfig) -> Result<ConcentrationResult> {
    let block = cfg
        .concentration
        .as_ref()
        .ok_or_else(|| Error::Config("concentration needs a `concentration` block".into()))?;
    let grid_m = &block.m_grid;
    if grid_m.is_empty() || grid_m.iter().any(|&m| m < 2) {
        return Err(Error::Config("m_grid entries must be at least 2".into()));
    }
    let m_max = *grid_m.iter().max().expect("non-empty");
    let pc = cfg.pege_config(cfg.seeds.base())?;
    let explore = make_exploration_policy(&pc.exploration)?;
    let truth = pc.theta.stacked();
    let per_seed: Vec<Vec<(f64, f64)>> = cfg
        .seeds
        .resolve()
        .into_par_iter()
        .map(|seed| {
            let mut stats = init_stats(&pc.prior.theta0_hat, &pc.prior.v0)?;
            let mut out = Vec::with_capacity(grid_m.len());
            for m in 1..=m_max {
                let traj = simulate_episode(
                    &pc.theta,
                    &explore,
                    &pc.grid,
                    &pc.x0,
                    Some(&mut NoiseStream::new(seed, m as u64)),
                )?;
                stats = update_stats(&stats, &traj)?;
                if grid_m.contains(&m) {
                    let lam = min_eigen(&stats);
                    let err = frob(&map_estimate(&stats)?, &truth);
                    out.push((lam * err * err, lam));
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut sorted_m = grid_m.clone();
    sorted_m.sort_unstable();
    sorted_m.dedup();
    let points: Vec<ConcentrationPoint> = sorted_m
        .iter()
        .enumerate()
        .map(|(j, &m)| {
            let ratios: Vec<f64> = per_seed.iter().map(|v| v[j].0).collect();
            let lams: Vec<f64> = per_seed.iter().map(|v| v[j].1).collect();
            ConcentrationPoint {
                m,
                median_ratio: quantile(&ratios, 0.5),
                q90_ratio: quantile(&ratios, 0.9),
                ln_m: (m as f64).ln(),
                median_lambda_min: quantile(&lams, 0.5),
            }
        })
        .collect();
    let normalized: Vec<f64> = points.iter().map(|p| p.q90_ratio / p.ln_m).collect();
    let fitted_c = normalized.iter().copied().fold(0.0, f64::max);
    let min = normalized.iter().copied().fold(f64::INFINITY, f64::min);
    let mut drift = 1.0f64;
    for i in 0..normalized.len() {
        for j in i + 1..normalized.len() {
            drift = drift.max(normalized[j] / normalized[i]);
        }
    }
    let pts: Vec<(f64, f64)> = points.iter().map(|p| (p.m as f64, p.median_lambda_min)).collect();
    let lambda_slope = linear_fit(&pts).map_or(f64::NAN, |f| f.0);
    let info = compute_information_value(
        &explore,
        &pc.theta,
        &pc.grid,
        &pc.x0,
        block.info_mc,
        cfg.seeds.base() ^ EVAL_SALT,
    )?;
    Ok(ConcentrationResult {
        points,
        fitted_c,
        upward_drift: drift,
        spread: fitted_c / min,
        lambda_slope,
        information_value: info.lambda_min,
    })
}

fn write_concentration(cfg: &ExperimentConfig, out: &Path, hash: &str) -> Result<Value> {
    let res = concentration_scan(cfg)?;
    let n_seeds = cfg.seeds.resolve().len();
    let mut table = Table::new(&[
        "m",
        "median_ratio",
        "q90_ratio",
        "ln_m",
        "q90_over_ln_m",
        "median_lambda_min",
        "n_seeds",
        "config_hash",
    ]);
    for p in &res.points {
        table.push(vec![
            s(p.m),
            s(p.median_ratio),
            s(p.q90_ratio),
            s(p.ln_m),
            s(p.q90_ratio / p.ln_m),
            s(p.median_lambda_min),
            s(n_seeds),
            s(hash),
        ]);
    }
    table.write(&out.join("concentration.csv"))?;
    Ok(json!({
        "experiment": "concentration",
        "n_seeds": n_seeds,
        "config_hash": hash,
        "result": res,
    }))
}

// ---------------------------------------------------------------------------
// incomplete-demo

#[derive(Debug, Clone, Serialize)]
pub struct ArmPoint {
    pub n: usize,
    pub mean_regret: f64,
    pub se: f64,
    /// Median over seeds of `max_j |B̂_j − B_j|` over the unexcited columns.
    pub median_b_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct IncompleteDemoResult {
    /// Action components whose prior mean column is zero.
    pub unexcited: Vec<usize>,
    /// The matching precision entries never moved from the prior, in any
    /// seed, after any episode.
    pub prior_preserved: bool,
    pub greedy: Vec<ArmPoint>,
    pub full: Vec<ArmPoint>,
    pub greedy_slope: Option<f64>,
    pub full_slope: Option<f64>,
}

fn arm_points(ledgers: &[RegretLedger], n_grid: &[usize], cols: &[usize], truth: &DMatrix<f64>) -> Vec<ArmPoint> {
    let paths: Vec<Vec<f64>> = ledgers.iter().map(|l| l.regret_path()).collect();
    n_grid
        .iter()
        .map(|&n| {
            let vals: Vec<f64> = paths.iter().map(|p| p[n - 1]).collect();
            let (mean, se) = mean_se(&vals);
            let errs: Vec<f64> = ledgers
                .iter()
                .map(|l| {
                    let th = &l.records[n - 1].theta_hat;
                    cols.iter()
                        .map(|&c| (th.column(c) - truth.column(c)).amax())
                        .fold(0.0, f64::max)
                })
                .collect();
            ArmPoint {
                n,
                mean_regret: mean,
                se,
                median_b_error: quantile(&errs, 0.5),
            }
        })
        .collect()
}

/// Greedy-only ablation against full PEGE on the same model.
pub fn incomplete_demo(cfg: &ExperimentConfig) -> Result<IncompleteDemoResult> {
    let block = cfg
        .incomplete_demo
        .as_ref()
        .ok_or_else(|| Error::Config("incomplete-demo needs an `incomplete_demo` block".into()))?;
    let n_max = *block
        .n_grid
        .iter()
        .max()
        .ok_or_else(|| Error::Config("n_grid is empty".into()))?;
    let base = cfg.pege_config(cfg.seeds.base())?;
    let d = base.theta.state_dim();
    let p = base.theta.action_dim();
    let unexcited: Vec<usize> = (0..p)
        .filter(|&j| base.prior.theta0_hat.column(d + j).iter().all(|v| *v == 0.0))
        .collect();
    if unexcited.is_empty() {
        return Err(Error::Config(
            "the prior must set at least one column of B̂₀ to zero".into(),
        ));
    }
    let v_star = cfg.optimal_value()?;
    let run_arm = |greedy_only: bool| -> Result<Vec<RegretLedger>> {
        cfg.seeds
            .resolve()
            .into_par_iter()
            .map(|seed| {
                let mut pc = cfg.pege_config(seed)?;
                pc.greedy_only = greedy_only;
                pc.n_episodes = n_max;
                run_pege_with_baseline(&pc, v_star)
            })
            .collect()
    };
    let greedy = run_arm(true)?;
    let full = run_arm(false)?;
    let cols: Vec<usize> = unexcited.iter().map(|j| d + j).collect();
    let prior_preserved = greedy.iter().all(|l| {
        l.records
            .iter()
            .all(|r| cols.iter().all(|&c| r.precision_diag[c] == l.initial_precision_diag[c]))
    });
    let truth = base.theta.stacked();
    let greedy_pts = arm_points(&greedy, &block.n_grid, &cols, &truth);
    let full_pts = arm_points(&full, &block.n_grid, &cols, &truth);
    let slope = |pts: &[ArmPoint]| {
        let xs: Vec<f64> = pts.iter().map(|p| p.n as f64).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.mean_regret).collect();
        loglog_fit(&xs, &ys).map(|f| f.0)
    };
    Ok(IncompleteDemoResult {
        greedy_slope: slope(&greedy_pts),
        full_slope: slope(&full_pts),
        unexcited,
        prior_preserved,
        greedy: greedy_pts,
        full: full_pts,
    })
}

fn write_incomplete_demo(cfg: &ExperimentConfig, out: &Path, hash: &str) -> Result<Value> {
    let res = incomplete_demo(cfg)?;
    let n_seeds = cfg.seeds.resolve().len();
    let mut table = Table::new(&[
        "arm",
        "n",
        "mean_regret",
        "se",
        "median_b_error",
        "n_seeds",
        "config_hash",
    ]);
    for (arm, pts) in [("greedy_only", &res.greedy), ("pege", &res.full)] {
        for p in pts {
            table.push(vec![
                s(arm),
                s(p.n),
                s(p.mean_regret),
                s(p.se),
                s(p.median_b_error),
                s(n_seeds),
                s(hash),
            ]);
        }
    }
    table.write(&out.join("incomplete_demo.csv"))?;
    let summary = json!({
        "experiment": "incomplete-demo",
        "n_seeds": n_seeds,
        "config_hash": hash,
        "result": res,
    });
    write_json(&out.join("summary.json"), &summary)?;
    if !res.prior_preserved {
        return Err(Error::CheckFailed(
            "precision entry of an unexcited action moved under greedy-only play".into(),
        ));
    }
    Ok(summary)
}

// ---------------------------------------------------------------------------
// orlicz

#[derive(Debug, Clone, Serialize)]
pub struct OrliczReport {
    pub prefix: usize,
    /// Centered episode cost `ℓ − J(Ψ; θ)` of episode `prefix + 1`.
    pub q1: StratifiedOrlicz,
    pub q2: StratifiedOrlicz,
    pub stratum_values: Vec<f64>,
}

/// Conditional Orlicz norms of the next-episode cost deviation: each stratum
/// freezes the noise of the first `prefix` episodes (one seed per stratum)
/// and redraws only the probed episode.
pub fn orlicz_diagnostic(cfg: &ExperimentConfig) -> Result<OrliczReport> {
    let block = cfg
        .orlicz
        .as_ref()
        .ok_or_else(|| Error::Config("orlicz needs an `orlicz` block".into()))?;
    if block.n_strata == 0 {
        return Err(Error::Config("n_strata must be positive".into()));
    }
    let v_star = cfg.optimal_value()?;
    let base = cfg.seeds.base();
    let strata: Vec<(Vec<f64>, f64)> = (0..block.n_strata as u64)
        .map(|i| {
            let mut pc = cfg.pege_config(base + i)?;
            let policy = if block.prefix == 0 {
                next_policy(&pc, &empty_ledger(&pc, v_star)?)?
            } else {
                pc.n_episodes = block.prefix;
                next_policy(&pc, &run_pege_with_baseline(&pc, v_star)?)?
            };
            let tail_seed = (base + i) ^ 0x0A11_CE5E_ED00_0003;
            let samples = mc_cost_samples(&pc.theta, &policy, &pc.cost, &pc.grid, &pc.x0, block.n_inner, tail_seed)?;
            let j = mc_policy_value(
                &pc.theta,
                &policy,
                &pc.cost,
                &pc.grid,
                &pc.x0,
                cfg.eval_mc.max(2),
                (base + i) ^ EVAL_SALT,
            )?;
            Ok((samples.iter().map(|v| v - j.mean).collect(), j.mean))
        })
        .collect::<Result<_>>()?;
    let samples: Vec<Vec<f64>> = strata.iter().map(|s| s.0.clone()).collect();
    Ok(OrliczReport {
        prefix: block.prefix,
        q1: estimate_stratified_orlicz(&samples, 1)?,
        q2: estimate_stratified_orlicz(&samples, 2)?,
        stratum_values: strata.iter().map(|s| s.1).collect(),
    })
}

fn empty_ledger(pc: &PegeConfig, v_star: OptimalValue) -> Result<RegretLedger> {
    Ok(RegretLedger {
        records: Vec::new(),
        v_star,
        greedy_thetas: Vec::new(),
        initial_precision_diag: Vec::new(),
        final_stats: init_stats(&pc.prior.theta0_hat, &pc.prior.v0)?,
    })
}

fn write_orlicz(cfg: &ExperimentConfig, out: &Path, hash: &str) -> Result<Value> {
    let rep = orlicz_diagnostic(cfg)?;
    write_json(&out.join("orlicz.json"), &rep)?;
    let mut table = Table::new(&["stratum", "k_hat_q1", "k_hat_q2", "j_value", "n_samples", "config_hash"]);
    for (i, ((a, b), j)) in rep
        .q1
        .strata
        .iter()
        .zip(&rep.q2.strata)
        .zip(&rep.stratum_values)
        .enumerate()
    {
        table.push(vec![s(i), s(a.k_hat), s(b.k_hat), s(j), s(a.n_samples), s(hash)]);
    }
    table.write(&out.join("orlicz_strata.csv"))?;
    Ok(json!({
        "experiment": "orlicz",
        "n_seeds": rep.q1.strata.len(),
        "config_hash": hash,
        "k_max_q1": rep.q1.k_max,
        "k_max_q2": rep.q2.k_max,
        "surrogate": rep.q1.surrogate,
    }))
}

// ---------------------------------------------------------------------------
// riccati-check

#[derive(Debug, Clone, Serialize)]
pub struct RiccatiCheck {
    pub value: f64,
    pub p0: Vec<f64>,
    pub refinement_values: Vec<(usize, f64)>,
    /// `log₂` of successive difference ratios under step halving.
    pub observed_orders: Vec<f64>,
    pub mc_value: crate::sde::McEstimate,
    pub mc_z: f64,
}

pub fn riccati_check(cfg: &ExperimentConfig) -> Result<(RiccatiCheck, crate::riccati::RiccatiSolution)> {
    let cost = match cfg.cost_spec()? {
        CostSpec::SmoothQuadratic(c) => c,
        _ => return Err(Error::Config("riccati-check needs a quadratic cost".into())),
    };
    let theta = cfg.theta()?;
    let x0 = cfg.x0_vec();
    let sol = solve_riccati(&cost, &theta, &cfg.grid()?)?;
    let refinements = cfg
        .riccati_check
        .as_ref()
        .map_or_else(|| vec![10, 20, 40, 80], |b| b.refinements.clone());
    let refinement_values = refinements
        .iter()
        .map(|&n| {
            Ok((
                n,
                solve_riccati(&cost, &theta, &TimeGrid::new(cfg.horizon, n)?)?.value(&x0),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let observed_orders = refinement_values
        .windows(3)
        .map(|w| ((w[0].1 - w[1].1).abs() / (w[1].1 - w[2].1).abs()).log2())
        .collect();
    let policy = crate::riccati::lq_policy(&sol, &theta, &cost)?;
    let spec = CostSpec::SmoothQuadratic(cost);
    let mc = mc_policy_value(
        &theta,
        &policy,
        &spec,
        &cfg.grid()?,
        &x0,
        cfg.vstar_mc.max(2),
        cfg.seeds.base() ^ VSTAR_SALT,
    )?;
    let value = sol.value(&x0);
    Ok((
        RiccatiCheck {
            value,
            p0: sol.p0().transpose().iter().copied().collect(),
            refinement_values,
            observed_orders,
            mc_z: (mc.mean - value) / mc.se.max(f64::MIN_POSITIVE),
            mc_value: mc,
        },
        sol,
    ))
}

fn write_riccati_check(cfg: &ExperimentConfig, out: &Path, hash: &str) -> Result<Value> {
    let (chk, sol) = riccati_check(cfg)?;
    sol.write_csv(BufWriter::new(File::create(out.join("riccati.csv"))?))?;
    let mut table = Table::new(&["n_steps", "value", "config_hash"]);
    for (n, v) in &chk.refinement_values {
        table.push(vec![s(n), s(v), s(hash)]);
    }
    table.write(&out.join("riccati_refinement.csv"))?;
    Ok(json!({
        "experiment": "riccati-check",
        "n_seeds": 1,
        "config_hash": hash,
        "result": chk,
    }))
}

// ---------------------------------------------------------------------------
// hjb-check

#[derive(Debug, Clone, Serialize)]
pub struct HjbCheck {
    pub value_at_x0: f64,
    pub residuals: Vec<(usize, f64)>,
    /// `residual(n_i) / residual(n_{i+1})`.
    pub residual_ratios: Vec<f64>,
    pub mc_value: crate::sde::McEstimate,
}

pub fn hjb_check(cfg: &ExperimentConfig) -> Result<(HjbCheck, crate::hjb::HjbSolution)> {
    let cost = match cfg.cost_spec()? {
        CostSpec::EntropyRegularized(c) => c,
        _ => return Err(Error::Config("hjb-check needs an entropy cost".into())),
    };
    let theta = cfg.theta()?;
    let block = cfg.hjb_check.clone().unwrap_or(HjbCheckBlock {
        refinements: vec![51, 101, 201],
        window: 1.0,
    });
    let sol = solve_hjb_entropy(&cost, &theta, &cfg.hjb.time_grid(cfg.horizon)?, &cfg.hjb)?;
    let residuals = block
        .refinements
        .iter()
        .map(|&n_x| {
            let opts = HjbOptions {
                n_x,
                n_t: None,
                ..cfg.hjb
            };
            let s = solve_hjb_entropy(&cost, &theta, &opts.time_grid(cfg.horizon)?, &opts)?;
            Ok((n_x, hjb_residual(&s, &cost, &theta, block.window)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let residual_ratios = residuals.windows(2).map(|w| w[0].1 / w[1].1).collect();
    let x0 = cfg.x0_vec();
    let i0 = ((x0[0] + sol.half_width()) / (2.0 * sol.half_width()) * (sol.n_x() - 1) as f64).round() as usize;
    let sol = std::sync::Arc::new(sol);
    let policy = entropy_policy(&sol, &theta, &cost)?;
    let spec = CostSpec::EntropyRegularized(cost);
    let mc = mc_policy_value(
        &theta,
        &policy,
        &spec,
        &cfg.grid()?,
        &x0,
        cfg.vstar_mc.max(2),
        cfg.seeds.base() ^ VSTAR_SALT,
    )?;
    let value_at_x0 = sol.value(0, i0.min(sol.n_x() - 1));
    let sol = std::sync::Arc::try_unwrap(sol).unwrap_or_else(|a| (*a).clone());
    Ok((
        HjbCheck {
            value_at_x0,
            residuals,
            residual_ratios,
            mc_value: mc,
        },
        sol,
    ))
}

fn write_hjb_check(cfg: &ExperimentConfig, out: &Path, hash: &str) -> Result<Value> {
    let (chk, sol) = hjb_check(cfg)?;
    sol.write_csv(BufWriter::new(File::create(out.join("hjb_value.csv"))?))?;
    let mut table = Table::new(&["n_x", "residual", "config_hash"]);
    for (n, r) in &chk.residuals {
        table.push(vec![s(n), s(r), s(hash)]);
    }
    table.write(&out.join("hjb_residual.csv"))?;
    Ok(json!({
        "experiment": "hjb-check",
        "n_seeds": 1,
        "config_hash": hash,
        "result": chk,
    }))
}

// ---------------------------------------------------------------------------

/// Run one experiment and write all of its outputs under `out`.
pub fn run_experiment(kind: ExperimentKind, cfg: &ExperimentConfig, out: &Path) -> Result<Value> {
    if let Some(k) = cfg.experiment {
        if k != kind {
            return Err(Error::Config(format!(
                "config declares experiment `{}` but `{}` was requested",
                k.name(),
                kind.name()
            )));
        }
    }
    cfg.validate()?;
    fs::create_dir_all(out)?;
    let hash = cfg.hash();
    write_json(
        &out.join("config_echo.json"),
        &json!({ "config": cfg, "config_hash": hash, "experiment": kind.name() }),
    )?;
    let summary = match kind {
        ExperimentKind::PegeRun => write_pege_run(cfg, out, &hash)?,
        ExperimentKind::RegretScan => write_regret_scan(cfg, out, &hash)?,
        ExperimentKind::GapScan => write_gap_scan(cfg, out, &hash)?,
        ExperimentKind::Concentration => write_concentration(cfg, out, &hash)?,
        ExperimentKind::IncompleteDemo => write_incomplete_demo(cfg, out, &hash)?,
        ExperimentKind::Orlicz => write_orlicz(cfg, out, &hash)?,
        ExperimentKind::RiccatiCheck => write_riccati_check(cfg, out, &hash)?,
        ExperimentKind::HjbCheck => write_hjb_check(cfg, out, &hash)?,
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const EXAMPLE: &str = r#"{
        "model": { "a": [[0.0]], "b": [[1.0, 1.0]],
                   "box": { "lower": [[-0.5, 0.5, 0.5]], "upper": [[0.5, 1.5, 1.5]] } },
        "cost": { "family": "quadratic", "q": [[0.0]], "r": [[1.0, 0.0], [0.0, 1.0]], "g": [[1.0]] },
        "horizon": 1.0,
        "n_steps": 100,
        "x0": [0.0],
        "exploration": { "actions": [[1.0, 0.0], [0.0, 1.0]] },
        "n_episodes": 5,
        "vstar_mc": 10,
        "eval_mc": 10
    }"#;

    #[test]
    fn parses_and_hashes() {
        let cfg = ExperimentConfig::from_json(EXAMPLE).unwrap();
        assert_eq!(cfg.hash().len(), 64);
        assert_eq!(cfg.hash(), ExperimentConfig::from_json(EXAMPLE).unwrap().hash());
        assert_eq!(
            cfg.clone().with_seed_count(7).seeds.resolve(),
            (1..=7).collect::<Vec<_>>()
        );
    }

    #[test]
    fn rejects_unknown_keys() {
        let bad = EXAMPLE.replace("\"n_episodes\"", "\"n_episodez\"");
        assert!(matches!(ExperimentConfig::from_json(&bad), Err(Error::Json(_))));
    }

    #[test]
    fn rejects_theta_outside_box() {
        let bad = EXAMPLE.replace("\"b\": [[1.0, 1.0]]", "\"b\": [[1.0, 2.0]]");
        assert!(matches!(ExperimentConfig::from_json(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn quantile_and_fit() {
        assert_eq!(quantile(&[3.0, 1.0, 2.0], 0.5), 2.0);
        assert_eq!(quantile(&[0.0, 10.0], 0.9), 9.0);
        let xs = [1.0, 2.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powi(2)).collect();
        let (s, c) = loglog_fit(&xs, &ys).unwrap();
        assert!((s - 2.0).abs() < 1e-12 && (c.exp() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn experiment_mismatch_rejected() {
        let mut cfg = ExperimentConfig::from_json(EXAMPLE).unwrap();
        cfg.experiment = Some(ExperimentKind::GapScan);
        let dir = tempfile::tempdir().unwrap();
        assert!(run_experiment(ExperimentKind::PegeRun, &cfg, dir.path()).is_err());
    }
}
