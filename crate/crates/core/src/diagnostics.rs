//! Empirical tail diagnostics: Orlicz norms and Bernstein-type tail checks.
//!
//! Conditional norms `‖X‖_{q,G}` are not directly estimable; the stratified
//! estimator below computes the unconditional norm within each stratum of
//! samples sharing a frozen history and reports the largest one. Outputs
//! carry a `surrogate` label saying so.

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ORLICZ_ITERATIONS: usize = 60;
pub const ORLICZ_MIN_SAMPLES: usize = 100;
/// Below this many seeds the Bernstein fit is flagged as unreliable.
pub const BERNSTEIN_MIN_SEEDS: usize = 30;

/// Empirical `ψ_q`-Orlicz norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrliczEstimate {
    pub q: u32,
    pub k_hat: f64,
    pub n_samples: usize,
    pub bracket: (f64, f64),
    /// All samples were zero.
    pub degenerate: bool,
}

fn orlicz_moment(samples: &[f64], q: f64, k: f64) -> f64 {
    samples.iter().map(|x| (x.abs().powf(q) / k.powf(q)).exp()).sum::<f64>() / samples.len() as f64
}

/// Solve `mean(exp(|Xᵢ|^q / K^q)) = 2` for `K` by bisection.
pub fn estimate_orlicz_norm(samples: &[f64], q: u32) -> Result<OrliczEstimate> {
    if q != 1 && q != 2 {
        return Err(Error::InvalidArgument(format!("Orlicz order must be 1 or 2, got {q}")));
    }
    if samples.len() < ORLICZ_MIN_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "need at least {ORLICZ_MIN_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("non-finite sample".into()));
    }
    let max = samples.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if max == 0.0 {
        return Ok(OrliczEstimate {
            q,
            k_hat: 0.0,
            n_samples: samples.len(),
            bracket: (0.0, 0.0),
            degenerate: true,
        });
    }
    let qf = q as f64;
    let (mut lo, mut hi) = (1e-6 * max, 10.0 * max);
    for _ in 0..ORLICZ_ITERATIONS {
        let mid = 0.5 * (lo + hi);
        if orlicz_moment(samples, qf, mid) > 2.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(OrliczEstimate {
        q,
        k_hat: 0.5 * (lo + hi),
        n_samples: samples.len(),
        bracket: (lo, hi),
        degenerate: false,
    })
}

/// Stratified surrogate for the conditional norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratifiedOrlicz {
    pub strata: Vec<OrliczEstimate>,
    /// Largest per-stratum estimate (surrogate for the essential supremum).
    pub k_max: f64,
    pub surrogate: String,
}

pub fn estimate_stratified_orlicz(strata: &[Vec<f64>], q: u32) -> Result<StratifiedOrlicz> {
    if strata.is_empty() {
        return Err(Error::InvalidArgument("no strata".into()));
    }
    let est = strata
        .iter()
        .map(|s| estimate_orlicz_norm(s, q))
        .collect::<Result<Vec<_>>>()?;
    let k_max = est.iter().map(|e| e.k_hat).fold(0.0, f64::max);
    Ok(StratifiedOrlicz {
        strata: est,
        k_max,
        surrogate: "unconditional norm within strata sharing a frozen history prefix".into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub eps: f64,
    pub emp_tail: f64,
    /// `N · min(ε², ε)`.
    pub bound_shape: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BernsteinReport {
    pub rows: Vec<TailRow>,
    pub n_seeds: usize,
    pub horizon: usize,
    /// Least-squares slope of `−ln(freq)` on the bound shape, over rows with
    /// `0 < freq < 1`.
    pub cprime_fit: Option<f64>,
    pub few_seeds: bool,
}

impl BernsteinReport {
    /// Rows `eps,emp_tail,bound_shape,cprime_fit`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["eps", "emp_tail", "bound_shape", "cprime_fit"])?;
        let c = self.cprime_fit.map_or_else(|| "NaN".to_string(), |c| c.to_string());
        for r in &self.rows {
            w.write_record([
                r.eps.to_string(),
                r.emp_tail.to_string(),
                r.bound_shape.to_string(),
                c.clone(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Empirical `P(|Σₙ Dₙ| ≥ Nε)` across rows of `diffs` (one seed per row).
pub fn bernstein_tail_check(diffs: &DMatrix<f64>, eps_grid: &[f64]) -> Result<BernsteinReport> {
    let (n_seeds, horizon) = diffs.shape();
    if n_seeds == 0 || horizon == 0 {
        return Err(Error::InvalidArgument("empty difference matrix".into()));
    }
    if eps_grid.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
        return Err(Error::InvalidArgument("ε grid must be positive".into()));
    }
    if diffs.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite difference".into()));
    }
    if n_seeds < BERNSTEIN_MIN_SEEDS {
        log::warn!("Bernstein check on {n_seeds} seeds; fit is unreliable");
    }
    let sums: Vec<f64> = diffs.row_iter().map(|r| r.sum().abs()).collect();
    let nf = horizon as f64;
    let rows: Vec<TailRow> = eps_grid
        .iter()
        .map(|&eps| TailRow {
            eps,
            emp_tail: sums.iter().filter(|&&s| s >= nf * eps).count() as f64 / n_seeds as f64,
            bound_shape: nf * (eps * eps).min(eps),
        })
        .collect();
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for r in rows.iter().filter(|r| r.emp_tail > 0.0 && r.emp_tail < 1.0) {
        sxy += r.bound_shape * -r.emp_tail.ln();
        sxx += r.bound_shape * r.bound_shape;
    }
    Ok(BernsteinReport {
        rows,
        n_seeds,
        horizon,
        cprime_fit: (sxx > 0.0).then(|| sxy / sxx),
        few_seeds: n_seeds < BERNSTEIN_MIN_SEEDS,
    })
}
