//! Matrix-normal posterior for the drift `θ = [A B]`.
//!
//! With prior `MN(θ̂₀, I_d, V₀)` and observed episodes, the posterior stays
//! matrix normal. It is carried by the precision
//! `G_m = V₀⁻¹ + Σₙ ∫ Z Zᵀ dt` and the accumulator
//! `S_m = (θ̂₀ V₀⁻¹)ᵀ + Σₙ ∫ Z dXᵀ`; the MAP estimate is `θ̂_m = (G_m⁻¹ S_m)ᵀ`.
//! All integrals use left endpoints of the observed path.

use nalgebra::{Cholesky, DMatrix, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::model::ParamBox;
use crate::policy::path_gram;
use crate::sde::Trajectory;

/// Sufficient statistics of the posterior after `m` episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    g: DMatrix<f64>,
    s: DMatrix<f64>,
    m: usize,
}

impl SufficientStats {
    /// Precision `G = V⁻¹`, `(d+p)×(d+p)`.
    pub fn precision(&self) -> &DMatrix<f64> {
        &self.g
    }

    /// Accumulator `S`, `(d+p)×d`.
    pub fn accumulator(&self) -> &DMatrix<f64> {
        &self.s
    }

    pub fn episodes(&self) -> usize {
        self.m
    }

    pub fn state_dim(&self) -> usize {
        self.s.ncols()
    }

    pub fn regressor_dim(&self) -> usize {
        self.g.nrows()
    }

    /// Column covariance `V = G⁻¹`.
    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        Ok(factor(&self.g)?.inverse())
    }

    /// `{m, G, S, theta_hat, lambda_min}` with row-major matrices.
    pub fn snapshot(&self) -> Result<StatsSnapshot> {
        let theta_hat = map_estimate(self)?;
        Ok(StatsSnapshot {
            m: self.m,
            g: row_major(&self.g),
            s: row_major(&self.s),
            theta_hat: row_major(&theta_hat),
            lambda_min: min_eigen(self),
        })
    }
}

/// JSON export of [`SufficientStats`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsSnapshot {
    pub m: usize,
    #[serde(rename = "G")]
    pub g: Vec<Vec<f64>>,
    #[serde(rename = "S")]
    pub s: Vec<Vec<f64>>,
    pub theta_hat: Vec<Vec<f64>>,
    pub lambda_min: f64,
}

pub(crate) fn row_major(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Prior statistics: `G = V₀⁻¹`, `S = (θ̂₀ V₀⁻¹)ᵀ`, `m = 0`.
pub fn init_stats(theta0_hat: &DMatrix<f64>, v0: &DMatrix<f64>) -> Result<SufficientStats> {
    let dz = v0.nrows();
    if !v0.is_square() {
        return Err(dim_err("V0", "square", format!("{:?}", v0.shape())));
    }
    if theta0_hat.ncols() != dz || theta0_hat.nrows() >= dz {
        return Err(dim_err(
            "prior mean",
            format!("d x {dz}"),
            format!("{}x{}", theta0_hat.nrows(), theta0_hat.ncols()),
        ));
    }
    if (v0 - v0.transpose()).amax() > 1e-12 * v0.amax().max(1.0) {
        return Err(Error::NotPositiveDefinite("V0 is not symmetric".into()));
    }
    let chol = Cholesky::new(v0.clone()).ok_or_else(|| Error::NotPositiveDefinite("V0".into()))?;
    if chol.l().diagonal().iter().any(|v| !(v.abs() > 0.0) || !v.is_finite()) {
        return Err(Error::NotPositiveDefinite("V0 is singular".into()));
    }
    let g = chol.inverse();
    let g = (&g + g.transpose()) * 0.5;
    let s = &g * theta0_hat.transpose();
    Ok(SufficientStats { g, s, m: 0 })
}

/// Add one episode: `G += Σ Z_k Z_kᵀ dt`, `S += Σ Z_k (X_{k+1} − X_k)ᵀ`.
pub fn update_stats(stats: &SufficientStats, traj: &Trajectory) -> Result<SufficientStats> {
    let d = stats.state_dim();
    let dz = stats.regressor_dim();
    if traj.state_dim() != d || traj.z_path().ncols() != dz {
        return Err(dim_err(
            "update_stats trajectory",
            format!("d={d}, d+p={dz}"),
            format!("d={}, d+p={}", traj.state_dim(), traj.z_path().ncols()),
        ));
    }
    let n = traj.grid().n_steps();
    let z = traj.z_path();
    let x = traj.x_path();
    let mut g = &stats.g + path_gram(z, traj.grid().dt(), n);
    // keep exact symmetry for the Cholesky step
    g = (&g + g.transpose()) * 0.5;
    let mut s = stats.s.clone();
    for k in 0..n {
        for j in 0..d {
            let dx = x[(k + 1, j)] - x[(k, j)];
            for i in 0..dz {
                s[(i, j)] += z[(k, i)] * dx;
            }
        }
    }
    Ok(SufficientStats { g, s, m: stats.m + 1 })
}

fn factor(g: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(g.clone()) {
        return Ok(c);
    }
    let dz = g.nrows();
    let jitter = 1e-12 * g.trace() / dz as f64;
    log::warn!("precision matrix not numerically PD; retrying Cholesky with jitter {jitter:.3e}");
    let mut jittered = g.clone();
    for i in 0..dz {
        jittered[(i, i)] += jitter;
    }
    Cholesky::new(jittered).ok_or_else(|| {
        let eig = SymmetricEigen::new(g.clone()).eigenvalues;
        let condition = eig.max().abs() / eig.min().abs();
        Error::Numerical { condition }
    })
}

/// Posterior mode `θ̂ = (G⁻¹ S)ᵀ`, a `d×(d+p)` matrix.
pub fn map_estimate(stats: &SufficientStats) -> Result<DMatrix<f64>> {
    Ok(factor(&stats.g)?.solve(&stats.s).transpose())
}

/// Smallest eigenvalue of the (symmetrized) precision.
pub fn min_eigen(stats: &SufficientStats) -> f64 {
    let sym = (&stats.g + stats.g.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.min()
}

#[derive(Debug, Clone, PartialEq)]
pub enum TruncationMode {
    /// Coordinatewise projection onto the box `K`.
    Clamp,
    /// Fall back to a fixed `θ₀` whenever the estimate leaves `K`.
    Fallback(DMatrix<f64>),
}

/// Truncation `ρ` onto a compact box `K` containing the parameter range.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncationSpec {
    lower: DMatrix<f64>,
    upper: DMatrix<f64>,
    mode: TruncationMode,
}

impl TruncationSpec {
    pub fn new(lower: DMatrix<f64>, upper: DMatrix<f64>, mode: TruncationMode) -> Result<Self> {
        if lower.shape() != upper.shape() {
            return Err(dim_err(
                "truncation box",
                format!("{:?}", lower.shape()),
                format!("{:?}", upper.shape()),
            ));
        }
        if lower.iter().zip(upper.iter()).any(|(l, u)| !(l < u)) {
            return Err(Error::InvalidArgument("truncation box needs lower < upper".into()));
        }
        if let TruncationMode::Fallback(t0) = &mode {
            if t0.shape() != lower.shape() {
                return Err(dim_err(
                    "fallback θ₀",
                    format!("{:?}", lower.shape()),
                    format!("{:?}", t0.shape()),
                ));
            }
        }
        Ok(Self { lower, upper, mode })
    }

    /// `K = Θ` enlarged by `margin` in every coordinate.
    pub fn around_box(param_box: &ParamBox, margin: f64, mode: TruncationMode) -> Result<Self> {
        if !(margin > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "truncation margin must be > 0, got {margin}"
            )));
        }
        Self::new(
            param_box.lower().add_scalar(-margin),
            param_box.upper().add_scalar(margin),
            mode,
        )
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DMatrix<f64> {
        &self.upper
    }

    pub fn mode(&self) -> &TruncationMode {
        &self.mode
    }

    pub fn contains(&self, theta: &DMatrix<f64>) -> bool {
        theta.shape() == self.lower.shape()
            && theta
                .iter()
                .zip(self.lower.iter().zip(self.upper.iter()))
                .all(|(v, (l, u))| l <= v && v <= u)
    }

    /// `K` strictly contains `Θ` (positive slack in every coordinate).
    pub fn strictly_contains(&self, param_box: &ParamBox) -> bool {
        param_box.lower().shape() == self.lower.shape()
            && self.lower.iter().zip(param_box.lower().iter()).all(|(k, t)| k < t)
            && self.upper.iter().zip(param_box.upper().iter()).all(|(k, t)| k > t)
    }
}

/// `ρ(θ̂, V)`: identity on `K`; clamp or fallback outside.
///
/// Both constructions ignore `V`; it is accepted to keep the truncation
/// signature general.
pub fn truncate(spec: &TruncationSpec, theta_hat: &DMatrix<f64>, _v: Option<&DMatrix<f64>>) -> DMatrix<f64> {
    if spec.contains(theta_hat) {
        return theta_hat.clone();
    }
    match &spec.mode {
        TruncationMode::Clamp => theta_hat.zip_zip_map(&spec.lower, &spec.upper, |v, l, u| v.clamp(l, u)),
        TruncationMode::Fallback(t0) => t0.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::TimeGrid;

    #[test]
    fn init_identity_prior() {
        let st = init_stats(&DMatrix::zeros(1, 3), &DMatrix::identity(3, 3)).unwrap();
        assert_eq!(st.precision(), &DMatrix::identity(3, 3));
        assert_eq!(st.accumulator(), &DMatrix::zeros(3, 1));
        assert_eq!(st.episodes(), 0);
    }

    #[test]
    fn init_scaled_prior() {
        let st = init_stats(
            &DMatrix::from_row_slice(1, 2, &[2.0, 3.0]),
            &DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.25]),
        )
        .unwrap();
        let close = |a: &DMatrix<f64>, b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12);
        assert!(close(st.precision(), &[2.0, 0.0, 0.0, 4.0]));
        assert!(close(st.accumulator(), &[4.0, 12.0]));
        assert!(close(&map_estimate(&st).unwrap(), &[2.0, 3.0]));
    }

    #[test]
    fn init_rejects_singular_prior() {
        let v0 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(
            init_stats(&DMatrix::zeros(1, 2), &v0),
            Err(Error::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn zero_regressor_only_counts() {
        let st = init_stats(&DMatrix::from_row_slice(1, 2, &[0.5, -1.0]), &DMatrix::identity(2, 2)).unwrap();
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let traj = Trajectory::from_paths(grid, DMatrix::zeros(5, 1), DMatrix::zeros(5, 2)).unwrap();
        let next = update_stats(&st, &traj).unwrap();
        assert_eq!(next.precision(), st.precision());
        assert_eq!(next.accumulator(), st.accumulator());
        assert_eq!(next.episodes(), 1);
    }

    #[test]
    fn synthetic_increment() {
        // d = p = 1, dt = 1: each coordinate gets ∫Z² = 3 and ∫Z dX = 6 once.
        let grid = TimeGrid::new(2.0, 2).unwrap();
        let s3 = 3f64.sqrt();
        let z = DMatrix::from_row_slice(3, 2, &[s3, 0.0, 0.0, s3, 0.0, 0.0]);
        let x = DMatrix::from_row_slice(3, 1, &[0.0, 2.0 * s3, 4.0 * s3]);
        let traj = Trajectory::from_paths(grid, x, z).unwrap();
        let st = init_stats(&DMatrix::zeros(1, 2), &DMatrix::identity(2, 2)).unwrap();
        let st = update_stats(&st, &traj).unwrap();
        let th = map_estimate(&st).unwrap();
        assert!((th[(0, 0)] - 1.5).abs() < 1e-12);
        assert!((th[(0, 1)] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn truncation_modes() {
        let spec = TruncationSpec::new(
            DMatrix::from_element(1, 1, -2.0),
            DMatrix::from_element(1, 1, 2.0),
            TruncationMode::Clamp,
        )
        .unwrap();
        let inside = DMatrix::from_element(1, 1, 1.25);
        assert_eq!(truncate(&spec, &inside, None), inside);
        assert_eq!(truncate(&spec, &DMatrix::from_element(1, 1, 5.0), None)[(0, 0)], 2.0);

        let spec = TruncationSpec::new(
            DMatrix::from_element(1, 1, -2.0),
            DMatrix::from_element(1, 1, 2.0),
            TruncationMode::Fallback(DMatrix::zeros(1, 1)),
        )
        .unwrap();
        assert_eq!(truncate(&spec, &DMatrix::from_element(1, 1, 5.0), None)[(0, 0)], 0.0);
        assert_eq!(truncate(&spec, &inside, None), inside);
    }

    #[test]
    fn min_eigen_examples() {
        let mut st = init_stats(&DMatrix::zeros(1, 2), &DMatrix::identity(2, 2)).unwrap();
        assert!((min_eigen(&st) - 1.0).abs() < 1e-12);
        st.g = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 5.0]);
        assert!((min_eigen(&st) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn snapshot_json_keys() {
        let st = init_stats(&DMatrix::from_row_slice(1, 2, &[1.0, 2.0]), &DMatrix::identity(2, 2)).unwrap();
        let json = serde_json::to_value(st.snapshot().unwrap()).unwrap();
        for key in ["m", "G", "S", "theta_hat", "lambda_min"] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
        assert_eq!(json["theta_hat"][0][1], 2.0);
    }
}
