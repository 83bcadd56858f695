//! Linear-convex control model.
//!
//! The controlled state follows `dX = (A X + B a) dt + dW` on `[0, T]`, and an
//! episode is scored by `∫ f(t, X, a) dt + g(X_T)`. Two cost families are
//! provided:
//!
//! * [`QuadraticCost`]: `f = xᵀQx + aᵀRa`, `g = xᵀ G x` with `R ⪰ λI`, `λ > 0`.
//! * [`EntropyCost`]: `f = f̄₀(t, x)ᵀa + h_en(a)` where `h_en` is the Shannon
//!   entropy on the probability simplex and `+∞` off it.
//!
//! The entropy conjugate pair (`h_star` = log-sum-exp, `grad_h_star` =
//! softmax) lives here because both the cost evaluation and the HJB solver
//! need it.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};

/// Tolerance for the simplex membership test on actions.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// The unknown drift pair `θ = (A, B)`, `A` is `d×d` and `B` is `d×p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamTheta {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl ParamTheta {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(dim_err(
                "ParamTheta::A",
                "square",
                format!("{}x{}", a.nrows(), a.ncols()),
            ));
        }
        if b.nrows() != a.nrows() {
            return Err(dim_err("ParamTheta::B rows", a.nrows(), b.nrows()));
        }
        if b.ncols() == 0 {
            return Err(Error::InvalidArgument("B must have at least one column".into()));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("θ has non-finite entries".into()));
        }
        Ok(Self { a, b })
    }

    /// Builds θ from the stacked `d×(d+p)` matrix `[A B]`.
    pub fn from_stacked(stacked: &DMatrix<f64>, d: usize) -> Result<Self> {
        if stacked.nrows() != d || stacked.ncols() <= d {
            return Err(dim_err(
                "ParamTheta::from_stacked",
                format!("{d}x(>{d})"),
                format!("{}x{}", stacked.nrows(), stacked.ncols()),
            ));
        }
        let a = stacked.columns(0, d).into_owned();
        let b = stacked.columns(d, stacked.ncols() - d).into_owned();
        Self::new(a, b)
    }

    pub fn zeros(d: usize, p: usize) -> Self {
        Self {
            a: DMatrix::zeros(d, d),
            b: DMatrix::zeros(d, p),
        }
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn action_dim(&self) -> usize {
        self.b.ncols()
    }

    /// `[A B]` as a `d×(d+p)` matrix.
    pub fn stacked(&self) -> DMatrix<f64> {
        let (d, p) = (self.state_dim(), self.action_dim());
        let mut m = DMatrix::zeros(d, d + p);
        m.columns_mut(0, d).copy_from(&self.a);
        m.columns_mut(d, p).copy_from(&self.b);
        m
    }

    /// Row-major flattening of `[A B]`.
    pub fn flat(&self) -> Vec<f64> {
        let s = self.stacked();
        let mut out = Vec::with_capacity(s.len());
        for i in 0..s.nrows() {
            for j in 0..s.ncols() {
                out.push(s[(i, j)]);
            }
        }
        out
    }

    /// Frobenius distance `|θ - other|`.
    pub fn distance(&self, other: &ParamTheta) -> f64 {
        ((&self.a - &other.a).norm_squared() + (&self.b - &other.b).norm_squared()).sqrt()
    }
}

/// Coordinatewise box `Θ` of admissible parameters on the stacked `[A B]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    lower: DMatrix<f64>,
    upper: DMatrix<f64>,
}

impl ParamBox {
    pub fn new(lower: DMatrix<f64>, upper: DMatrix<f64>) -> Result<Self> {
        if lower.shape() != upper.shape() {
            return Err(dim_err(
                "ParamBox",
                format!("{:?}", lower.shape()),
                format!("{:?}", upper.shape()),
            ));
        }
        if lower
            .iter()
            .zip(upper.iter())
            .any(|(l, u)| !(l < u) || !l.is_finite() || !u.is_finite())
        {
            return Err(Error::InvalidArgument(
                "ParamBox requires finite lower < upper entrywise".into(),
            ));
        }
        Ok(Self { lower, upper })
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DMatrix<f64> {
        &self.upper
    }

    pub fn contains(&self, theta: &ParamTheta) -> bool {
        let s = theta.stacked();
        s.shape() == self.lower.shape()
            && s.iter()
                .zip(self.lower.iter().zip(self.upper.iter()))
                .all(|(v, (l, u))| l <= v && v <= u)
    }
}

/// Smooth quadratic cost `xᵀQx + aᵀRa` with terminal `xᵀ G x`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticCost {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    g: DMatrix<f64>,
    lambda: f64,
}

fn check_symmetric(m: &DMatrix<f64>, name: &str) -> Result<()> {
    if !m.is_square() {
        return Err(Error::InvalidArgument(format!("{name} must be square")));
    }
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > 1e-12 * scale {
        return Err(Error::InvalidArgument(format!("{name} must be symmetric")));
    }
    Ok(())
}

pub(crate) fn min_sym_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.min()
}

impl QuadraticCost {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>, g: DMatrix<f64>) -> Result<Self> {
        check_symmetric(&q, "Q")?;
        check_symmetric(&r, "R")?;
        check_symmetric(&g, "G")?;
        if q.shape() != g.shape() {
            return Err(dim_err(
                "QuadraticCost G",
                format!("{:?}", q.shape()),
                format!("{:?}", g.shape()),
            ));
        }
        if min_sym_eigenvalue(&q) < -1e-12 || min_sym_eigenvalue(&g) < -1e-12 {
            return Err(Error::InvalidArgument("Q and G must be positive semidefinite".into()));
        }
        let lambda = min_sym_eigenvalue(&r);
        if !(lambda > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "R must be positive definite (smallest eigenvalue {lambda:.3e})"
            )));
        }
        Ok(Self { q, r, g, lambda })
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    /// Strong-convexity modulus of the running cost in the action.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

/// Built-in drift-cost coefficient `f̄₀(t, x) = c + K x` (`K = 0` for constants).
#[derive(Debug, Clone, PartialEq)]
pub enum LinearCoefficient {
    Constant(DVector<f64>),
    Affine { c: DVector<f64>, k: DMatrix<f64> },
}

impl LinearCoefficient {
    pub fn action_dim(&self) -> usize {
        match self {
            Self::Constant(c) | Self::Affine { c, .. } => c.len(),
        }
    }

    #[inline]
    pub fn eval_into(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        match self {
            Self::Constant(c) => out.copy_from_slice(c.as_slice()),
            Self::Affine { c, k } => {
                for (i, o) in out.iter_mut().enumerate() {
                    let mut v = c[i];
                    for (j, xj) in x.iter().enumerate() {
                        v += k[(i, j)] * xj;
                    }
                    *o = v;
                }
            }
        }
    }

    pub fn eval(&self, t: f64, x: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.action_dim());
        self.eval_into(t, x, out.as_mut_slice());
        out
    }

    /// Lipschitz constant in `x` (spectral norm of `K`).
    pub fn lipschitz(&self) -> f64 {
        match self {
            Self::Constant(_) => 0.0,
            Self::Affine { k, .. } => spectral_norm(k),
        }
    }
}

pub(crate) fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

/// Built-in terminal costs for the entropy family.
#[derive(Debug, Clone, PartialEq)]
pub enum TerminalCost {
    Zero,
    /// `g(x) = xᵀ G x`.
    Quadratic(DMatrix<f64>),
}

impl TerminalCost {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::Quadratic(g) => quad_form(g, x),
        }
    }

    /// Lipschitz constant of `∇g`.
    pub fn gradient_lipschitz(&self) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::Quadratic(g) => 2.0 * spectral_norm(g),
        }
    }
}

/// Entropy-regularized running cost `f̄₀(t,x)ᵀ a + h_en(a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyCost {
    pub fbar0: LinearCoefficient,
    pub terminal: TerminalCost,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CostSpec {
    SmoothQuadratic(QuadraticCost),
    EntropyRegularized(EntropyCost),
}

#[inline]
fn quad_form(m: &DMatrix<f64>, x: &[f64]) -> f64 {
    let n = x.len();
    let mut acc = 0.0;
    for j in 0..n {
        let mut col = 0.0;
        for i in 0..n {
            col += m[(i, j)] * x[i];
        }
        acc += col * x[j];
    }
    acc
}

impl CostSpec {
    pub fn action_dim(&self) -> Option<usize> {
        match self {
            Self::SmoothQuadratic(c) => Some(c.r.nrows()),
            Self::EntropyRegularized(c) => Some(c.fbar0.action_dim()),
        }
    }

    /// Running cost on raw slices; returns `f64::INFINITY` off the cost domain.
    #[inline]
    pub fn running(&self, _t: f64, x: &[f64], a: &[f64]) -> f64 {
        match self {
            Self::SmoothQuadratic(c) => quad_form(&c.q, x) + quad_form(&c.r, a),
            Self::EntropyRegularized(c) => {
                let h = entropy(a);
                if h.is_infinite() {
                    return f64::INFINITY;
                }
                let mut lin = 0.0;
                match &c.fbar0 {
                    LinearCoefficient::Constant(cv) => {
                        for (ci, ai) in cv.iter().zip(a) {
                            lin += ci * ai;
                        }
                    }
                    LinearCoefficient::Affine { c: cv, k } => {
                        for (i, ai) in a.iter().enumerate() {
                            let mut v = cv[i];
                            for (j, xj) in x.iter().enumerate() {
                                v += k[(i, j)] * xj;
                            }
                            lin += v * ai;
                        }
                    }
                }
                lin + h
            }
        }
    }

    #[inline]
    pub fn terminal(&self, x: &[f64]) -> f64 {
        match self {
            Self::SmoothQuadratic(c) => quad_form(&c.g, x),
            Self::EntropyRegularized(c) => c.terminal.eval(x),
        }
    }
}

/// `A x + B a`.
pub fn drift(theta: &ParamTheta, x: &DVector<f64>, a: &DVector<f64>) -> Result<DVector<f64>> {
    if x.len() != theta.state_dim() {
        return Err(dim_err("drift state", theta.state_dim(), x.len()));
    }
    if a.len() != theta.action_dim() {
        return Err(dim_err("drift action", theta.action_dim(), a.len()));
    }
    Ok(theta.a() * x + theta.b() * a)
}

/// Running cost `f(t, x, a)`; `+∞` when an entropy-family action is off the simplex.
pub fn eval_running_cost(spec: &CostSpec, t: f64, x: &DVector<f64>, a: &DVector<f64>) -> Result<f64> {
    check_cost_dims(spec, x.len(), Some(a.len()))?;
    Ok(spec.running(t, x.as_slice(), a.as_slice()))
}

/// Terminal cost `g(x)`.
pub fn eval_terminal_cost(spec: &CostSpec, x: &DVector<f64>) -> Result<f64> {
    check_cost_dims(spec, x.len(), None)?;
    Ok(spec.terminal(x.as_slice()))
}

fn check_cost_dims(spec: &CostSpec, d: usize, p: Option<usize>) -> Result<()> {
    let (sd, sp) = match spec {
        CostSpec::SmoothQuadratic(c) => (c.q.nrows(), c.r.nrows()),
        CostSpec::EntropyRegularized(c) => {
            let sd = match (&c.terminal, &c.fbar0) {
                (TerminalCost::Quadratic(g), _) => g.nrows(),
                (_, LinearCoefficient::Affine { k, .. }) => k.ncols(),
                _ => d,
            };
            (sd, c.fbar0.action_dim())
        }
    };
    if sd != d {
        return Err(dim_err("cost state", sd, d));
    }
    if let Some(p) = p {
        if sp != p {
            return Err(dim_err("cost action", sp, p));
        }
    }
    Ok(())
}

/// True when `a ∈ Δ_p` within [`SIMPLEX_TOL`].
pub fn on_simplex(a: &[f64]) -> bool {
    if a.is_empty() {
        return false;
    }
    let sum: f64 = a.iter().sum();
    (sum - 1.0).abs() <= SIMPLEX_TOL && a.iter().all(|&v| (-SIMPLEX_TOL..=1.0 + SIMPLEX_TOL).contains(&v))
}

/// Shannon entropy `Σ aᵢ ln aᵢ` on the simplex (`0 ln 0 = 0`), `+∞` elsewhere.
pub fn entropy(a: &[f64]) -> f64 {
    if !on_simplex(a) {
        return f64::INFINITY;
    }
    a.iter().map(|&v| if v <= 0.0 { 0.0 } else { v * v.ln() }).sum()
}

/// Convex conjugate of the entropy: `ln Σ exp(zᵢ)`, max-shifted.
pub fn h_star(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = z.iter().map(|&v| (v - m).exp()).sum();
    m + s.ln()
}

/// Softmax into `out`, normalized so the coordinates sum to one.
#[inline]
pub fn softmax_into(z: &[f64], out: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (o, &v) in out.iter_mut().zip(z) {
        *o = (v - m).exp();
        s += *o;
    }
    for o in out.iter_mut() {
        *o /= s;
    }
}

/// Gradient of [`h_star`], i.e. the softmax of `z`.
pub fn grad_h_star(z: &[f64]) -> SimplexAction {
    let mut out = vec![0.0; z.len()];
    softmax_into(z, &mut out);
    SimplexAction(DVector::from_vec(out))
}

/// A point of the probability simplex `Δ_p`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexAction(DVector<f64>);

impl SimplexAction {
    pub fn new(a: DVector<f64>) -> Result<Self> {
        if on_simplex(a.as_slice()) {
            Ok(Self(a))
        } else {
            Err(Error::InvalidArgument(format!(
                "{:?} is not on the simplex",
                a.as_slice()
            )))
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }
}

impl AsRef<DVector<f64>> for SimplexAction {
    fn as_ref(&self) -> &DVector<f64> {
        &self.0
    }
}
