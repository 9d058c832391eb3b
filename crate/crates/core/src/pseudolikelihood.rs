//! Joint pseudo-likelihood estimation of `(β, B)` from one configuration.
//!
//! The log pseudo-likelihood (without the constant `-n log 2`) is
//!
//! ```text
//! L(β, B) = Σ_i [ β x_i m_i + B x_i - log cosh(β m_i + B) ]
//! ```
//!
//! with gradient `(Q, R)` and negative Hessian
//! `[[Σ m_i² θ_i, Σ m_i θ_i], [Σ m_i θ_i, Σ θ_i]]`, `θ_i = sech²(β m_i + B)`.
//! It is strictly concave exactly when the local fields are not all equal.
//!
//! A maximizer exists iff no direction `(a, b) ≠ 0` has
//! `x_i (a m_i + b) >= 0` for every site. Besides the four classical sets
//! (constant fields, all aligned, all anti-aligned, constant spins) this
//! rules out configurations where a threshold on `m_i` splits the plus
//! sites from the minus sites; the scaled complete graph is always of that
//! kind.

use serde::{Deserialize, Serialize};

use crate::coupling::CouplingMatrix;
use crate::error::{Error, FailingSet, NoRootKind, Result};
use crate::model::{local_fields, IsingParams, SpinConfig};

/// Relative tolerance used to decide that a local field is zero.
const ZERO_FIELD_TOL: f64 = 1e-12;
/// `T_n <= A1_TOL * γ²` counts as constant fields.
const A1_TOL: f64 = 1e-12;
/// Below `SINGULAR_DET * n²` the Newton step is replaced by gradient ascent.
const SINGULAR_DET: f64 = 1e-14;
const ARMIJO: f64 = 1e-4;
/// Bracket expansion for the univariate solvers stops at this width.
const MAX_BRACKET_WIDTH: f64 = 65536.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlGradient {
    /// `∂L/∂β`
    pub q: f64,
    /// `∂L/∂B`
    pub r: f64,
}

impl PlGradient {
    pub fn norm(&self) -> f64 {
        self.q.hypot(self.r)
    }
}

/// Negative Hessian of the log pseudo-likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlHessian {
    pub h11: f64,
    pub h12: f64,
    pub h22: f64,
    pub det: f64,
    pub min_eigenvalue: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExistenceVerdict {
    pub exists: bool,
    pub failing_sets: Vec<FailingSet>,
}

/// Local fields and spins of one observation, reused across parameter values.
#[derive(Debug, Clone)]
pub struct PseudoLikelihood {
    m: Vec<f64>,
    x: Vec<f64>,
    gamma: f64,
}

/// `log cosh t` without overflow.
fn log_cosh(t: f64) -> f64 {
    let a = t.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// `sech² t` without overflow.
fn sech2(t: f64) -> f64 {
    let e = (-2.0 * t.abs()).exp();
    4.0 * e / ((1.0 + e) * (1.0 + e))
}

impl PseudoLikelihood {
    pub fn new(a: &CouplingMatrix, x: &SpinConfig) -> Result<Self> {
        let fields = local_fields(a, x)?;
        Ok(Self {
            m: fields.m,
            x: x.spins().iter().map(|&s| s as f64).collect(),
            gamma: a.gamma(),
        })
    }

    pub fn n(&self) -> usize {
        self.m.len()
    }

    pub fn fields(&self) -> &[f64] {
        &self.m
    }

    pub fn objective(&self, p: &IsingParams) -> f64 {
        self.m
            .iter()
            .zip(&self.x)
            .map(|(&m, &x)| {
                let t = p.beta * m + p.b_field;
                x * t - log_cosh(t)
            })
            .sum()
    }

    pub fn gradient(&self, p: &IsingParams) -> PlGradient {
        let (mut q, mut r) = (0.0, 0.0);
        for (&m, &x) in self.m.iter().zip(&self.x) {
            let resid = x - (p.beta * m + p.b_field).tanh();
            q += m * resid;
            r += resid;
        }
        PlGradient { q, r }
    }

    pub fn hessian(&self, p: &IsingParams) -> PlHessian {
        let theta: Vec<f64> = self.m.iter().map(|&m| sech2(p.beta * m + p.b_field)).collect();
        let (mut h11, mut h12, mut h22) = (0.0, 0.0, 0.0);
        for (&m, &t) in self.m.iter().zip(&theta) {
            h11 += m * m * t;
            h12 += m * t;
            h22 += t;
        }
        // h11 h22 - h12² written as h22 times a θ-weighted variance, which
        // avoids the cancellation of the direct formula.
        let det = if h22 > 0.0 {
            let centre = h12 / h22;
            h22 * self.m.iter().zip(&theta).map(|(&m, &t)| t * (m - centre).powi(2)).sum::<f64>()
        } else {
            0.0
        };
        let trace = h11 + h22;
        let lambda_max = 0.5 * (trace + (h11 - h22).hypot(2.0 * h12));
        let min_eigenvalue = if lambda_max > 0.0 { det / lambda_max } else { 0.0 };
        PlHessian { h11, h12, h22, det, min_eigenvalue }
    }

    /// Empirical variance of the local fields.
    pub fn t_stat(&self) -> f64 {
        let n = self.n().max(1) as f64;
        let mean = self.m.iter().sum::<f64>() / n;
        self.m.iter().map(|&m| (m - mean).powi(2)).sum::<f64>() / n
    }

    fn zero_tol(&self) -> f64 {
        ZERO_FIELD_TOL * self.gamma.max(f64::MIN_POSITIVE)
    }

    fn all_aligned(&self) -> bool {
        let tol = self.zero_tol();
        self.m.iter().zip(&self.x).all(|(&m, &x)| x * m >= -tol)
    }

    fn all_anti_aligned(&self) -> bool {
        let tol = self.zero_tol();
        self.m.iter().zip(&self.x).all(|(&m, &x)| x * m <= tol)
    }

    fn constant_spins(&self) -> bool {
        self.x.windows(2).all(|w| w[0] == w[1])
    }

    /// Plus and minus sites are split by a threshold on the local field.
    fn separated(&self) -> bool {
        let tol = self.zero_tol();
        let mut plus = (f64::INFINITY, f64::NEG_INFINITY);
        let mut minus = (f64::INFINITY, f64::NEG_INFINITY);
        for (&m, &x) in self.m.iter().zip(&self.x) {
            let range = if x > 0.0 { &mut plus } else { &mut minus };
            range.0 = range.0.min(m);
            range.1 = range.1.max(m);
        }
        if !plus.0.is_finite() || !minus.0.is_finite() {
            return true;
        }
        minus.1 <= plus.0 + tol || plus.1 <= minus.0 + tol
    }

    pub fn existence(&self) -> ExistenceVerdict {
        let mut failing_sets = Vec::new();
        if self.t_stat() <= A1_TOL * self.gamma * self.gamma {
            failing_sets.push(FailingSet::A1);
        }
        if self.all_aligned() {
            failing_sets.push(FailingSet::A2);
        }
        if self.all_anti_aligned() {
            failing_sets.push(FailingSet::A3);
        }
        if self.constant_spins() {
            failing_sets.push(FailingSet::A4);
        }
        if failing_sets.is_empty() && self.separated() {
            failing_sets.push(FailingSet::Separated);
        }
        ExistenceVerdict { exists: failing_sets.is_empty(), failing_sets }
    }

    /// Damped Newton ascent to the unique maximizer.
    pub fn fit_joint(&self, opts: &SolverOptions) -> Result<FitResult> {
        let verdict = self.existence();
        if !verdict.exists {
            return Err(Error::NoEstimator(verdict.failing_sets));
        }
        let n = self.n() as f64;
        let mut p = self.start_point(opts);
        let mut value = self.objective(&p);
        let mut g = self.gradient(&p);
        let mut iterations = 0;
        while g.norm() / n > opts.tol {
            if iterations == opts.max_iter {
                return Err(Error::NonConvergence { iterations, grad_norm: g.norm() / n });
            }
            iterations += 1;
            let h = self.hessian(&p);
            let (db, dfield) = if h.det >= SINGULAR_DET * n * n {
                ((h.h22 * g.q - h.h12 * g.r) / h.det, (h.h11 * g.r - h.h12 * g.q) / h.det)
            } else {
                let scale = (h.h11 + h.h22).max(1e-8 * n * (1.0 + self.gamma * self.gamma));
                (g.q / scale, g.r / scale)
            };
            let slope = g.q * db + g.r * dfield;
            let mut t = 1.0;
            loop {
                let trial = IsingParams { beta: p.beta + t * db, b_field: p.b_field + t * dfield };
                let trial_value = self.objective(&trial);
                let trial_g = self.gradient(&trial);
                let ascent = trial_value >= value + ARMIJO * t * slope;
                // At the optimum L is flat to rounding; accept steps that
                // still shrink the gradient there.
                let flat = (trial_value - value).abs() <= 1e-13 * (1.0 + value.abs())
                    && trial_g.norm() < g.norm();
                if ascent || flat {
                    p = trial;
                    value = trial_value;
                    g = trial_g;
                    break;
                }
                t *= 0.5;
                if t < 1e-20 {
                    return Err(Error::NonConvergence { iterations, grad_norm: g.norm() / n });
                }
            }
        }
        let t_stat = self.t_stat();
        Ok(FitResult {
            beta_hat: p.beta,
            b_hat: p.b_field,
            verdict,
            iterations,
            final_gradient_norm: g.norm() / n,
            t_stat,
            rate_bound: rate_bound(n as usize, t_stat),
            hessian_at_opt: self.hessian(&p),
        })
    }

    fn start_point(&self, opts: &SolverOptions) -> IsingParams {
        let origin = IsingParams { beta: opts.start.0, b_field: opts.start.1 };
        if !opts.warm_start {
            return origin;
        }
        match self.fit_beta(0.0) {
            Ok(beta) => match self.fit_b(beta) {
                Ok(b_field) => IsingParams { beta, b_field },
                Err(_) => origin,
            },
            Err(_) => origin,
        }
    }

    /// Root in `β` of `Q(β, b_known) = 0`.
    pub fn fit_beta(&self, b_known: f64) -> Result<f64> {
        let tol = self.zero_tol();
        if self.m.iter().all(|m| m.abs() <= tol) {
            return Err(Error::DegenerateFields);
        }
        if self.all_aligned() {
            return Err(Error::NoRoot(NoRootKind::A2Like));
        }
        if self.all_anti_aligned() {
            return Err(Error::NoRoot(NoRootKind::A3Like));
        }
        let scale = self.m.iter().map(|m| m.abs()).sum::<f64>();
        decreasing_root(
            |beta| {
                let p = IsingParams { beta, b_field: b_known };
                let slope = -self.m.iter().map(|&m| m * m * sech2(beta * m + b_known)).sum::<f64>();
                (self.gradient(&p).q, slope)
            },
            scale,
        )
    }

    /// Root in `B` of `R(beta_known, B) = 0`.
    pub fn fit_b(&self, beta_known: f64) -> Result<f64> {
        if self.constant_spins() {
            return Err(Error::NoRoot(NoRootKind::ConstantSpins));
        }
        decreasing_root(
            |b_field| {
                let p = IsingParams { beta: beta_known, b_field };
                let slope = -self.m.iter().map(|&m| sech2(beta_known * m + b_field)).sum::<f64>();
                (self.gradient(&p).r, slope)
            },
            self.n() as f64,
        )
    }
}

/// Root of a strictly decreasing function given as `t -> (f(t), f'(t))`.
///
/// The bracket `[-1, 1]` is doubled until `f` changes sign, then refined by
/// Newton steps that fall back to bisection when they leave the bracket.
fn decreasing_root(f: impl Fn(f64) -> (f64, f64), scale: f64) -> Result<f64> {
    let ftol = 1e-13 * scale.max(1.0);
    let (mut lo, mut hi) = (-1.0f64, 1.0f64);
    let (mut f_lo, _) = f(lo);
    let (mut f_hi, _) = f(hi);
    while f_lo < 0.0 || f_hi > 0.0 {
        if hi - lo >= MAX_BRACKET_WIDTH {
            return Err(Error::NoRoot(NoRootKind::BracketExhausted));
        }
        let width = hi - lo;
        if f_lo < 0.0 {
            hi = lo;
            f_hi = f_lo;
            lo -= width;
            f_lo = f(lo).0;
        } else {
            lo = hi;
            f_lo = f_hi;
            hi += width;
            f_hi = f(hi).0;
        }
    }
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    let mut t = 0.5 * (lo + hi);
    for _ in 0..500 {
        let (value, slope) = f(t);
        if value.abs() <= ftol {
            return Ok(t);
        }
        if value > 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        if hi - lo <= 4.0 * f64::EPSILON * t.abs().max(1.0) {
            return Ok(0.5 * (lo + hi));
        }
        let newton = if slope < 0.0 { t - value / slope } else { f64::NAN };
        t = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
    }
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Stop when `sqrt(Q² + R²) / n <= tol`.
    pub tol: f64,
    pub max_iter: usize,
    pub start: (f64, f64),
    /// Start from the univariate fits (β at B = 0, then B at that β).
    pub warm_start: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 200, start: (0.0, 0.0), warm_start: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub beta_hat: f64,
    pub b_hat: f64,
    pub verdict: ExistenceVerdict,
    pub iterations: usize,
    pub final_gradient_norm: f64,
    pub t_stat: f64,
    /// `1 / (sqrt(n) T_n)`; a diagnostic of the error scale, not a bound
    /// that holds for every sample.
    pub rate_bound: f64,
    pub hessian_at_opt: PlHessian,
}

/// `1 / (sqrt(n) T_n)`, or `+∞` when `T_n = 0`.
pub fn rate_bound(n: usize, t_stat: f64) -> f64 {
    if t_stat > 0.0 {
        1.0 / ((n as f64).sqrt() * t_stat)
    } else {
        f64::INFINITY
    }
}

/// JSON form of a fit. Non-finite numbers and absent estimates are `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub beta_hat: Option<f64>,
    pub b_hat: Option<f64>,
    pub exists: bool,
    pub failing_sets: Vec<FailingSet>,
    pub iterations: usize,
    pub grad_norm: Option<f64>,
    pub t_stat: f64,
    pub rate_bound: Option<f64>,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

impl From<&FitResult> for FitSummary {
    fn from(fit: &FitResult) -> Self {
        Self {
            beta_hat: Some(fit.beta_hat),
            b_hat: Some(fit.b_hat),
            exists: fit.verdict.exists,
            failing_sets: fit.verdict.failing_sets.clone(),
            iterations: fit.iterations,
            grad_norm: finite(fit.final_gradient_norm),
            t_stat: fit.t_stat,
            rate_bound: finite(fit.rate_bound),
        }
    }
}

impl FitSummary {
    /// Summary for a configuration without an estimator.
    pub fn without_estimate(verdict: &ExistenceVerdict, n: usize, t_stat: f64) -> Self {
        Self {
            beta_hat: None,
            b_hat: None,
            exists: verdict.exists,
            failing_sets: verdict.failing_sets.clone(),
            iterations: 0,
            grad_norm: None,
            t_stat,
            rate_bound: finite(rate_bound(n, t_stat)),
        }
    }
}

pub fn objective(a: &CouplingMatrix, params: &IsingParams, x: &SpinConfig) -> Result<f64> {
    Ok(PseudoLikelihood::new(a, x)?.objective(params))
}

pub fn gradient(a: &CouplingMatrix, params: &IsingParams, x: &SpinConfig) -> Result<PlGradient> {
    Ok(PseudoLikelihood::new(a, x)?.gradient(params))
}

pub fn hessian(a: &CouplingMatrix, params: &IsingParams, x: &SpinConfig) -> Result<PlHessian> {
    Ok(PseudoLikelihood::new(a, x)?.hessian(params))
}

pub fn t_stat(a: &CouplingMatrix, x: &SpinConfig) -> Result<f64> {
    Ok(PseudoLikelihood::new(a, x)?.t_stat())
}

pub fn existence_check(a: &CouplingMatrix, x: &SpinConfig) -> Result<ExistenceVerdict> {
    Ok(PseudoLikelihood::new(a, x)?.existence())
}

pub fn fit_joint(a: &CouplingMatrix, x: &SpinConfig, opts: &SolverOptions) -> Result<FitResult> {
    PseudoLikelihood::new(a, x)?.fit_joint(opts)
}

pub fn fit_beta(a: &CouplingMatrix, x: &SpinConfig, b_known: f64) -> Result<f64> {
    PseudoLikelihood::new(a, x)?.fit_beta(b_known)
}

pub fn fit_b(a: &CouplingMatrix, x: &SpinConfig, beta_known: f64) -> Result<f64> {
    PseudoLikelihood::new(a, x)?.fit_b(beta_known)
}
