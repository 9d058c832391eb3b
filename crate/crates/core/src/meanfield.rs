//! Scalar mean-field computations.
//!
//! `φ(y) = (βθ/2) y² + B y - I(y)` is the variational objective restricted
//! to constant vectors, where `θ` is the limiting mean row sum of the
//! coupling matrix. Its stationary points solve `m = tanh(βθ m + B)`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::coupling::CouplingMatrix;
use crate::error::{Error, Result};
use crate::model::{b_field_vector, IsingParams, SpinConfig};

/// Arguments of `atanh` are clamped to `|y| <= 1 - ATANH_CLAMP`.
pub const ATANH_CLAMP: f64 = 1e-12;
const SCAN_POINTS: usize = 2001;

/// `((1+y)/2) log((1+y)/2) + ((1-y)/2) log((1-y)/2)`, continuously extended
/// to `y = ±1`.
pub fn entropy(y: f64) -> f64 {
    let y = y.clamp(-1.0, 1.0);
    let term = |p: f64| if p > 0.0 { p * p.ln() } else { 0.0 };
    term(0.5 * (1.0 + y)) + term(0.5 * (1.0 - y))
}

pub fn phi(beta: f64, theta: f64, b_field: f64, y: f64) -> f64 {
    0.5 * beta * theta * y * y + b_field * y - entropy(y)
}

/// `atanh` accurate to a few ulps on all of (-1, 1). `f64::atanh` passes
/// arguments near -1 through `ln_1p` near -1 and loses about 1e-11.
pub fn atanh(y: f64) -> f64 {
    let a = y.abs();
    (0.5 * (2.0 * a / (1.0 - a)).ln_1p()).copysign(y)
}

pub fn clamped_atanh(y: f64) -> f64 {
    let lim = 1.0 - ATANH_CLAMP;
    atanh(y.clamp(-lim, lim))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarVariational {
    pub beta: f64,
    pub theta: f64,
    pub b_field: f64,
    /// Global maximizer of φ on `[-1, 1]`.
    pub m0: f64,
    pub phi_at_m0: f64,
}

impl ScalarVariational {
    /// `|βθ m0 + B - atanh(m0)|`.
    pub fn stationarity_residual(&self) -> f64 {
        (self.beta * self.theta * self.m0 + self.b_field - atanh(self.m0)).abs()
    }

    /// `φ''(m0) = βθ - 1 / (1 - m0²)`.
    pub fn curvature(&self) -> f64 {
        self.beta * self.theta - 1.0 / (1.0 - self.m0 * self.m0)
    }
}

/// Global maximizer of φ.
///
/// Every sign change of `tanh(βθ m + B) - m` on a uniform grid is refined by
/// bisection in the field variable `u = atanh(m)`, where the equation reads
/// `βθ tanh(u) + B = u` and stays well conditioned as `|m| -> 1`. Among the
/// roots the one with the largest φ wins; ties go to the root with the sign
/// of `B` (or the positive root when `B = 0`).
pub fn magnetization_root(beta: f64, theta: f64, b_field: f64) -> Result<ScalarVariational> {
    if !(beta >= 0.0) || !(theta > 0.0) || !b_field.is_finite() || !beta.is_finite() || !theta.is_finite() {
        return Err(Error::InvalidParams(format!(
            "need beta >= 0 and theta > 0, got beta = {beta}, theta = {theta}, B = {b_field}"
        )));
    }
    let coupling = beta * theta;
    let g = |m: f64| (coupling * m + b_field).tanh() - m;
    let h = |u: f64| coupling * u.tanh() + b_field - u;
    // every root satisfies |u| <= βθ + |B|
    let u_bound = coupling + b_field.abs() + 1.0;
    let to_u = |m: f64| if m <= -1.0 { -u_bound } else if m >= 1.0 { u_bound } else { atanh(m) };

    let grid: Vec<f64> = (0..SCAN_POINTS)
        .map(|k| -1.0 + 2.0 * k as f64 / (SCAN_POINTS - 1) as f64)
        .collect();
    let values: Vec<f64> = grid.iter().map(|&m| g(m)).collect();
    let mut roots = Vec::new();
    for k in 0..SCAN_POINTS - 1 {
        let (m_a, m_b) = (grid[k], grid[k + 1]);
        let (g_a, g_b) = (values[k], values[k + 1]);
        if g_a == 0.0 {
            roots.push(bisect_field(&h, to_u(m_a) - 1e-9, to_u(m_a) + 1e-9).tanh());
        } else if g_a > 0.0 && g_b < 0.0 || g_a < 0.0 && g_b > 0.0 {
            roots.push(bisect_field(&h, to_u(m_a), to_u(m_b)).tanh());
        }
    }
    if roots.is_empty() {
        // Only possible when the root sits exactly on the last grid node.
        roots.push(bisect_field(&h, -u_bound, u_bound).tanh());
    }
    let preferred_sign = if b_field < 0.0 { -1.0 } else { 1.0 };
    let mut best = roots[0];
    let mut best_phi = phi(beta, theta, b_field, best);
    for &r in &roots[1..] {
        let v = phi(beta, theta, b_field, r);
        let tie = (v - best_phi).abs() <= 1e-14 * (1.0 + best_phi.abs());
        if (!tie && v > best_phi) || (tie && r * preferred_sign > best * preferred_sign) {
            best = r;
            best_phi = v;
        }
    }
    let m0 = nearest_stationary_double(best, |m| coupling * m + b_field - atanh(m));
    let phi_at_m0 = phi(beta, theta, b_field, m0);
    Ok(ScalarVariational { beta, theta, b_field, m0, phi_at_m0 })
}

/// The double within a few ulps of `m` (kept inside (-1, 1)) with the
/// smallest `|residual|`.
fn nearest_stationary_double(m: f64, residual: impl Fn(f64) -> f64) -> f64 {
    let below_one = 1.0 - f64::EPSILON / 2.0;
    let m = m.clamp(-below_one, below_one);
    let step = |y: f64, k: i64| {
        // ordered integer view of the float line
        let bits = y.to_bits() as i64;
        let ordered = if bits < 0 { i64::MIN - bits } else { bits };
        let moved = ordered + k;
        f64::from_bits((if moved < 0 { i64::MIN - moved } else { moved }) as u64)
    };
    (-4..=4)
        .map(|k| step(m, k))
        .filter(|y| y.abs() < 1.0)
        .map(|y| (residual(y).abs(), y))
        .fold((f64::INFINITY, m), |best, cand| if cand.0 < best.0 { cand } else { best })
        .1
}

/// Bisection for a root of `h` in `[lo, hi]`, assuming a sign change (or a
/// root near the middle), carried to adjacent floating point values.
fn bisect_field(h: &impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let mut h_lo = h(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let h_mid = h(mid);
        if h_mid == 0.0 {
            return mid;
        }
        if (h_mid > 0.0) == (h_lo > 0.0) {
            lo = mid;
            h_lo = h_mid;
        } else {
            hi = mid;
        }
    }
    if h(lo).abs() <= h(hi).abs() {
        lo
    } else {
        hi
    }
}

/// Points `(β, atanh(m) - m β)` on the line `m = tanh(m β + B)`.
pub fn param_curve(m: f64, beta_values: &[f64]) -> Result<Vec<IsingParams>> {
    if !(m.abs() < 1.0) {
        return Err(Error::InvalidParams(format!("curve magnetization must lie in (-1, 1), got {m}")));
    }
    let intercept = atanh(m);
    beta_values.iter().map(|&beta| IsingParams::new(beta, intercept - m * beta)).collect()
}

/// `n` evenly spaced values on `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect(),
    }
}

/// CSV with columns `beta,B,m`.
pub fn write_param_curve<W: Write>(out: W, m: f64, points: &[IsingParams]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["beta", "B", "m"])?;
    for p in points {
        wtr.write_record([p.beta.to_string(), p.b_field.to_string(), m.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// The line `B = atanh(m) - m β` in the `(β, B)` plane, with projections
/// used to split an estimation error into along-line and cross-line parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointLine {
    pub m: f64,
    pub intercept: f64,
}

impl FixedPointLine {
    pub fn new(m: f64) -> Result<Self> {
        if !(m.abs() < 1.0) {
            return Err(Error::InvalidParams(format!("line magnetization must lie in (-1, 1), got {m}")));
        }
        Ok(Self { m, intercept: atanh(m) })
    }

    /// `β` coordinate of the nearest point on the line.
    pub fn project_beta(&self, beta: f64, b_field: f64) -> f64 {
        (beta + self.m * (self.intercept - b_field)) / (1.0 + self.m * self.m)
    }

    /// Euclidean distance from `(β, B)` to the line.
    pub fn distance(&self, beta: f64, b_field: f64) -> f64 {
        (b_field - self.intercept + self.m * beta).abs() / (1.0 + self.m * self.m).sqrt()
    }
}

/// `(1/√n) ‖β A b + B 1 - atanh(b)‖` with `b_i = tanh(β m_i(x) + B)`.
pub fn regularity_residual(a: &CouplingMatrix, params: &IsingParams, x: &SpinConfig) -> Result<f64> {
    let b = b_field_vector(a, params, x)?;
    let n = a.n();
    let mut sq = 0.0;
    for (i, &bi) in b.iter().enumerate() {
        let ab: f64 = a.row(i).map(|(j, w)| w * b[j]).sum();
        let v = params.beta * ab + params.b_field - clamped_atanh(bi);
        sq += v * v;
    }
    Ok((sq / n.max(1) as f64).sqrt())
}
