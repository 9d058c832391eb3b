//! Dense brute-force oracles shared by the integration tests.
//!
//! Everything here works on a plain `Vec<Vec<f64>>` coupling matrix and
//! recomputes fields, objective, derivatives and exact laws from scratch.

#![allow(dead_code)]

use ising_plfit::rng::Rng;
use ising_plfit::CouplingMatrix;
use rand::Rng as _;

pub type Dense = Vec<Vec<f64>>;

/// Random weighted graph on `n` sites with edge probability `density` and
/// weights in [0.5, 1.5], rescaled to mean row sum 1. Returns the dense
/// matrix and the library matrix built from the same entries.
pub fn random_coupling(rng: &mut Rng, n: usize, density: f64) -> (Dense, CouplingMatrix) {
    loop {
        let mut w = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i + 1..n {
                if rng.gen_bool(density) {
                    let v = rng.gen_range(0.5..1.5);
                    w[i][j] = v;
                    w[j][i] = v;
                }
            }
        }
        let total: f64 = w.iter().flatten().sum();
        if total == 0.0 {
            continue;
        }
        let scale = n as f64 / total;
        let mut entries = Vec::new();
        for (i, row) in w.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v *= scale;
                if i < j && *v > 0.0 {
                    entries.push((i, j, *v));
                }
            }
        }
        let a = CouplingMatrix::from_entries(n, entries).expect("valid entries");
        return (w, a);
    }
}

pub fn fields(w: &Dense, x: &[f64]) -> Vec<f64> {
    w.iter().map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

pub fn objective(w: &Dense, x: &[f64], beta: f64, b: f64) -> f64 {
    fields(w, x)
        .iter()
        .zip(x)
        .map(|(&m, &xi)| {
            let t = beta * m + b;
            // log cosh t = |t| + log(1 + e^{-2|t|}) - log 2
            xi * t - (t.abs() + (-2.0 * t.abs()).exp().ln_1p() - 2f64.ln())
        })
        .sum()
}

/// `(∂/∂β, ∂/∂B)` of [`objective`].
pub fn partials(w: &Dense, x: &[f64], beta: f64, b: f64) -> (f64, f64) {
    let m = fields(w, x);
    let mut q = 0.0;
    let mut r = 0.0;
    for (&mi, &xi) in m.iter().zip(x) {
        let e = xi - (beta * mi + b).tanh();
        q += mi * e;
        r += e;
    }
    (q, r)
}

/// Variance of the local fields.
pub fn t_stat(w: &Dense, x: &[f64]) -> f64 {
    let m = fields(w, x);
    let n = m.len() as f64;
    let mean = m.iter().sum::<f64>() / n;
    m.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

/// No direction `(s, c) != 0` with `x_i (s m_i + c) >= 0` for every site.
pub fn estimator_exists(w: &Dense, x: &[f64]) -> bool {
    let m = fields(w, x);
    let plus: Vec<f64> = m.iter().zip(x).filter(|(_, &xi)| xi > 0.0).map(|(&v, _)| v).collect();
    let minus: Vec<f64> = m.iter().zip(x).filter(|(_, &xi)| xi < 0.0).map(|(&v, _)| v).collect();
    if plus.is_empty() || minus.is_empty() {
        return false;
    }
    let max = |v: &[f64]| v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = |v: &[f64]| v.iter().cloned().fold(f64::INFINITY, f64::min);
    let tol = 1e-9;
    !(max(&minus) <= min(&plus) + tol || max(&plus) <= min(&minus) + tol)
}

pub fn spins_of(index: usize, n: usize) -> Vec<f64> {
    (0..n).map(|i| if index >> i & 1 == 1 { 1.0 } else { -1.0 }).collect()
}

/// Exact law over all `2^n` states; bit `i` of the index set means `x_i = +1`.
pub fn exact_law(w: &Dense, beta: f64, b: f64) -> Vec<f64> {
    let n = w.len();
    let logw: Vec<f64> = (0..1usize << n)
        .map(|k| {
            let x = spins_of(k, n);
            let m = fields(w, &x);
            let quad: f64 = x.iter().zip(&m).map(|(a, c)| a * c).sum();
            0.5 * beta * quad + b * x.iter().sum::<f64>()
        })
        .collect();
    let top = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let unnorm: Vec<f64> = logw.iter().map(|l| (l - top).exp()).collect();
    let z: f64 = unnorm.iter().sum();
    unnorm.iter().map(|u| u / z).collect()
}

/// Draw from a discrete law by inversion.
pub fn draw(law: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (k, p) in law.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    law.len() - 1
}

/// Root of a decreasing function by bracket expansion and bisection.
fn decreasing_root(f: impl Fn(f64) -> f64, guess: f64, width: f64) -> f64 {
    let mut lo = guess - width;
    let mut hi = guess + width;
    while f(lo) < 0.0 {
        lo -= 2.0 * (hi - lo);
    }
    while f(hi) > 0.0 {
        hi += 2.0 * (hi - lo);
    }
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Maximizer of the pseudo-likelihood by grid search then polishing.
///
/// The grid box doubles until the grid argmax is interior. Polishing
/// maximizes the profile `β -> max_B L(β, B)`, whose derivative is the β
/// partial at the inner maximizer; both levels are monotone root problems
/// solved by bisection.
pub fn grid_argmax(w: &Dense, x: &[f64]) -> (f64, f64) {
    let k = 81;
    let mut half = 4.0;
    let (beta0, b0, cell) = loop {
        let step = 2.0 * half / (k - 1) as f64;
        let mut best = (f64::NEG_INFINITY, 0, 0);
        for i in 0..k {
            for j in 0..k {
                let v = objective(w, x, -half + step * i as f64, -half + step * j as f64);
                if v > best.0 {
                    best = (v, i, j);
                }
            }
        }
        let (_, i, j) = best;
        if (i == 0 || i == k - 1 || j == 0 || j == k - 1) && half < 1e4 {
            half *= 2.0;
            continue;
        }
        break (-half + step * i as f64, -half + step * j as f64, step);
    };
    let inner = |beta: f64| decreasing_root(|b| partials(w, x, beta, b).1, b0, cell);
    let beta = decreasing_root(|beta| partials(w, x, beta, inner(beta)).0, beta0, cell);
    (beta, inner(beta))
}
