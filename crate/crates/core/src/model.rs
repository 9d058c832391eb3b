//! The Ising distribution `P(x) ∝ exp((β/2) x'Ax + B Σ x_i)` on `{-1, 1}^n`
//! and its samplers.

use std::fmt::Write as _;
use std::io::Write;

use rand::seq::index::sample as sample_indices;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::coupling::CouplingMatrix;
use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, Rng};

/// Largest system handled by exact enumeration.
pub const MAX_EXACT_N: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsingParams {
    pub beta: f64,
    #[serde(alias = "B")]
    pub b_field: f64,
}

impl IsingParams {
    pub fn new(beta: f64, b_field: f64) -> Result<Self> {
        if !beta.is_finite() || !b_field.is_finite() {
            return Err(Error::InvalidParams(format!("non-finite parameters ({beta}, {b_field})")));
        }
        Ok(Self { beta, b_field })
    }

    /// `β > 0` and `B ≠ 0`.
    pub fn in_theta(&self) -> bool {
        self.beta > 0.0 && self.b_field != 0.0
    }
}

/// A configuration in `{-1, +1}^n`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SpinConfig {
    spins: Vec<i8>,
}

impl SpinConfig {
    pub fn new(spins: Vec<i8>) -> Result<Self> {
        if let Some(k) = spins.iter().position(|&s| s != 1 && s != -1) {
            return Err(Error::InvalidParams(format!("spin {k} is {}, expected -1 or +1", spins[k])));
        }
        Ok(Self { spins })
    }

    pub fn all_plus(n: usize) -> Self {
        Self { spins: vec![1; n] }
    }

    pub fn all_minus(n: usize) -> Self {
        Self { spins: vec![-1; n] }
    }

    /// I.i.d. fair coins.
    pub fn random(n: usize, rng: &mut Rng) -> Self {
        Self { spins: (0..n).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect() }
    }

    pub fn len(&self) -> usize {
        self.spins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spins.is_empty()
    }

    pub fn spins(&self) -> &[i8] {
        &self.spins
    }

    pub fn get(&self, i: usize) -> f64 {
        self.spins[i] as f64
    }

    pub fn sum(&self) -> i64 {
        self.spins.iter().map(|&s| s as i64).sum()
    }

    pub fn magnetization(&self) -> f64 {
        self.sum() as f64 / self.len().max(1) as f64
    }

    pub fn plus_count(&self) -> usize {
        self.spins.iter().filter(|&&s| s == 1).count()
    }

    pub fn flip(&mut self, i: usize) {
        self.spins[i] = -self.spins[i];
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut spins = vec![0; self.len()];
        for (v, &s) in self.spins.iter().enumerate() {
            spins[perm[v]] = s;
        }
        Self { spins }
    }

    /// One line of space-separated `+1` / `-1` values.
    pub fn to_line(&self) -> String {
        let mut out = String::with_capacity(3 * self.len());
        for (k, &s) in self.spins.iter().enumerate() {
            if k > 0 {
                out.push(' ');
            }
            out.push_str(if s == 1 { "+1" } else { "-1" });
        }
        out
    }

    pub fn parse_line(text: &str) -> Result<Self> {
        let line = text
            .lines()
            .map(str::trim)
            .find(|l| !l.is_empty() && !l.starts_with('#'))
            .ok_or(Error::Parse { line: 0, msg: "no spin line".into() })?;
        let spins = line
            .split_whitespace()
            .map(|tok| match tok {
                "+1" | "1" => Ok(1),
                "-1" => Ok(-1),
                other => Err(Error::Parse { line: 1, msg: format!("invalid spin '{other}'") }),
            })
            .collect::<Result<Vec<i8>>>()?;
        Ok(Self { spins })
    }
}

fn check_dims(a: &CouplingMatrix, x: &SpinConfig) -> Result<()> {
    if a.n() != x.len() {
        return Err(Error::DimensionMismatch { expected: a.n(), got: x.len() });
    }
    Ok(())
}

/// `m_i(x) = Σ_j A(i, j) x_j` and their average.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalFields {
    pub m: Vec<f64>,
    pub mean: f64,
}

impl LocalFields {
    /// Updates the fields after spin `i` has been set to `new_spin`
    /// (previously `-new_spin`).
    pub fn apply_flip(&mut self, a: &CouplingMatrix, i: usize, new_spin: i8) {
        let delta = 2.0 * new_spin as f64;
        for (j, w) in a.row(i) {
            self.m[j] += delta * w;
        }
        self.mean += delta * a.row_sums()[i] / self.m.len() as f64;
    }
}

pub fn local_fields(a: &CouplingMatrix, x: &SpinConfig) -> Result<LocalFields> {
    check_dims(a, x)?;
    let m: Vec<f64> = (0..a.n())
        .map(|i| {
            a.row_indices(i)
                .iter()
                .zip(a.row_weights(i))
                .map(|(&j, &w)| w * x.spins[j] as f64)
                .sum()
        })
        .collect();
    let mean = m.iter().sum::<f64>() / m.len().max(1) as f64;
    Ok(LocalFields { m, mean })
}

/// `P(X_i = +1 | rest) = 1 / (1 + exp(-2(β m_i + B)))`.
pub fn conditional_prob(params: &IsingParams, m_i: f64) -> f64 {
    logistic(2.0 * (params.beta * m_i + params.b_field))
}

fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `f(x) = (β/2) x'Ax + B Σ x_i`.
pub fn hamiltonian(a: &CouplingMatrix, params: &IsingParams, x: &SpinConfig) -> Result<f64> {
    check_dims(a, x)?;
    Ok(hamiltonian_unchecked(a, params, &x.spins))
}

fn hamiltonian_unchecked(a: &CouplingMatrix, params: &IsingParams, spins: &[i8]) -> f64 {
    let pair: f64 = a
        .entries()
        .iter()
        .map(|&(i, j, w)| w * (spins[i] * spins[j]) as f64)
        .sum();
    let field: i64 = spins.iter().map(|&s| s as i64).sum();
    params.beta * pair + params.b_field * field as f64
}

/// `b_i = tanh(β m_i(x) + B)`.
pub fn b_field_vector(a: &CouplingMatrix, params: &IsingParams, x: &SpinConfig) -> Result<Vec<f64>> {
    let fields = local_fields(a, x)?;
    Ok(fields.m.iter().map(|&m| (params.beta * m + params.b_field).tanh()).collect())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitKind {
    #[default]
    Random,
    AllPlus,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InitState {
    Random,
    AllPlus,
    Config(SpinConfig),
}

impl From<&InitKind> for InitState {
    fn from(kind: &InitKind) -> Self {
        match kind {
            InitKind::Random => InitState::Random,
            InitKind::AllPlus => InitState::AllPlus,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum ScanOrder {
    /// Sites `0..n` in order.
    #[default]
    Systematic,
    /// `n` uniformly chosen sites per sweep.
    Random,
}

/// Burn-in, thinning and initialization for experiment sampling.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub burn_in: usize,
    pub spacing: usize,
    pub init: InitKind,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { burn_in: 2000, spacing: 50, init: InitKind::Random }
    }
}

/// Single-site heat-bath chain with incrementally maintained local fields.
#[derive(Debug, Clone)]
pub struct GlauberSampler<'a> {
    a: &'a CouplingMatrix,
    params: IsingParams,
    spins: SpinConfig,
    fields: LocalFields,
    rng: Rng,
    scan: ScanOrder,
    sweeps: usize,
}

impl<'a> GlauberSampler<'a> {
    pub fn new(a: &'a CouplingMatrix, params: IsingParams, init: InitState, seed: u64) -> Result<Self> {
        let mut rng = rng_from_seed(seed);
        let spins = match init {
            InitState::Random => SpinConfig::random(a.n(), &mut rng),
            InitState::AllPlus => SpinConfig::all_plus(a.n()),
            InitState::Config(x) => x,
        };
        let fields = local_fields(a, &spins)?;
        Ok(Self { a, params, spins, fields, rng, scan: ScanOrder::Systematic, sweeps: 0 })
    }

    pub fn with_scan(mut self, scan: ScanOrder) -> Self {
        self.scan = scan;
        self
    }

    fn update_site(&mut self, i: usize) {
        let p = conditional_prob(&self.params, self.fields.m[i]);
        let new_spin: i8 = if self.rng.gen::<f64>() < p { 1 } else { -1 };
        if new_spin != self.spins.spins[i] {
            self.spins.spins[i] = new_spin;
            self.fields.apply_flip(self.a, i, new_spin);
        }
    }

    pub fn sweep(&mut self) {
        let n = self.a.n();
        match self.scan {
            ScanOrder::Systematic => (0..n).for_each(|i| self.update_site(i)),
            ScanOrder::Random => {
                for _ in 0..n {
                    let i = self.rng.gen_range(0..n);
                    self.update_site(i);
                }
            }
        }
        self.sweeps += 1;
    }

    pub fn run(&mut self, sweeps: usize) {
        for _ in 0..sweeps {
            self.sweep();
        }
    }

    pub fn state(&self) -> &SpinConfig {
        &self.spins
    }

    pub fn fields(&self) -> &LocalFields {
        &self.fields
    }

    pub fn sweeps_done(&self) -> usize {
        self.sweeps
    }

    pub fn hamiltonian(&self) -> f64 {
        hamiltonian_unchecked(self.a, &self.params, &self.spins.spins)
    }
}

/// Runs `sweeps` Glauber sweeps and returns the final state.
pub fn glauber_sample(
    a: &CouplingMatrix,
    params: &IsingParams,
    sweeps: usize,
    init: InitState,
    seed: u64,
) -> Result<SpinConfig> {
    if sweeps == 0 {
        return Err(Error::InvalidParams("sweeps must be at least 1".into()));
    }
    if let InitState::Config(x) = &init {
        check_dims(a, x)?;
    }
    let mut chain = GlauberSampler::new(a, *params, init, seed)?;
    chain.run(sweeps);
    Ok(chain.spins)
}

/// Burn-in followed by `count` states spaced `config.spacing` sweeps apart.
pub fn draw_samples(
    a: &CouplingMatrix,
    params: &IsingParams,
    config: &SamplerConfig,
    count: usize,
    seed: u64,
) -> Result<Vec<SpinConfig>> {
    let mut chain = GlauberSampler::new(a, *params, InitState::from(&config.init), seed)?;
    chain.run(config.burn_in.max(1));
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        if k > 0 {
            chain.run(config.spacing.max(1));
        }
        out.push(chain.state().clone());
    }
    Ok(out)
}

/// One row of a sample dump.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub replicate: usize,
    pub sweep: usize,
    pub magnetization: f64,
    pub hamiltonian: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spins: Option<String>,
}

/// Writes a sample dump as CSV (`replicate, sweep, magnetization, hamiltonian`,
/// plus a `spins` column when full states are requested).
pub fn write_trace<W: Write>(out: W, rows: &[TraceRow]) -> Result<()> {
    let with_spins = rows.first().is_some_and(|r| r.spins.is_some());
    let mut wtr = csv::Writer::from_writer(out);
    if with_spins {
        wtr.write_record(["replicate", "sweep", "magnetization", "hamiltonian", "spins"])?;
    } else {
        wtr.write_record(["replicate", "sweep", "magnetization", "hamiltonian"])?;
    }
    for r in rows {
        let mut rec = vec![
            r.replicate.to_string(),
            r.sweep.to_string(),
            r.magnetization.to_string(),
            r.hamiltonian.to_string(),
        ];
        if with_spins {
            rec.push(r.spins.clone().unwrap_or_default());
        }
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Exact probabilities of all `2^n` states. Bit `i` of the index set means
/// `x_i = +1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactTable {
    pub n: usize,
    pub probs: Vec<f64>,
    pub log_z: f64,
}

impl ExactTable {
    pub fn index_of(x: &SpinConfig) -> usize {
        x.spins.iter().enumerate().filter(|(_, &s)| s == 1).fold(0, |k, (i, _)| k | (1 << i))
    }

    pub fn config_of(&self, index: usize) -> SpinConfig {
        config_from_bits(self.n, index)
    }

    pub fn prob(&self, x: &SpinConfig) -> f64 {
        self.probs[Self::index_of(x)]
    }

    /// Distribution of the number of plus spins.
    pub fn plus_count_marginal(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n + 1];
        for (k, &p) in self.probs.iter().enumerate() {
            out[k.count_ones() as usize] += p;
        }
        out
    }
}

fn config_from_bits(n: usize, bits: usize) -> SpinConfig {
    SpinConfig { spins: (0..n).map(|i| if bits >> i & 1 == 1 { 1 } else { -1 }).collect() }
}

pub fn exact_distribution(a: &CouplingMatrix, params: &IsingParams) -> Result<ExactTable> {
    let n = a.n();
    if n > MAX_EXACT_N {
        return Err(Error::TooLarge(n));
    }
    let mut spins = vec![0i8; n];
    let log_w: Vec<f64> = (0..1usize << n)
        .map(|bits| {
            for (i, s) in spins.iter_mut().enumerate() {
                *s = if bits >> i & 1 == 1 { 1 } else { -1 };
            }
            hamiltonian_unchecked(a, params, &spins)
        })
        .collect();
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = log_w.iter().map(|&l| (l - max).exp()).sum();
    let log_z = max + total.ln();
    let probs = log_w.iter().map(|&l| (l - log_z).exp()).collect();
    Ok(ExactTable { n, probs, log_z })
}

/// Exact law of the plus-spin count for the scaled complete graph
/// `A(i, j) = 1 / (n - 1)`.
pub fn cw_plus_count_distribution(n: usize, params: &IsingParams) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::InvalidParams(format!("complete graph needs n >= 2, got {n}")));
    }
    let nf = n as f64;
    let mut log_binom = 0.0;
    let mut log_w = Vec::with_capacity(n + 1);
    for k in 0..=n {
        if k > 0 {
            log_binom += ((n - k + 1) as f64 / k as f64).ln();
        }
        let s = 2.0 * k as f64 - nf;
        // x'Ax = (S^2 - n) / (n - 1) with S the total spin
        let f = 0.5 * params.beta * (s * s - nf) / (nf - 1.0) + params.b_field * s;
        log_w.push(log_binom + f);
    }
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = log_w.iter().map(|&l| (l - max).exp()).sum();
    Ok(log_w.iter().map(|&l| (l - max).exp() / total).collect())
}

/// One exact draw from the Ising model on the scaled complete graph: the
/// plus-spin count from its exact marginal, then a uniform placement.
pub fn cw_exact_sample(n: usize, params: &IsingParams, seed: u64) -> Result<SpinConfig> {
    if !(params.beta > 0.0) {
        return Err(Error::InvalidParams(format!("beta must be positive, got {}", params.beta)));
    }
    let probs = cw_plus_count_distribution(n, params)?;
    let mut rng = rng_from_seed(seed);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut k = n;
    for (c, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            k = c;
            break;
        }
    }
    let mut spins = vec![-1i8; n];
    for i in sample_indices(&mut rng, n, k) {
        spins[i] = 1;
    }
    Ok(SpinConfig { spins })
}

/// Renders a trace row's spin column.
pub fn spins_column(x: &SpinConfig) -> String {
    let mut out = String::with_capacity(x.len());
    for &s in x.spins() {
        let _ = write!(out, "{}", if s == 1 { '+' } else { '-' });
    }
    out
}
