//! Seeded Monte-Carlo experiments.
//!
//! An [`ExperimentSpec`] names a grid of (graph family, n, parameter point,
//! replicate) cells. Every cell draws its own graph and sample seeds from the
//! master seed and its coordinates, so records do not depend on execution
//! order or on the number of worker threads.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize};

use crate::coupling::{gen_biregular, gen_er, gen_graphon, gen_regular, scaled_adjacency, CouplingMatrix, Graph, Graphon};
use crate::error::{Error, Result};
use crate::meanfield::{linspace, magnetization_root, param_curve, FixedPointLine};
use crate::model::{cw_exact_sample, draw_samples, IsingParams, SamplerConfig, SpinConfig};
use crate::pseudolikelihood::{PseudoLikelihood, SolverOptions};
use crate::rng::{derive_seed, label};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "ISING_PLFIT_THREADS";

pub const FIGURE2_DEFAULT: &str = include_str!("../configs/figure2.json");
pub const RATES_DEFAULT: &str = include_str!("../configs/rates.json");
pub const IDENTIFIABILITY_DEFAULT: &str = include_str!("../configs/identifiability.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Figure2,
    Rates,
    Identifiability,
    Custom,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::Figure2 => "figure2",
            ExperimentKind::Rates => "rates",
            ExperimentKind::Identifiability => "identifiability",
            ExperimentKind::Custom => "custom",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "figure2" => Some(Self::Figure2),
            "rates" => Some(Self::Rates),
            "identifiability" => Some(Self::Identifiability),
            "custom" => Some(Self::Custom),
            _ => None,
        }
    }

    /// The versioned default spec shipped with the crate.
    pub fn default_spec(&self) -> Option<ExperimentSpec> {
        let text = match self {
            ExperimentKind::Figure2 => FIGURE2_DEFAULT,
            ExperimentKind::Rates => RATES_DEFAULT,
            ExperimentKind::Identifiability => IDENTIFIABILITY_DEFAULT,
            ExperimentKind::Custom => return None,
        };
        Some(ExperimentSpec::from_json(text).expect("bundled spec is valid"))
    }
}

/// Random graph family, instantiated at each `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum GraphSpec {
    /// `d`-regular graph.
    Regular { d: usize },
    /// Erdős–Rényi with edge probability `p`.
    Er { p: f64 },
    /// Bi-regular bipartite graph with a fraction `p` of the vertices on the
    /// left; right vertices get degree ≈ `degree_fraction · n`.
    Biregular { p: f64, degree_fraction: f64 },
    /// W-random graph from a grid graphon.
    Graphon { grid: Vec<Vec<f64>> },
    /// Complete graph; sampled exactly instead of by Glauber dynamics.
    Complete,
}

impl GraphSpec {
    /// Value of the `d_or_family` column.
    pub fn tag(&self) -> String {
        match self {
            GraphSpec::Regular { d } => format!("d={d}"),
            GraphSpec::Er { p } => format!("er(p={p})"),
            GraphSpec::Biregular { p, degree_fraction } => format!("biregular(p={p};deg={degree_fraction})"),
            GraphSpec::Graphon { grid } => format!("graphon(k={})", grid.len()),
            GraphSpec::Complete => "complete".to_string(),
        }
    }

    pub fn generate(&self, n: usize, seed: u64) -> Result<Graph> {
        match self {
            GraphSpec::Regular { d } => gen_regular(n, *d, seed),
            GraphSpec::Er { p } => gen_er(n, *p, seed),
            GraphSpec::Biregular { p, degree_fraction } => {
                let (a, b, c, d) = biregular_sizes(n, *p, *degree_fraction)?;
                gen_biregular(a, b, c, d, seed)
            }
            GraphSpec::Graphon { grid } => Ok(gen_graphon(n, &Graphon::from_grid(grid.clone())?, seed)),
            GraphSpec::Complete => Ok(Graph::complete(n)),
        }
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Sizes `(a, b, c, d)` of the bi-regular family at `n`: `a = round(p n)`
/// left vertices of degree `c`, `b = n - a` right vertices of degree `d`,
/// with `d` the multiple of `a / gcd(a, b)` nearest to `degree_fraction · n`
/// so that `a c = b d` has an integer solution.
pub fn biregular_sizes(n: usize, p: f64, degree_fraction: f64) -> Result<(usize, usize, usize, usize)> {
    if !(p > 0.0 && p < 1.0) || !(degree_fraction > 0.0) {
        return Err(Error::Spec(format!("biregular family needs 0 < p < 1 and degree_fraction > 0, got p = {p}, degree_fraction = {degree_fraction}")));
    }
    let a = (p * n as f64).round() as usize;
    if a == 0 || a >= n {
        return Err(Error::Spec(format!("biregular family: p = {p} leaves an empty side at n = {n}")));
    }
    let b = n - a;
    let step = a / gcd(a, b);
    let target = degree_fraction * n as f64;
    let d = (((target / step as f64).round() as usize).max(1) * step).min(a - a % step);
    if d == 0 {
        return Err(Error::Spec(format!("biregular family: no feasible degree at n = {n}")));
    }
    let c = b * d / a;
    if c > b {
        return Err(Error::InfeasibleBipartite { a, b, c, d });
    }
    Ok((a, b, c, d))
}

fn one_or_many<'de, D: Deserializer<'de>>(de: D) -> std::result::Result<Vec<GraphSpec>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(GraphSpec),
        Many(Vec<GraphSpec>),
    }
    Ok(match OneOrMany::deserialize(de)? {
        OneOrMany::One(g) => vec![g],
        OneOrMany::Many(v) => v,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: ExperimentKind,
    #[serde(deserialize_with = "one_or_many")]
    pub graph: Vec<GraphSpec>,
    pub n_values: Vec<usize>,
    /// Curve magnetization; with `beta_range` it defines the parameter
    /// points, otherwise it only fixes the reference line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_range: Option<(f64, f64)>,
    /// Number of evenly spaced β values in `beta_range`.
    #[serde(default = "default_points")]
    pub points: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param_points: Option<Vec<IsingParams>>,
    pub replicates: usize,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub solver: SolverOptions,
    /// One graph per (family, n) shared by all cells, instead of a fresh
    /// graph per replicate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shared_graph: Option<bool>,
    pub seed: u64,
}

fn default_points() -> usize {
    30
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::Spec("replicates must be at least 1".into()));
        }
        if self.n_values.is_empty() || self.n_values.iter().any(|&n| n < 2) {
            return Err(Error::Spec("n_values must be non-empty with every n >= 2".into()));
        }
        if self.graph.is_empty() {
            return Err(Error::Spec("at least one graph family is required".into()));
        }
        if let Some(m) = self.m {
            if !(m.abs() < 1.0) {
                return Err(Error::Spec(format!("m must lie in (-1, 1), got {m}")));
            }
        }
        if self.param_points()?.is_empty() {
            return Err(Error::Spec("no parameter points".into()));
        }
        Ok(())
    }

    /// Explicit points, or `points` values of β on `beta_range` placed on the
    /// line through magnetization `m`.
    pub fn param_points(&self) -> Result<Vec<IsingParams>> {
        match (&self.param_points, self.beta_range, self.m) {
            (Some(points), _, _) => Ok(points.clone()),
            (None, Some((lo, hi)), Some(m)) => param_curve(m, &linspace(lo, hi, self.points)),
            _ => Err(Error::Spec("give either param_points or beta_range with m".into())),
        }
    }

    fn shares_graph(&self) -> bool {
        self.shared_graph.unwrap_or(self.name == ExperimentKind::Figure2)
    }
}

/// Outcome of the joint fit in one cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Estimate { beta_hat: f64, b_hat: f64, grad_norm: f64 },
    Failure(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRecord {
    pub experiment: String,
    pub n: usize,
    pub family: String,
    pub family_index: usize,
    pub point_index: usize,
    pub replicate: usize,
    pub graph_seed: u64,
    pub rep_seed: u64,
    pub beta_true: f64,
    pub b_true: f64,
    pub outcome: Outcome,
    /// Euclidean error of the joint estimate.
    pub err_l2: Option<f64>,
    /// `|β_proj - β|` with `β_proj` the projection of the estimate onto the
    /// fixed-point line through the true parameters.
    pub err_along: Option<f64>,
    /// Distance of the estimate from that line.
    pub err_cross: Option<f64>,
    pub t_stat: f64,
    pub rate_bound: f64,
    /// Root of `Q(β, B_true) = 0`.
    pub beta_given_b: Option<f64>,
    /// Root of `R(β_true, B) = 0`.
    pub b_given_beta: Option<f64>,
    /// Seconds; not part of any output file.
    pub wall_time: f64,
}

impl ExperimentRecord {
    pub fn estimate(&self) -> Option<(f64, f64)> {
        match self.outcome {
            Outcome::Estimate { beta_hat, b_hat, .. } => Some((beta_hat, b_hat)),
            Outcome::Failure(_) => None,
        }
    }

    fn sort_key(&self) -> (usize, usize, usize, usize) {
        (self.n, self.family_index, self.point_index, self.replicate)
    }
}

pub const RECORD_HEADER: [&str; 16] = [
    "experiment", "n", "d_or_family", "graph_seed", "rep_seed", "beta_true", "B_true", "beta_hat", "B_hat",
    "exists", "fail_set", "err_l2", "err_along", "err_cross", "t_stat", "rate_bound",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes records in the results CSV layout.
pub fn write_records<W: Write>(out: W, records: &[ExperimentRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(RECORD_HEADER)?;
    for r in records {
        let (beta_hat, b_hat, exists, fail) = match &r.outcome {
            Outcome::Estimate { beta_hat, b_hat, .. } => (Some(*beta_hat), Some(*b_hat), true, String::new()),
            Outcome::Failure(code) => (None, None, false, code.clone()),
        };
        wtr.write_record([
            r.experiment.clone(),
            r.n.to_string(),
            r.family.clone(),
            r.graph_seed.to_string(),
            r.rep_seed.to_string(),
            r.beta_true.to_string(),
            r.b_true.to_string(),
            opt(beta_hat),
            opt(b_hat),
            exists.to_string(),
            fail,
            opt(r.err_l2),
            opt(r.err_along),
            opt(r.err_cross),
            r.t_stat.to_string(),
            r.rate_bound.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Cells sharing (family, n).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub experiment: String,
    pub n: usize,
    pub d_or_family: String,
    pub records: usize,
    pub failures: usize,
    /// Quartiles of `sqrt(n) · err_l2`.
    pub scaled_err_q25: f64,
    pub scaled_err_median: f64,
    pub scaled_err_q75: f64,
    pub mean_sq_err: f64,
    /// Median of `sqrt(n) · |β̂ - β|` with `B` known.
    pub scaled_err_beta_given_b: f64,
    /// Median of `sqrt(n) · |B̂ - B|` with `β` known.
    pub scaled_err_b_given_beta: f64,
    pub median_t_stat: f64,
    pub median_err_along: f64,
    pub median_err_cross: f64,
    /// `median_err_along / median_err_cross`.
    pub along_cross_ratio: f64,
}

/// Linear-interpolation quantile of unsorted data; NaN when empty.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

pub fn summarize(records: &[ExperimentRecord]) -> Vec<SummaryRow> {
    let mut keys: Vec<(usize, usize)> = records.iter().map(|r| (r.n, r.family_index)).collect();
    keys.sort_unstable();
    keys.dedup();
    keys.into_iter()
        .map(|(n, fam)| {
            let group: Vec<&ExperimentRecord> = records.iter().filter(|r| r.n == n && r.family_index == fam).collect();
            let root_n = (n as f64).sqrt();
            let errs: Vec<f64> = group.iter().filter_map(|r| r.err_l2).collect();
            let scaled: Vec<f64> = errs.iter().map(|e| root_n * e).collect();
            let beta_u: Vec<f64> = group
                .iter()
                .filter_map(|r| r.beta_given_b.map(|b| root_n * (b - r.beta_true).abs()))
                .collect();
            let b_u: Vec<f64> = group
                .iter()
                .filter_map(|r| r.b_given_beta.map(|b| root_n * (b - r.b_true).abs()))
                .collect();
            let t: Vec<f64> = group.iter().map(|r| r.t_stat).collect();
            let along: Vec<f64> = group.iter().filter_map(|r| r.err_along).collect();
            let cross: Vec<f64> = group.iter().filter_map(|r| r.err_cross).collect();
            let mean_sq_err = if errs.is_empty() {
                f64::NAN
            } else {
                errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64
            };
            let (median_err_along, median_err_cross) = (median(&along), median(&cross));
            SummaryRow {
                experiment: group[0].experiment.clone(),
                n,
                d_or_family: group[0].family.clone(),
                records: group.len(),
                failures: group.iter().filter(|r| r.estimate().is_none()).count(),
                scaled_err_q25: quantile(&scaled, 0.25),
                scaled_err_median: median(&scaled),
                scaled_err_q75: quantile(&scaled, 0.75),
                mean_sq_err,
                scaled_err_beta_given_b: median(&beta_u),
                scaled_err_b_given_beta: median(&b_u),
                median_t_stat: median(&t),
                median_err_along,
                median_err_cross,
                along_cross_ratio: median_err_along / median_err_cross,
            }
        })
        .collect()
}

pub fn write_summary<W: Write>(out: W, rows: &[SummaryRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    for row in rows {
        wtr.serialize(row)?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    n: usize,
    family: usize,
    point: usize,
    replicate: usize,
}

/// Worker count from `ISING_PLFIT_THREADS`, if set to a positive integer.
pub fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&t| t > 0)
}

/// Runs every cell of `spec` on `threads` workers (machine default when
/// `None`) and returns records sorted by (n, family, point, replicate).
pub fn run_experiment_with_threads(spec: &ExperimentSpec, threads: Option<usize>) -> Result<Vec<ExperimentRecord>> {
    spec.validate()?;
    let points = spec.param_points()?;
    let shared = spec.shares_graph();
    let mut cells = Vec::new();
    for &n in &spec.n_values {
        for family in 0..spec.graph.len() {
            for point in 0..points.len() {
                for replicate in 0..spec.replicates {
                    cells.push(Cell { n, family, point, replicate });
                }
            }
        }
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(|e| Error::Spec(format!("thread pool: {e}")))?;
    let mut records = pool.install(|| {
        let graphs: Vec<((usize, usize), u64, Result<CouplingMatrix>)> = if shared {
            spec.n_values
                .iter()
                .flat_map(|&n| (0..spec.graph.len()).map(move |f| (n, f)))
                .collect::<Vec<_>>()
                .into_par_iter()
                .map(|(n, f)| {
                    let seed = graph_seed(spec, n, f, None);
                    ((n, f), seed, build_coupling(&spec.graph[f], n, seed))
                })
                .collect()
        } else {
            Vec::new()
        };
        cells
            .par_iter()
            .map(|cell| {
                let shared_graph = graphs.iter().find(|(key, _, _)| *key == (cell.n, cell.family));
                run_cell(spec, &points, cell, shared_graph.map(|(_, s, g)| (*s, g)))
            })
            .collect::<Vec<_>>()
    });
    records.sort_by_key(|r| r.sort_key());
    Ok(records)
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<ExperimentRecord>> {
    run_experiment_with_threads(spec, threads_from_env())
}

fn expect_kind(spec: &ExperimentSpec, kind: ExperimentKind) -> Result<()> {
    if spec.name != kind {
        return Err(Error::Spec(format!("expected a {} spec, got {}", kind.as_str(), spec.name.as_str())));
    }
    Ok(())
}

/// Joint fits on one graph per (n, d) for parameter points on a
/// fixed-point line.
pub fn run_figure2(spec: &ExperimentSpec) -> Result<Vec<ExperimentRecord>> {
    expect_kind(spec, ExperimentKind::Figure2)?;
    run_experiment(spec)
}

/// Joint and univariate fits on fresh graphs per replicate across n.
pub fn run_rates(spec: &ExperimentSpec) -> Result<Vec<ExperimentRecord>> {
    expect_kind(spec, ExperimentKind::Rates)?;
    run_experiment(spec)
}

/// `T_n` and the along-line/cross-line split of the joint error across n.
pub fn run_identifiability(spec: &ExperimentSpec) -> Result<Vec<ExperimentRecord>> {
    expect_kind(spec, ExperimentKind::Identifiability)?;
    run_experiment(spec)
}

fn graph_seed(spec: &ExperimentSpec, n: usize, family: usize, replicate: Option<usize>) -> u64 {
    let mut path = vec![label("graph"), n as u64, family as u64];
    if let Some(r) = replicate {
        path.push(r as u64);
    }
    derive_seed(spec.seed, &path)
}

fn build_coupling(g: &GraphSpec, n: usize, seed: u64) -> Result<CouplingMatrix> {
    scaled_adjacency(&g.generate(n, seed)?)
}

fn run_cell(
    spec: &ExperimentSpec,
    points: &[IsingParams],
    cell: &Cell,
    shared: Option<(u64, &Result<CouplingMatrix>)>,
) -> ExperimentRecord {
    let started = Instant::now();
    let truth = points[cell.point];
    let rep_seed = derive_seed(
        spec.seed,
        &[label("sample"), cell.n as u64, cell.family as u64, cell.point as u64, cell.replicate as u64],
    );
    let mut record = ExperimentRecord {
        experiment: spec.name.as_str().to_string(),
        n: cell.n,
        family: spec.graph[cell.family].tag(),
        family_index: cell.family,
        point_index: cell.point,
        replicate: cell.replicate,
        graph_seed: 0,
        rep_seed,
        beta_true: truth.beta,
        b_true: truth.b_field,
        outcome: Outcome::Failure(String::new()),
        err_l2: None,
        err_along: None,
        err_cross: None,
        t_stat: f64::NAN,
        rate_bound: f64::NAN,
        beta_given_b: None,
        b_given_beta: None,
        wall_time: 0.0,
    };
    let owned;
    let coupling = match shared {
        Some((seed, g)) => {
            record.graph_seed = seed;
            g.as_ref().map_err(|e| e.failure_code())
        }
        None => {
            record.graph_seed = graph_seed(spec, cell.n, cell.family, Some(cell.replicate));
            owned = build_coupling(&spec.graph[cell.family], cell.n, record.graph_seed);
            owned.as_ref().map_err(|e| e.failure_code())
        }
    };
    match coupling {
        Ok(a) => fill_cell(spec, &spec.graph[cell.family], a, &truth, &mut record),
        Err(code) => record.outcome = Outcome::Failure(code),
    }
    record.wall_time = started.elapsed().as_secs_f64();
    record
}

fn fill_cell(spec: &ExperimentSpec, family: &GraphSpec, a: &CouplingMatrix, truth: &IsingParams, record: &mut ExperimentRecord) {
    let sample = match draw_one(spec, family, a, truth, record.rep_seed) {
        Ok(x) => x,
        Err(e) => {
            record.outcome = Outcome::Failure(e.failure_code());
            return;
        }
    };
    let pl = PseudoLikelihood::new(a, &sample).expect("sample matches coupling dimension");
    record.t_stat = pl.t_stat();
    record.rate_bound = crate::pseudolikelihood::rate_bound(a.n(), record.t_stat);
    record.beta_given_b = pl.fit_beta(truth.b_field).ok();
    record.b_given_beta = pl.fit_b(truth.beta).ok();
    match pl.fit_joint(&spec.solver) {
        Ok(fit) => {
            record.outcome = Outcome::Estimate { beta_hat: fit.beta_hat, b_hat: fit.b_hat, grad_norm: fit.final_gradient_norm };
            record.err_l2 = Some((fit.beta_hat - truth.beta).hypot(fit.b_hat - truth.b_field));
            if let Some(line) = reference_line(spec, a, truth) {
                record.err_along = Some((line.project_beta(fit.beta_hat, fit.b_hat) - truth.beta).abs());
                record.err_cross = Some(line.distance(fit.beta_hat, fit.b_hat));
            }
        }
        Err(e) => record.outcome = Outcome::Failure(e.failure_code()),
    }
}

/// The fixed-point line through the true parameters: the spec's `m` when
/// given, otherwise the mean-field magnetization at the mean row sum.
fn reference_line(spec: &ExperimentSpec, a: &CouplingMatrix, truth: &IsingParams) -> Option<FixedPointLine> {
    let m = match spec.m {
        Some(m) => m,
        None => {
            let theta = a.row_sums().iter().sum::<f64>() / a.n() as f64;
            magnetization_root(truth.beta.max(0.0), theta, truth.b_field).ok()?.m0
        }
    };
    FixedPointLine::new(m).ok()
}

fn draw_one(spec: &ExperimentSpec, family: &GraphSpec, a: &CouplingMatrix, truth: &IsingParams, seed: u64) -> Result<SpinConfig> {
    if *family == GraphSpec::Complete && truth.beta > 0.0 {
        return cw_exact_sample(a.n(), truth, seed);
    }
    Ok(draw_samples(a, truth, &spec.sampler, 1, seed)?.remove(0))
}
