//! Graphs, random graph generators and coupling matrices.
//!
//! A [`CouplingMatrix`] is a symmetric, non-negative matrix with a zero
//! diagonal. It is stored once per unordered pair and additionally as a
//! compressed row structure, so a Glauber update touches only the
//! neighbours of the site being resampled.

use std::collections::HashSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, Rng};

/// Restart budget for the stub-matching generators.
pub const GENERATION_ATTEMPTS: usize = 1000;

/// A simple undirected graph on vertices `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
}

impl Graph {
    /// Builds a graph from unordered pairs. Pairs are normalized to `i < j`
    /// and sorted.
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut edges: Vec<(usize, usize)> = edges
            .into_iter()
            .map(|(i, j)| if i <= j { (i, j) } else { (j, i) })
            .collect();
        for &(i, j) in &edges {
            if j >= n {
                return Err(Error::InvalidGraph(format!("edge ({i}, {j}) out of range for n = {n}")));
            }
            if i == j {
                return Err(Error::InvalidGraph(format!("self-loop at vertex {i}")));
            }
        }
        edges.sort_unstable();
        if let Some(w) = edges.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidGraph(format!("repeated edge ({}, {})", w[0].0, w[0].1)));
        }
        Ok(Self { n, edges })
    }

    pub fn empty(n: usize) -> Self {
        Self { n, edges: Vec::new() }
    }

    pub fn complete(n: usize) -> Self {
        let edges = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        Self { n, edges }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Sorted edge list with `i < j`.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n];
        for &(i, j) in &self.edges {
            deg[i] += 1;
            deg[j] += 1;
        }
        deg
    }

    /// Relabels vertex `v` as `perm[v]`.
    pub fn relabel(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.n)?;
        Graph::new(self.n, self.edges.iter().map(|&(i, j)| (perm[i], perm[j])))
    }

    /// Edge-list text: a `n m` header followed by `i j` lines.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::with_capacity(8 * self.edges.len() + 16);
        let _ = writeln!(out, "{} {}", self.n, self.edges.len());
        for &(i, j) in &self.edges {
            let _ = writeln!(out, "{i} {j}");
        }
        out
    }

    pub fn parse_edge_list(text: &str) -> Result<Self> {
        let mut lines = data_lines(text);
        let (line_no, header) = lines
            .next()
            .ok_or(Error::Parse { line: 0, msg: "missing header".into() })?;
        let [n, m] = parse_fields::<usize, 2>(header, line_no)?;
        let mut edges = Vec::with_capacity(m);
        for (line_no, line) in lines.by_ref() {
            let [i, j] = parse_fields::<usize, 2>(line, line_no)?;
            edges.push((i, j));
        }
        if edges.len() != m {
            return Err(Error::Parse {
                line: 1,
                msg: format!("header announces {m} edges, found {}", edges.len()),
            });
        }
        Graph::new(n, edges)
    }
}

fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: perm.len() });
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || seen[p] {
            return Err(Error::InvalidGraph("relabeling is not a permutation".into()));
        }
        seen[p] = true;
    }
    Ok(())
}

/// Non-empty, non-comment lines with their 1-based line numbers.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_fields<T: std::str::FromStr, const K: usize>(line: &str, line_no: usize) -> Result<[T; K]> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != K {
        return Err(Error::Parse {
            line: line_no,
            msg: format!("expected {K} fields, found {}", fields.len()),
        });
    }
    let parsed: Vec<T> = fields
        .iter()
        .map(|f| {
            f.parse::<T>()
                .map_err(|_| Error::Parse { line: line_no, msg: format!("cannot parse '{f}'") })
        })
        .collect::<Result<_>>()?;
    parsed
        .try_into()
        .map_err(|_| Error::Parse { line: line_no, msg: "field count".into() })
}

fn edge_key(u: usize, v: usize) -> u64 {
    let (a, b) = if u < v { (u, v) } else { (v, u) };
    ((a as u64) << 32) | b as u64
}

/// Uniform random `d`-regular simple graph on `n` vertices (approximately).
///
/// Stubs are paired one edge at a time, redrawing any pair that would form a
/// loop or a multi-edge; if the leftover stubs admit no valid pair the whole
/// matching restarts. Degrees above `(n - 1) / 2` are built as the
/// complement of an `(n - 1 - d)`-regular graph.
pub fn gen_regular(n: usize, d: usize, seed: u64) -> Result<Graph> {
    if d == 0 || d >= n || (n * d) % 2 == 1 {
        return Err(Error::InfeasibleDegree { n, d });
    }
    if d == n - 1 {
        return Ok(Graph::complete(n));
    }
    if 2 * d > n - 1 {
        let sparse = gen_regular(n, n - 1 - d, seed)?;
        return Ok(complement(&sparse, |_, _| true));
    }
    let mut rng = rng_from_seed(seed);
    for _ in 0..GENERATION_ATTEMPTS {
        let mut stubs: Vec<usize> = (0..n).flat_map(|v| std::iter::repeat(v).take(d)).collect();
        stubs.shuffle(&mut rng);
        if let Some(edges) = match_stubs(&mut rng, stubs, n * d / 2) {
            return Graph::new(n, edges);
        }
    }
    Err(Error::GenerationFailure { attempts: GENERATION_ATTEMPTS })
}

fn match_stubs(rng: &mut Rng, mut stubs: Vec<usize>, target: usize) -> Option<Vec<(usize, usize)>> {
    let mut adjacent = HashSet::with_capacity(2 * target);
    let mut edges = Vec::with_capacity(target);
    let mut failures = 0usize;
    while !stubs.is_empty() {
        let len = stubs.len();
        let a = rng.gen_range(0..len);
        let b = rng.gen_range(0..len);
        let (u, v) = (stubs[a], stubs[b]);
        if a != b && u != v && !adjacent.contains(&edge_key(u, v)) {
            adjacent.insert(edge_key(u, v));
            edges.push((u, v));
            let (hi, lo) = if a > b { (a, b) } else { (b, a) };
            stubs.swap_remove(hi);
            stubs.swap_remove(lo);
            failures = 0;
            continue;
        }
        failures += 1;
        if failures > 64 + 4 * len {
            let mut open: Vec<usize> = stubs.clone();
            open.sort_unstable();
            open.dedup();
            let stuck = open.iter().enumerate().all(|(k, &u)| {
                open[k + 1..].iter().all(|&v| adjacent.contains(&edge_key(u, v)))
            });
            if stuck {
                return None;
            }
            failures = 0;
        }
    }
    Some(edges)
}

/// Erdős–Rényi graph: every pair independently with probability `p`.
pub fn gen_er(n: usize, p: f64, seed: u64) -> Result<Graph> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidProbability(p));
    }
    let mut rng = rng_from_seed(seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(p) {
                edges.push((i, j));
            }
        }
    }
    Ok(Graph { n, edges })
}

/// Bipartite graph with `a` left vertices of degree `c` and `b` right
/// vertices of degree `d`. Left vertices are `0..a`, right are `a..a + b`.
/// Above half density the graph is the bipartite complement of a sparser one.
pub fn gen_biregular(a: usize, b: usize, c: usize, d: usize, seed: u64) -> Result<Graph> {
    if a * c != b * d || c > b || d > a || a == 0 || b == 0 || c == 0 {
        return Err(Error::InfeasibleBipartite { a, b, c, d });
    }
    if c == b {
        return Ok(complement(&Graph::empty(a + b), |u, v| (u < a) != (v < a)));
    }
    if 2 * c > b {
        let sparse = gen_biregular(a, b, b - c, a - d, seed)?;
        return Ok(complement(&sparse, |u, v| (u < a) != (v < a)));
    }
    let mut rng = rng_from_seed(seed);
    for _ in 0..GENERATION_ATTEMPTS {
        let left: Vec<usize> = (0..a).flat_map(|v| std::iter::repeat(v).take(c)).collect();
        let right: Vec<usize> = (a..a + b).flat_map(|v| std::iter::repeat(v).take(d)).collect();
        if let Some(edges) = match_bipartite_stubs(&mut rng, left, right) {
            return Graph::new(a + b, edges);
        }
    }
    Err(Error::GenerationFailure { attempts: GENERATION_ATTEMPTS })
}

/// Pairs allowed by `admissible` that are not edges of `g`.
fn complement(g: &Graph, admissible: impl Fn(usize, usize) -> bool) -> Graph {
    let n = g.n;
    let mut present = vec![false; n * n];
    for &(i, j) in &g.edges {
        present[i * n + j] = true;
    }
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if admissible(i, j) && !present[i * n + j] {
                edges.push((i, j));
            }
        }
    }
    Graph { n, edges }
}

fn match_bipartite_stubs(
    rng: &mut Rng,
    mut left: Vec<usize>,
    mut right: Vec<usize>,
) -> Option<Vec<(usize, usize)>> {
    let mut adjacent = HashSet::with_capacity(2 * left.len());
    let mut edges = Vec::with_capacity(left.len());
    let mut failures = 0usize;
    while !left.is_empty() {
        let a = rng.gen_range(0..left.len());
        let b = rng.gen_range(0..right.len());
        let (u, v) = (left[a], right[b]);
        if !adjacent.contains(&edge_key(u, v)) {
            adjacent.insert(edge_key(u, v));
            edges.push((u, v));
            left.swap_remove(a);
            right.swap_remove(b);
            failures = 0;
            continue;
        }
        failures += 1;
        if failures > 64 + 4 * left.len() {
            let mut open_l = left.clone();
            open_l.sort_unstable();
            open_l.dedup();
            let mut open_r = right.clone();
            open_r.sort_unstable();
            open_r.dedup();
            let stuck = open_l
                .iter()
                .all(|&u| open_r.iter().all(|&v| adjacent.contains(&edge_key(u, v))));
            if stuck {
                return None;
            }
            failures = 0;
        }
    }
    Some(edges)
}

/// Symmetric function on the unit square given by values on a uniform
/// `k x k` grid (nodes at `i / (k - 1)`), evaluated by bilinear interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct Graphon {
    grid: Vec<Vec<f64>>,
}

impl Graphon {
    pub fn from_grid(grid: Vec<Vec<f64>>) -> Result<Self> {
        let k = grid.len();
        if k == 0 {
            return Err(Error::InvalidGraphon("empty grid".into()));
        }
        for (i, row) in grid.iter().enumerate() {
            if row.len() != k {
                return Err(Error::InvalidGraphon(format!("row {i} has {} values, expected {k}", row.len())));
            }
            for (j, &v) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::InvalidGraphon(format!("value {v} at ({i}, {j}) outside [0, 1]")));
                }
                if (v - grid[j][i]).abs() > 1e-12 {
                    return Err(Error::InvalidGraphon(format!("grid not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self { grid })
    }

    /// Parses a JSON array of arrays.
    pub fn from_json(text: &str) -> Result<Self> {
        let grid: Vec<Vec<f64>> = serde_json::from_str(text)?;
        Self::from_grid(grid)
    }

    /// Tabulates `f` on a `k x k` grid.
    pub fn tabulate(k: usize, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let node = |i: usize| if k == 1 { 0.0 } else { i as f64 / (k - 1) as f64 };
        Self::from_grid((0..k).map(|i| (0..k).map(|j| f(node(i), node(j))).collect()).collect())
    }

    pub fn value(&self, x: f64, y: f64) -> f64 {
        let k = self.grid.len();
        if k == 1 {
            return self.grid[0][0];
        }
        let scale = (k - 1) as f64;
        let locate = |t: f64| {
            let s = t.clamp(0.0, 1.0) * scale;
            let i = (s.floor() as usize).min(k - 2);
            (i, s - i as f64)
        };
        let (i, fx) = locate(x);
        let (j, fy) = locate(y);
        let g = &self.grid;
        let v = g[i][j] * (1.0 - fx) * (1.0 - fy)
            + g[i + 1][j] * fx * (1.0 - fy)
            + g[i][j + 1] * (1.0 - fx) * fy
            + g[i + 1][j + 1] * fx * fy;
        v.clamp(0.0, 1.0)
    }
}

/// W-random graph: latent positions `u_i ~ U[0, 1]`, edge `(i, j)` with
/// probability `W(u_i, u_j)`.
pub fn gen_graphon(n: usize, w: &Graphon, seed: u64) -> Graph {
    let mut rng = rng_from_seed(seed);
    let u: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(w.value(u[i], u[j])) {
                edges.push((i, j));
            }
        }
    }
    Graph { n, edges }
}

/// Symmetric non-negative coupling matrix with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingMatrix {
    n: usize,
    entries: Vec<(usize, usize, f64)>,
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    weights: Vec<f64>,
    row_sums: Vec<f64>,
    gamma: f64,
}

impl CouplingMatrix {
    /// Builds a matrix from `(i, j, w)` triples, one per unordered pair.
    /// Zero weights are dropped.
    pub fn from_entries(n: usize, entries: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let mut list = Vec::new();
        for (i, j, w) in entries {
            if i >= n || j >= n {
                return Err(Error::InvalidCoupling(format!("entry ({i}, {j}) out of range for n = {n}")));
            }
            if i == j {
                return Err(Error::InvalidCoupling(format!("non-zero diagonal at {i}")));
            }
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidCoupling(format!("weight {w} at ({i}, {j}) is not a finite non-negative number")));
            }
            if w > 0.0 {
                list.push((i.min(j), i.max(j), w));
            }
        }
        list.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        if let Some(w) = list.windows(2).find(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1)) {
            return Err(Error::InvalidCoupling(format!("pair ({}, {}) given twice", w[0].0, w[0].1)));
        }
        Ok(Self::from_sorted(n, list))
    }

    fn from_sorted(n: usize, entries: Vec<(usize, usize, f64)>) -> Self {
        let mut degree = vec![0usize; n];
        for &(i, j, _) in &entries {
            degree[i] += 1;
            degree[j] += 1;
        }
        let mut offsets = vec![0usize; n + 1];
        for i in 0..n {
            offsets[i + 1] = offsets[i] + degree[i];
        }
        let mut fill = offsets.clone();
        let mut neighbors = vec![0usize; offsets[n]];
        let mut weights = vec![0.0; offsets[n]];
        // Entries are sorted by (i, j), so every row ends up sorted by column.
        for &(i, j, w) in &entries {
            neighbors[fill[i]] = j;
            weights[fill[i]] = w;
            fill[i] += 1;
        }
        for &(i, j, w) in &entries {
            neighbors[fill[j]] = i;
            weights[fill[j]] = w;
            fill[j] += 1;
        }
        for i in 0..n {
            let range = offsets[i]..offsets[i + 1];
            let mut row: Vec<(usize, f64)> = neighbors[range.clone()]
                .iter()
                .copied()
                .zip(weights[range.clone()].iter().copied())
                .collect();
            row.sort_unstable_by_key(|&(j, _)| j);
            for (k, (j, w)) in row.into_iter().enumerate() {
                neighbors[range.start + k] = j;
                weights[range.start + k] = w;
            }
        }
        let row_sums: Vec<f64> = (0..n).map(|i| weights[offsets[i]..offsets[i + 1]].iter().sum()).collect();
        let gamma = row_sums.iter().copied().fold(0.0, f64::max);
        Self { n, entries, offsets, neighbors, weights, row_sums, gamma }
    }

    /// The all-zero matrix.
    pub fn zeros(n: usize) -> Self {
        Self::from_sorted(n, Vec::new())
    }

    /// Scaled complete graph, `A(i, j) = 1 / (n - 1)`.
    pub fn complete_scaled(n: usize) -> Result<Self> {
        scaled_adjacency(&Graph::complete(n))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Non-zero entries, once per unordered pair with `i < j`, sorted.
    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    /// Neighbours of `i` with their weights, sorted by column.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.offsets[i]..self.offsets[i + 1];
        self.neighbors[range.clone()].iter().copied().zip(self.weights[range].iter().copied())
    }

    pub fn row_indices(&self, i: usize) -> &[usize] {
        &self.neighbors[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn row_weights(&self, i: usize) -> &[f64] {
        &self.weights[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let cols = self.row_indices(i);
        match cols.binary_search(&j) {
            Ok(k) => self.row_weights(i)[k],
            Err(_) => 0.0,
        }
    }

    pub fn row_sums(&self) -> &[f64] {
        &self.row_sums
    }

    /// Maximum row sum.
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut dense = vec![vec![0.0; self.n]; self.n];
        for &(i, j, w) in &self.entries {
            dense[i][j] = w;
            dense[j][i] = w;
        }
        dense
    }

    /// The matrix with vertex `v` relabeled as `perm[v]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.n)?;
        Self::from_entries(self.n, self.entries.iter().map(|&(i, j, w)| (perm[i], perm[j], w)))
    }

    /// Text form: `n nnz` header, then `i j w` lines with `i < j`.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(32 * self.entries.len() + 16);
        let _ = writeln!(out, "{} {}", self.n, self.entries.len());
        for &(i, j, w) in &self.entries {
            let _ = writeln!(out, "{i} {j} {w:.16e}");
        }
        out
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut lines = data_lines(text);
        let (line_no, header) = lines
            .next()
            .ok_or(Error::Parse { line: 0, msg: "missing header".into() })?;
        let [n, nnz] = parse_fields::<usize, 2>(header, line_no)?;
        let mut entries = Vec::with_capacity(nnz);
        for (line_no, line) in lines {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(Error::Parse { line: line_no, msg: format!("expected 3 fields, found {}", fields.len()) });
            }
            let bad = |f: &str| Error::Parse { line: line_no, msg: format!("cannot parse '{f}'") };
            let i: usize = fields[0].parse().map_err(|_| bad(fields[0]))?;
            let j: usize = fields[1].parse().map_err(|_| bad(fields[1]))?;
            let w: f64 = fields[2].parse().map_err(|_| bad(fields[2]))?;
            entries.push((i, j, w));
        }
        if entries.len() != nnz {
            return Err(Error::Parse {
                line: 1,
                msg: format!("header announces {nnz} entries, found {}", entries.len()),
            });
        }
        Self::from_entries(n, entries)
    }
}

/// Adjacency matrix scaled by `n / (2E)`, so that the entries sum to `n`.
pub fn scaled_adjacency(g: &Graph) -> Result<CouplingMatrix> {
    if g.num_edges() == 0 {
        return Err(Error::EmptyGraph);
    }
    let w = g.n() as f64 / (2.0 * g.num_edges() as f64);
    Ok(CouplingMatrix::from_sorted(g.n(), g.edges().iter().map(|&(i, j)| (i, j, w)).collect()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegimeLabel {
    SparseBoundedDegree,
    DenseIrregular,
    DenseRegularLike,
    Indeterminate,
}

/// Finite-n cutoffs for the regime classification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeThresholds {
    /// `mean_field_stat` at or above this is treated as sparse.
    pub mean_field: f64,
    /// `row_sum_variance` at or above this is treated as irregular.
    pub row_sum_variance: f64,
    /// Below this `total_weight` the matrix is treated as trivial.
    pub min_total_weight: f64,
}

impl Default for RegimeThresholds {
    fn default() -> Self {
        Self { mean_field: 0.05, row_sum_variance: 0.01, min_total_weight: 1e-9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    pub gamma: f64,
    /// `(1/n) sum_ij A(i,j)^2`
    pub mean_field_stat: f64,
    /// `(1/n) sum_i (R(i) - mean R)^2`
    pub row_sum_variance: f64,
    /// `(1/n) sum_ij A(i,j)`
    pub total_weight: f64,
    pub label: RegimeLabel,
}

pub fn regime_report(a: &CouplingMatrix, thresholds: &RegimeThresholds) -> RegimeReport {
    let n = a.n().max(1) as f64;
    let mean_field_stat = 2.0 * a.entries().iter().map(|&(_, _, w)| w * w).sum::<f64>() / n;
    let total_weight = 2.0 * a.entries().iter().map(|&(_, _, w)| w).sum::<f64>() / n;
    let mean_row = a.row_sums().iter().sum::<f64>() / n;
    let row_sum_variance = a.row_sums().iter().map(|r| (r - mean_row).powi(2)).sum::<f64>() / n;
    let label = if !(total_weight >= thresholds.min_total_weight) || !mean_field_stat.is_finite() {
        RegimeLabel::Indeterminate
    } else if mean_field_stat >= thresholds.mean_field {
        RegimeLabel::SparseBoundedDegree
    } else if row_sum_variance >= thresholds.row_sum_variance {
        RegimeLabel::DenseIrregular
    } else {
        RegimeLabel::DenseRegularLike
    };
    RegimeReport { gamma: a.gamma(), mean_field_stat, row_sum_variance, total_weight, label }
}
