use std::fmt;

use serde::{Deserialize, Serialize};

/// Configuration sets on which the joint pseudo-likelihood equation has no
/// unique root.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FailingSet {
    /// Local fields are all equal (zero variance).
    A1,
    /// Every spin agrees in sign with its local field.
    A2,
    /// Every spin disagrees in sign with its local field.
    A3,
    /// All spins equal.
    A4,
    /// Not in A1..A4, but a threshold on the local field separates the plus
    /// sites from the minus sites, so the objective increases without bound
    /// along an oblique direction.
    Separated,
}

impl fmt::Display for FailingSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FailingSet::A1 => "A1",
            FailingSet::A2 => "A2",
            FailingSet::A3 => "A3",
            FailingSet::A4 => "A4",
            FailingSet::Separated => "Separated",
        };
        f.write_str(s)
    }
}

/// Why a univariate pseudo-likelihood equation has no root.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoRootKind {
    /// x_i m_i = |m_i| for all i; Q stays positive.
    A2Like,
    /// x_i m_i = -|m_i| for all i; Q stays negative.
    A3Like,
    /// x = +1 or x = -1; R never vanishes.
    ConstantSpins,
    /// The bracket reached its maximal width without a sign change.
    BracketExhausted,
}

impl fmt::Display for NoRootKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            NoRootKind::A2Like => "A2-like",
            NoRootKind::A3Like => "A3-like",
            NoRootKind::ConstantSpins => "constant spins",
            NoRootKind::BracketExhausted => "bracket exhausted",
        };
        f.write_str(s)
    }
}

pub(crate) fn join_sets(sets: &[FailingSet]) -> String {
    sets.iter().map(|s| s.to_string()).collect::<Vec<_>>().join("|")
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("graph has no edges")]
    EmptyGraph,
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("invalid coupling matrix: {0}")]
    InvalidCoupling(String),
    #[error("no {d}-regular simple graph on {n} vertices")]
    InfeasibleDegree { n: usize, d: usize },
    #[error("infeasible bi-regular parameters a={a} b={b} c={c} d={d}")]
    InfeasibleBipartite { a: usize, b: usize, c: usize, d: usize },
    #[error("graph generation failed after {attempts} attempts")]
    GenerationFailure { attempts: usize },
    #[error("invalid graphon: {0}")]
    InvalidGraphon(String),
    #[error("invalid probability {0}")]
    InvalidProbability(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("exact enumeration limited to n <= 20, got n = {0}")]
    TooLarge(usize),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("pseudo-likelihood estimator does not exist (failing sets: {})", join_sets(.0))]
    NoEstimator(Vec<FailingSet>),
    #[error("solver did not converge in {iterations} iterations (gradient norm {grad_norm:e})")]
    NonConvergence { iterations: usize, grad_norm: f64 },
    #[error("univariate equation has no root ({0})")]
    NoRoot(NoRootKind),
    #[error("all local fields are zero")]
    DegenerateFields,
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid experiment spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of the numerics (as opposed to bad input or I/O).
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NoEstimator(_)
                | Error::NonConvergence { .. }
                | Error::NoRoot(_)
                | Error::DegenerateFields
                | Error::GenerationFailure { .. }
        )
    }

    /// Short code used in result tables.
    pub fn failure_code(&self) -> String {
        match self {
            Error::NoEstimator(sets) => join_sets(sets),
            Error::NonConvergence { .. } => "NonConvergence".to_string(),
            Error::NoRoot(kind) => format!("NoRoot({kind})"),
            Error::DegenerateFields => "DegenerateFields".to_string(),
            Error::GenerationFailure { .. } => "GenerationFailure".to_string(),
            Error::EmptyGraph => "EmptyGraph".to_string(),
            Error::InfeasibleDegree { .. } => "InfeasibleDegree".to_string(),
            Error::InfeasibleBipartite { .. } => "InfeasibleBipartite".to_string(),
            other => format!("{other}"),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
