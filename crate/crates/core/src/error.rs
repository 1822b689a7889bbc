use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid with 2^({n}*{d}) points exceeds the limit of {limit} points")]
    Capacity { n: u32, d: usize, limit: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("rank-deficient Gram matrix (smallest eigenvalue {min_eigenvalue:e})")]
    RankDeficient { min_eigenvalue: f64 },

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("level {k} is too deep: levels must satisfy k <= n - r = {max}")]
    LevelTooDeep { k: u32, max: i64 },

    #[error("point {0:?} lies outside the closed unit cube")]
    OutOfDomain(Vec<f64>),

    #[error("the segment [x, x + r*h] leaves the unit cube")]
    SegmentOutsideDomain,

    #[error("compact embedding s > d/p violated: s = {s}, d/p = {bound}")]
    CompactEmbedding { s: f64, bound: f64 },

    #[error("beta = {beta} lies outside the admissible interval ({lo}, {hi})")]
    InvalidBeta { beta: f64, lo: f64, hi: f64 },

    #[error("epsilon = {0} is outside [0, 1); apply the sigma^2 < m guard first")]
    EpsilonDomain(f64),

    #[error("packing budget exhausted: kept {kept} vector(s) at target distance {target}")]
    PackingBudget { kept: usize, target: usize },

    #[error("rate fit needs positive data, got ({x}, {y})")]
    NonPositive { x: f64, y: f64 },

    #[error("at least {required} points required, got {found}")]
    TooFewPoints { required: usize, found: usize },

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("malformed serialized data: {0}")]
    Decode(String),
}

pub type Result<T> = std::result::Result<T, Error>;
