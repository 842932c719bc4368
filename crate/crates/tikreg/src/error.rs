use thiserror::Error;

/// Errors produced by the fitting, transformation, and cross-validation
/// routines. Variants carry enough context (operand names, sample/segment
/// indices, the offending value) that callers can report a precise message
/// without re-deriving anything.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} is empty")]
    Empty { what: &'static str },

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: String,
        found: String,
    },

    #[error("{what} contains a non-finite value")]
    NonFinite { what: String },

    #[error("contract violation: {what}")]
    Contract { what: String },

    #[error("SVD failed to converge for a {rows}x{cols} matrix")]
    SvdNoConvergence { rows: usize, cols: usize },

    #[error("singular or near-singular system in {what} (condition estimate {condition:.3e})")]
    SingularSystem { what: String, condition: f64 },

    #[error(
        "ill-conditioned operator in {what}: relative solve residual {residual:.3e} exceeds {bound:.3e}"
    )]
    IllConditioned {
        what: String,
        residual: f64,
        bound: f64,
    },

    #[error("invalid argument: {what}")]
    InvalidArgument { what: String },

    #[error(
        "lambda = 0 requires full rank min(n-1, p) = {full} but the predictors have rank {rank}"
    )]
    RankDeficient { rank: usize, full: usize },

    #[error(
        "cross-validation denominator vanished for sample {sample} at lambda = {lambda:.6e} \
         (1 - leverage - correction = {denominator:.3e})"
    )]
    LeverageOverflow {
        sample: usize,
        lambda: f64,
        denominator: f64,
    },

    #[error("degenerate model: {what}")]
    Degenerate { what: String },

    #[error("segment {segment} at lambda = {lambda:.6e}: {source}")]
    SegmentSolve {
        segment: usize,
        lambda: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("segment labels are required for this operation but the dataset has none")]
    MissingSegments,

    #[error("invalid segment labels: {what}")]
    InvalidSegments { what: String },
}

pub type Result<T> = std::result::Result<T, Error>;
