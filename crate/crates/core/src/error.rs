use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("non-binary treatment value `{value}` on row {row}")]
    NonBinaryTreatment { row: usize, value: String },

    #[error("non-numeric value `{value}` in column `{column}` on row {row}")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("overlap violated in cell {cell}: {detail}")]
    OverlapViolated { cell: String, detail: String },

    #[error("invalid coarsening: {0}")]
    InvalidCoarsening(String),

    #[error("unknown cell {0}")]
    UnknownCell(usize),

    #[error("probability level {0} outside (0,1)")]
    InvalidLevel(f64),

    #[error("c = {c} exceeds identification region (propensity {p})")]
    CExceedsRegion { c: f64, p: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("overlap unattainable after {0} redraws")]
    RedrawCapExceeded(usize),

    #[error("soft infimum undefined at zero norm")]
    ZeroNorm,

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    /// True for failures caused by bad input rather than by the numerics.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Numerical(_) | Error::ZeroNorm | Error::Io(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
