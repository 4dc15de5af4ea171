use thiserror::Error;

/// Errors raised by the starkit library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("parse error at {line}:{column}: expected {}, found {found}", expected.join(" | "))]
    Parse { line: usize, column: usize, expected: Vec<String>, found: String },
    #[error("{node} at {line}:{column} needs at least one argument")]
    Arity { node: &'static str, line: usize, column: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("distance function vanishes on an open set")]
    DegenerateExpr,
    #[error("skeleton contains an irrationally sloped line")]
    IrrationalSkeleton,
    #[error("width fit failed: {0}")]
    FitFailure(String),
    #[error("numerical procedure did not converge: {0}")]
    NonConvergent(String),
    #[error("the two distance functions do not share a single skeleton line")]
    SkeletonMismatch,
    #[error("continued fraction needs more precision than available after {terms} terms")]
    PrecisionExhausted { terms: usize },
    #[error("no ubiquity index found up to {0}")]
    EmptySequence(u64),
    #[error("skeleton line is not significant (width exponent {0:.4})")]
    NotSignificant(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("no solutions below the bound {0}")]
    NoSolutions(f64),
}

impl Error {
    /// Numeric failures map to exit code 3 in the CLI, everything else to 2.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::FitFailure(_)
                | Error::NonConvergent(_)
                | Error::PrecisionExhausted { .. }
                | Error::EmptySequence(_)
                | Error::NoSolutions(_)
        )
    }

    /// Short machine-readable tag used in CLI error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "ParseError",
            Error::Arity { .. } => "ArityError",
            Error::InvalidInput(_) => "InvalidInput",
            Error::DegenerateExpr => "DegenerateExpr",
            Error::IrrationalSkeleton => "IrrationalSkeleton",
            Error::FitFailure(_) => "FitFailure",
            Error::NonConvergent(_) => "NonConvergent",
            Error::SkeletonMismatch => "SkeletonMismatch",
            Error::PrecisionExhausted { .. } => "PrecisionExhausted",
            Error::EmptySequence(_) => "EmptySequence",
            Error::NotSignificant(_) => "NotSignificant",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::NoSolutions(_) => "NoSolutions",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
