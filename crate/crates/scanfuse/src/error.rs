//! Crate-wide error type.

use std::fmt;

use crate::covariance::ObservabilityReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug)]
pub enum Error {
    /// An operation that needs points received an empty cloud.
    EmptyCloud,
    /// A matrix fed to `vee` is not an se(3) element.
    NotTangent { deviation: f64 },
    /// The point configuration does not determine a rigid transform
    /// (centered cross-covariance rank below 2).
    DegenerateGeometry { rank: usize },
    /// Too few correspondences survived the distance gate.
    InsufficientOverlap { found: usize, required: usize },
    /// The Fisher matrix is too ill-conditioned to invert; the report
    /// carries the weak directions so the caller can decide what to do.
    Unobservable(Box<ObservabilityReport>),
    /// A matrix inversion required by the filter failed.
    Singular(&'static str),
    /// Samples were fed to the filter out of timestamp order.
    TimestampOrder { previous: f64, current: f64 },
    Io(std::io::Error),
    /// Malformed input file (PLY, CSV, depth binary, manifest).
    Parse { what: &'static str, line: usize, message: String },
    /// Bad or unknown configuration entry.
    Config(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::EmptyCloud => write!(f, "point cloud is empty"),
            Error::NotTangent { deviation } => {
                write!(f, "matrix is not in se(3): skew deviation {deviation:.3e}")
            }
            Error::DegenerateGeometry { rank } => {
                write!(f, "degenerate point configuration (cross-covariance rank {rank})")
            }
            Error::InsufficientOverlap { found, required } => {
                write!(f, "insufficient overlap: {found} correspondences, need {required}")
            }
            Error::Unobservable(report) => write!(
                f,
                "registration unobservable: {} weak direction(s), condition number {:.3e}",
                report.weak_directions.len(),
                report.condition_number()
            ),
            Error::Singular(what) => write!(f, "singular matrix in {what}"),
            Error::TimestampOrder { previous, current } => {
                write!(f, "timestamps out of order: {current} after {previous}")
            }
            Error::Io(e) => write!(f, "i/o error: {e}"),
            Error::Parse { what, line, message } => {
                write!(f, "failed to parse {what} (line {line}): {message}")
            }
            Error::Config(msg) => write!(f, "bad configuration: {msg}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}
