use crate::measure::AtomId;
use thiserror::Error;

/// Library-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("space descriptor is empty or has no mass")]
    EmptySpace,

    #[error("non-positive {what}: {value}")]
    NonPositive { what: &'static str, value: f64 },

    #[error("atom {0} is not a leaf of the current finest partition")]
    NotALeaf(AtomId),

    #[error("cut leaves an empty or full part of atom {0}")]
    DegenerateCut(AtomId),

    #[error("cut does not lie inside atom {0}")]
    CutOutsideAtom(AtomId),

    #[error("quadrature did not converge: achieved {achieved:.3e}, requested {requested:.3e}")]
    Quadrature { achieved: f64, requested: f64 },

    #[error("non-finite value produced in {0}")]
    NonFinite(&'static str),

    #[error("rank deficiency on atom {atom}: detected dimension {got}, expected at least {expected}")]
    RankDeficiency {
        atom: AtomId,
        got: usize,
        expected: usize,
    },

    #[error("orthogonality loss {0:.3e} after reorthogonalization exceeds 1e-8")]
    OrthogonalityLoss(f64),

    #[error("set is not a union of atoms at level {level}")]
    NotMeasurable { level: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("operation requires a {0} backing")]
    BackingMismatch(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;
