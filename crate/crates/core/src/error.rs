use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A user-supplied value failed validation.
    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },

    #[error("{what} = {value} is outside the attainable range [{min}, {max}]")]
    OutOfRange {
        what: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("y = {y} is the smallest attainable value and has no predecessor")]
    NoPredecessor { y: String },

    #[error("y = {y} is not a point of the value lattice")]
    OffLattice { y: String },

    #[error("value lattice too large: {detail}")]
    LatticeTooLarge { detail: String },

    #[error("sample space has {outcomes} joint outcomes, above the enumeration cap of {cap}")]
    EnumerationCap { outcomes: u128, cap: u128 },

    #[error("probability mass sums to {sum}; normalization drift exceeds 1e-9")]
    NormalizationDrift { sum: f64 },

    #[error("{bound} bound root bracket failed after {iterations} iterations")]
    BracketFailure {
        bound: &'static str,
        iterations: usize,
    },

    #[error("interval table has no entry for y index {index} (mass {mass:e})")]
    MissingInterval { index: usize, mass: f64 },

    #[error("average coverage {coverage} at alpha = {alpha} is already below the target {target}")]
    CoverageBelowTarget {
        alpha: f64,
        coverage: f64,
        target: f64,
    },
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for failures of the numerical machinery rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::LatticeTooLarge { .. }
                | Error::EnumerationCap { .. }
                | Error::NormalizationDrift { .. }
                | Error::BracketFailure { .. }
                | Error::CoverageBelowTarget { .. }
        )
    }
}
