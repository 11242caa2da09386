use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A graph was built from inconsistent cardinalities or scopes.
    Graph { factor: Option<usize>, reason: String },
    /// A table, vector or index does not fit the graph it is used with.
    Dimension { what: String, expected: usize, found: usize },
    /// Variable or state index outside its range.
    OutOfRange { what: String, index: usize, bound: usize },
    InvalidHyperParams(String),
    /// A computation produced NaN or infinity.
    NonFinite { what: String },
    /// Belief entries outside `[0, 1]`.
    InvalidBelief { what: String, value: f64 },
    /// Enumeration would visit more configurations than allowed.
    EnumerationLimit { configurations: u128, limit: u64 },
    /// Training broke the monotone-descent guarantee.
    DescentViolation { iteration: usize, stage: &'static str, before: f64, after: f64 },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Graph { factor: Some(a), reason } => write!(f, "factor {a}: {reason}"),
            Error::Graph { factor: None, reason } => write!(f, "invalid graph: {reason}"),
            Error::Dimension { what, expected, found } => {
                write!(f, "dimension mismatch for {what}: expected {expected}, found {found}")
            }
            Error::OutOfRange { what, index, bound } => {
                write!(f, "{what} index {index} out of range (bound {bound})")
            }
            Error::InvalidHyperParams(msg) => write!(f, "invalid hyperparameters: {msg}"),
            Error::NonFinite { what } => write!(f, "non-finite value in {what}"),
            Error::InvalidBelief { what, value } => {
                write!(f, "belief entry {value} in {what} lies outside [0, 1]")
            }
            Error::EnumerationLimit { configurations, limit } => write!(
                f,
                "enumeration of {configurations} configurations exceeds the limit of {limit}"
            ),
            Error::DescentViolation { iteration, stage, before, after } => write!(
                f,
                "objective increased in iteration {iteration}, stage {stage}: {before} -> {after}"
            ),
        }
    }
}

impl core::error::Error for Error {}
