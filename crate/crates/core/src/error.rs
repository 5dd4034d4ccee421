use alloc::vec::Vec;
use core::fmt;

use crate::dist::ValidationReport;

/// Failure of a shift computation.
///
/// [`Error::name`] gives the canonical identifier used in command-line
/// reports.
#[derive(Clone, Debug, PartialEq)]
pub enum Error {
    /// A joint table failed validation.
    InvalidDistribution(ValidationReport),
    /// Priors not strictly inside `(0, 1)` or not summing to one.
    InvalidPriors,
    /// A density vector or table is negative, not `P`-normalised or
    /// positive on a `P`-null cell.
    InvalidDensity { expectation: f64 },
    /// Tables, labels or vectors of incompatible shape.
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    /// Feature or class labels of two distributions differ.
    LabelMismatch,
    /// `(cell, class)` entries where the target is positive but the
    /// source is not.
    AbsoluteContinuityViolation { entries: Vec<(usize, usize)> },
    /// Target posterior positive where the source posterior vanishes.
    ImplicationViolation { cell: usize, class: usize },
    /// The joint density vanishes on the source support, so the source is
    /// not absolutely continuous with respect to the target.
    NotEquivalent { entries: Vec<(usize, usize)> },
    /// No cell supports both classes of a density ratio.
    Undetermined { class: usize },
    /// `(h, q, rho)` do not solve the equation system.
    InconsistentInputs { residual: f64 },
    NoConvergence { iterations: usize, residual: f64 },
    NotBinary { classes: usize },
    /// A posterior is 0 or 1 on a cell of positive mass.
    BoundaryPosterior { cell: usize },
    PreconditionFailed(&'static str),
    NotGroupInvariant { group: usize, class: usize },
    NotSufficient { group: usize, class: usize },
    /// Selection probabilities outside `(0, 1]`.
    InvalidSelection { cell: usize, class: usize },
    MissingInput,
    AmbiguousInput,
    AllRejected { draws: u64 },
    NotFJS,
    /// Class-wise selection probabilities exceed one.
    Inadmissible { cell: usize, class: usize, value: f64 },
}

impl Error {
    pub fn name(&self) -> &'static str {
        match self {
            Error::InvalidDistribution(_) => "InvalidDistribution",
            Error::InvalidPriors => "InvalidPriors",
            Error::InvalidDensity { .. } => "InvalidDensity",
            Error::ShapeMismatch { .. } => "ShapeMismatch",
            Error::LabelMismatch => "LabelMismatch",
            Error::AbsoluteContinuityViolation { .. } => "AbsoluteContinuityViolation",
            Error::ImplicationViolation { .. } => "ImplicationViolation",
            Error::NotEquivalent { .. } => "NotEquivalent",
            Error::Undetermined { .. } => "Undetermined",
            Error::InconsistentInputs { .. } => "InconsistentInputs",
            Error::NoConvergence { .. } => "NoConvergence",
            Error::NotBinary { .. } => "NotBinary",
            Error::BoundaryPosterior { .. } => "BoundaryPosterior",
            Error::PreconditionFailed(_) => "PreconditionFailed",
            Error::NotGroupInvariant { .. } => "NotGroupInvariant",
            Error::NotSufficient { .. } => "NotSufficient",
            Error::InvalidSelection { .. } => "InvalidSelection",
            Error::MissingInput => "MissingInput",
            Error::AmbiguousInput => "AmbiguousInput",
            Error::AllRejected { .. } => "AllRejected",
            Error::NotFJS => "NotFJS",
            Error::Inadmissible { .. } => "Inadmissible",
        }
    }

    /// Errors caused by malformed or mismatched inputs rather than by the
    /// mathematics of the pair.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::ShapeMismatch { .. } | Error::LabelMismatch)
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidDistribution(report) => {
                write!(f, "invalid distribution: ")?;
                for (k, issue) in report.issues().iter().enumerate() {
                    if k > 0 {
                        write!(f, "; ")?;
                    }
                    write!(f, "{issue}")?;
                }
                Ok(())
            }
            Error::InvalidPriors => write!(f, "priors must lie in (0, 1) and sum to one"),
            Error::InvalidDensity { expectation } => {
                write!(f, "not a density with respect to the source (E_P = {expectation})")
            }
            Error::ShapeMismatch { expected, found } => write!(
                f,
                "shape mismatch: expected {}x{}, found {}x{}",
                expected.0, expected.1, found.0, found.1
            ),
            Error::LabelMismatch => write!(f, "feature or class labels differ"),
            Error::AbsoluteContinuityViolation { entries } => write!(
                f,
                "target has mass on {} source-null entries, first {:?}",
                entries.len(),
                entries.first()
            ),
            Error::ImplicationViolation { cell, class } => write!(
                f,
                "target posterior of class {class} positive at cell {cell} where source posterior is zero"
            ),
            Error::NotEquivalent { entries } => write!(
                f,
                "joint density vanishes on {} source-support entries",
                entries.len()
            ),
            Error::Undetermined { class } => {
                write!(f, "no common support to compare class {class} with the last class")
            }
            Error::InconsistentInputs { residual } => {
                write!(f, "equation system residual {residual} exceeds tolerance")
            }
            Error::NoConvergence {
                iterations,
                residual,
            } => write!(
                f,
                "no convergence after {iterations} iterations (best residual {residual})"
            ),
            Error::NotBinary { classes } => write!(f, "requires two classes, got {classes}"),
            Error::BoundaryPosterior { cell } => {
                write!(f, "posterior is 0 or 1 at cell {cell}")
            }
            Error::PreconditionFailed(what) => write!(f, "precondition failed: {what}"),
            Error::NotGroupInvariant { group, class } => write!(
                f,
                "group {group} has different class-{class} conditional mass under source and target"
            ),
            Error::NotSufficient { group, class } => write!(
                f,
                "posterior of class {class} is not constant on group {group}"
            ),
            Error::InvalidSelection { cell, class } => write!(
                f,
                "selection probability at ({cell}, {class}) outside (0, 1]"
            ),
            Error::MissingInput => write!(f, "a required input is missing"),
            Error::AmbiguousInput => write!(f, "exactly one of the alternative inputs is allowed"),
            Error::AllRejected { draws } => write!(f, "all {draws} draws were rejected"),
            Error::NotFJS => write!(f, "pair is not related by factorizable joint shift"),
            Error::Inadmissible { cell, class, value } => write!(
                f,
                "class-wise selection probability {value} > 1 at ({cell}, {class})"
            ),
        }
    }
}
