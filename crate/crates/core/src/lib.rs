//! Exact dataset-shift arithmetic on finite joint distributions.
//!
//! A source distribution `P` and a target distribution `Q` are tables of
//! probabilities over (feature cell, class) pairs. The crate computes
//! densities of `Q` with respect to `P`, decomposes them into class-wise
//! factors, corrects posterior class probabilities, solves the equation
//! system characterising factorizable joint shift, classifies shift types
//! and models sample selection bias.
//!
//! Everything here is `no_std` with `alloc`; file formats and the command
//! line live in the `shiftkit` crate.

#![no_std]
#![warn(missing_debug_implementations)]

extern crate alloc;

mod error;
mod table;

pub mod dist;
pub mod fjs;
pub mod normal_form;
pub mod selection;
pub mod taxonomy;
pub mod tolerance;

pub use error::Error;
pub use table::Table;

pub use dist::{
    ClassConditionalDensities, ClassPriors, FeatureDensity, FiniteJointDistribution, JointDensity,
    Partition, PosteriorTable, ValidationIssue, ValidationReport,
};
pub use fjs::{FjsCharacterization, SolverOptions};
pub use selection::{SelectionAnalysis, SelectionModel};
pub use taxonomy::{RepresentationMap, ShiftReport};

pub type Result<T> = core::result::Result<T, Error>;
