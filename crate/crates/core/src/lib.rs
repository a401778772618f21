//! Certified bounds for the extremal density and the counting rate of subsets
//! of `{1, ..., n}` that avoid a family of connected patterns in the divisor
//! graph.
//!
//! The constants are limits of local averages over rooted components of
//! divisor graphs; [`series`] truncates the corresponding series, solves each
//! distinct component exactly with [`solver`], and turns the retained mass into
//! a two-sided bound. [`oracle`] recomputes everything by brute force at small
//! scale.

pub mod cli;
pub mod error;
pub mod numtheory;
pub mod oracle;
pub mod patterns;
pub mod series;
pub mod solver;

pub use error::{Error, Result};
pub use numtheory::{canonical_key, rooted_component, CanonicalKey, RootedComponent};
pub use patterns::{builtin_family, AdmissibleFamily, Builtin, Pattern, PatternEdge};
pub use series::{evaluate, BlockCache, SeriesEstimate, TruncationParams};
pub use solver::{local_increment, BlockRecord, BlockValues, Mode, Solver, SolverConfig};
