//! Monte Carlo machinery for path-dependent forward-backward SDEs.
//!
//! The crate is organised around a small set of building blocks:
//!
//! * [`grid`] / [`path`] — time partitions, cadlag step paths, stopped views
//!   and the concatenation operator.
//! * [`coeff`] — non-anticipative coefficient functionals `(b, sigma, f, g)`
//!   together with a zoo of benchmark problems carrying reference solutions.
//! * [`sampling`] — keyed, splittable Brownian increment streams for
//!   reproducible (nested) Monte Carlo.
//! * [`euler`] — the Euler scheme for the path-dependent forward SDE and
//!   coupled strong-error measurement.
//! * [`condexp`] — conditional-expectation estimators: nested Monte Carlo and
//!   least-squares regression on path features.
//! * [`picard`] — the Picard-type iteration for the backward equation, the
//!   implicit backward reference scheme, and the PPDE value `u(t, gamma)`.
//! * [`bench`] — convergence sweeps, rate fitting and CSV/manifest output.

pub mod bench;
pub mod coeff;
pub mod condexp;
pub mod error;
pub mod euler;
pub mod grid;
pub mod path;
pub mod picard;
pub mod sampling;

pub use coeff::{problem_zoo, CoefficientSet, Problem, ReferenceSolution};
pub use error::Error;
pub use grid::TimeGrid;
pub use path::{concat, d_infinity, DiscretePath, StoppedView};
pub use picard::{
    evaluate_ppde, solve_implicit, solve_picard, EstimatorConfig, EstimatorKind, SchemeConfig,
    SolveResult,
};
pub use sampling::{sample_increments, BrownianIncrements, SampleKey};

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
