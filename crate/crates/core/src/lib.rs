//! Exact fiducial confidence intervals for linear combinations of
//! probabilities from independent multinomial experiments.
//!
//! The plug-in statistic `Y = sum_k sum_m x_km w_km / n_k` lives on a finite
//! rational lattice. Its PMF under any `p` is computed exactly by FFT
//! ([`pmf`]), the extreme tail probabilities over `{p : p'w = L}` are found by
//! a constrained stochastic search ([`optimizer`]), and the interval endpoints
//! are the roots in `L` of the resulting percentile equations ([`bounds`]).

pub mod bayescost;
pub mod bounds;
pub mod coverage;
pub mod error;
pub mod exec;
pub mod model;
pub mod optimizer;
pub mod pmf;

pub use bounds::{adjust_alpha, fiducial_interval, AdjustedAlpha, FiducialBounds, SolverConfig};
pub use coverage::{Budget, CoverageReport, IntervalTable, ScenarioId, ScenarioSpec};
pub use error::{Error, Result};
pub use exec::Execution;
pub use model::{build_problem, ExperimentSpec, ObservedCounts, Problem, Rational, SimplexPoint};
pub use optimizer::OptimizerConfig;
pub use pmf::{pmf_bruteforce, pmf_fft, LatticePmf};
