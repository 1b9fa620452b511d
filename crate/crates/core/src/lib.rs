//! World-line discretization of second-order initial value problems.
//!
//! A point particle in a potential `V(x)` is described by a geodesic in a
//! two-dimensional space-time whose temporal metric component is
//! `g00 = c^2 + 2 V(x) / m`. Both `t` and `x` become unknowns along a
//! world-line parameter, the action is discretized with summation-by-parts
//! operators on a doubled (forward/backward) contour, and the classical
//! trajectory is the critical point of that action. The discrete Noether
//! charge of time translation, `(D t) * g00(x)`, is then conserved exactly in
//! the interior of the simulated interval.
//!
//! ```
//! use worldline::{solve, ProblemConfig, SolveOptions, diagnostics};
//!
//! let cfg = ProblemConfig::linear_example();
//! let sol = solve(&cfg, &SolveOptions::default()).unwrap();
//! let (t, x) = (&sol.state.t1, &sol.state.x1);
//! let de = diagnostics::charge_deviation(t, x, &cfg).unwrap();
//! assert!(de[1..de.len() - 1].iter().all(|v| v.abs() < 1e-9));
//! ```

pub mod action;
pub mod cli;
pub mod config;
pub mod diagnostics;
mod error;
pub mod linalg;
pub mod potential;
pub mod reference;
pub mod sbp;
pub mod solver;

pub use action::{ActionModel, StateVector};
pub use config::ProblemConfig;
pub use diagnostics::DiagnosticsReport;
pub use error::{Result, WorldlineError};
pub use potential::Potential;
pub use reference::{ConvergenceTable, ReferenceTrajectory};
pub use sbp::{Order, RegularizedOperator, SbpOperator};
pub use solver::{continuation_solve, initial_guess, solve, Solution, SolveOptions};
