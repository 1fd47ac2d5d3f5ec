//! Optimal trade-execution scheduling.
//!
//! The library builds execution schedules that react to price slippage
//! through a mean-reversion signal while honoring completion and urgency
//! penalties:
//!
//! - [`market`] — problem description, cost model, state dynamics;
//! - [`lqr`] — unconstrained affine policy via the backward recursion;
//! - [`qp`] — dense convex quadratic programming (active set);
//! - [`mpc`] — certainty-equivalent cost assembly and receding-horizon
//!   scheduling under positivity/cap/completion constraints;
//! - [`continuous`] — continuous-trading limit: Riccati ODEs and closed
//!   formulas;
//! - [`darkpool`] — dark-pool LQR and the two-step lit/dark scheduler;
//! - [`sim`] — market simulator, benchmarks, Monte Carlo batches;
//! - [`calib`] — tuning of the mean-reversion signal from deviation
//!   statistics.

pub mod calib;
pub mod continuous;
pub mod darkpool;
pub mod lqr;
pub mod market;
pub mod mpc;
pub mod qp;
pub mod sim;

pub use market::{ExecState, ExecutionTrace, MarketSpec, Side, TerminalPenalty};
