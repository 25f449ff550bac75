//! Demand-response policy engine for datacenters.
//!
//! The engine models per-workload performance penalties of hourly power
//! adjustments, optimizes load adjustments under seven policies (CR1-CR3,
//! B1-B4), and reports carbon-reduction / performance-loss trade-offs and
//! fairness metrics.
//!
//! Modules, roughly bottom-up:
//! - [`traces`]: power, batch-job and carbon-intensity traces (load, validate,
//!   synthesize).
//! - [`scheduler`]: earliest-due-date batch simulation and training-data
//!   generation via random-walk curtailment sampling.
//! - [`penalty`]: real-time polynomial penalties, batch feature engineering,
//!   Lasso fitting and weight calibration.
//! - [`carbon`]: operational-carbon accounting and scenario projection.
//! - [`solver`]: augmented-Lagrangian constrained minimizer plus verification
//!   oracles.
//! - [`policies`]: the seven demand-response policies over a shared constraint
//!   set.
//! - [`metrics`]: fairness entropy, Pareto sweeps, per-workload breakdowns.
//! - [`config`]: run configuration and the pipeline driven by the `dcdr` CLI.

pub mod carbon;
pub mod config;
pub mod metrics;
pub mod penalty;
pub mod policies;
pub mod scheduler;
pub mod solver;
pub mod traces;
