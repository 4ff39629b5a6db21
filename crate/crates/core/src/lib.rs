//! Solvers and structure analysis for duty-cycled activity sensing under a
//! cellular data budget.
//!
//! The problem: a device tracks a user whose activity evolves as a Markov
//! chain, pays a per-epoch detection error, syncs data when active and
//! covered by an access network, and recharges intermittently into a finite
//! battery. The long-run detection error is minimized subject to a long-run
//! data-usage budget.
//!
//! Four solution routes are provided and cross-checked:
//!
//! * [`lp`] — the constrained problem as a linear program over occupation
//!   measures, solved by an embedded dense two-phase simplex.
//! * [`lagrange`] — Robbins–Monro search for the multiplier that folds the
//!   data constraint into the stage cost.
//! * [`dp`] — discounted value iteration for the relaxed problem, plus
//!   verifiers for the monotone-value / submodular-Q structure that makes
//!   the optimal policy a battery threshold.
//! * [`mixture`] — the randomized blend of two perturbed threshold policies
//!   that meets the budget, and [`qlearn`] — tabular Q-learning with and
//!   without the structural prior.
//!
//! [`sim`] evaluates any policy exactly (stationary analysis) and by seeded
//! Monte-Carlo simulation.
//!
//! The crate is `no_std`-compatible (requires `alloc`); the default `std`
//! feature only switches float intrinsics and error-trait plumbing.

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod dp;
pub mod lagrange;
pub mod lp;
mod math;
pub mod mixture;
pub mod model;
pub mod qlearn;
pub mod sim;

pub use dp::{
    extract_threshold, policy_evaluation, value_iteration, verify_q_submodular,
    verify_value_monotone, DeterministicPolicy, DpError, QTable, ThresholdTable, ValueTable,
    ViSolution,
};
pub use lagrange::{estimate_lambda, lambda_optimality_check, InnerSolver, LagrangeTrace};
pub use lp::{
    build_cmdp_lp, build_lagrangian_lp, policy_from_phi, solve_cmdp, solve_lagrangian, solve_lp,
    LinearProgram, LpError, StationarySolution,
};
pub use mixture::{build_mixture, mixture_as_stationary, MixturePolicy};
pub use model::{lindley_update, Action, Kernel, ModelError, SensingModel, State, StateSpace};
pub use qlearn::{
    project_threshold, run_conventional, run_structured, LearnMode, LearnerConfig, LearningRun,
};
pub use sim::{
    avg_battery, cup_policy, overflow_probability, simulate, stationary_distribution,
    sync_probability, OccupationMeasure, Policy, SimError, TrajectoryStats,
};
