//! The constrained problem as a linear program over occupation measures, its
//! multiplier-relaxed variant, and the embedded dense simplex that solves
//! them.
//!
//! Decision variables are `phi(state, action)` in the fixed column order
//! `state_index * 2 + action`; the program minimizes expected detection
//! error subject to the data budget (constrained variant only), one balance
//! equality per state, normalization, and nonnegativity.

mod simplex;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use thiserror::Error;

use crate::model::{Action, Kernel, ModelError, SensingModel, NUM_ACTIONS};
use crate::sim::{OccupationMeasure, Policy};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LpError {
    #[error("no occupation measure satisfies the constraints")]
    Infeasible,
    #[error("objective is unbounded below; the program is malformed")]
    Unbounded,
    #[error("pivot budget of {limit} exhausted; anti-cycling safeguard tripped")]
    MaxPivots { limit: usize },
    #[error("multiplier must be nonnegative, got {0}")]
    NegativeLambda(f64),
    #[error("malformed program: {0}")]
    Malformed(&'static str),
    #[error("solution failed validation: {detail}")]
    InvalidMeasure { detail: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A dense linear program: minimize `objective . x` subject to
/// `ineqs: a . x <= b`, `eqs: a . x = b`, and `x >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub num_vars: usize,
    pub objective: Vec<f64>,
    pub ineqs: Vec<(Vec<f64>, f64)>,
    pub eqs: Vec<(Vec<f64>, f64)>,
}

impl LinearProgram {
    pub fn validate(&self) -> Result<(), LpError> {
        if self.objective.len() != self.num_vars {
            return Err(LpError::Malformed("objective length mismatch"));
        }
        let rows = self.ineqs.iter().chain(self.eqs.iter());
        for (row, rhs) in rows {
            if row.len() != self.num_vars {
                return Err(LpError::Malformed("constraint row length mismatch"));
            }
            if !rhs.is_finite() || row.iter().any(|c| !c.is_finite()) {
                return Err(LpError::Malformed("non-finite coefficient"));
            }
        }
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(LpError::Malformed("non-finite objective coefficient"));
        }
        Ok(())
    }
}

/// Primal solution of a [`LinearProgram`].
#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
}

/// Solve a linear program with the embedded two-phase dense simplex.
///
/// Pricing is most-negative-reduced-cost; the leaving row comes from the
/// lexicographic ratio test, so cycling cannot occur. At optimality all
/// reduced costs exceed `-1e-9`, and the returned point satisfies the
/// original constraints to within 1e-9.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution, LpError> {
    lp.validate()?;
    let solution = simplex::solve(lp)?;
    let residual = feasibility_residual(lp, &solution.x);
    if residual > 1e-9 {
        return Err(LpError::InvalidMeasure {
            detail: format!("solution violates constraints by {residual:.3e}"),
        });
    }
    Ok(solution)
}

/// Largest constraint violation of a candidate point.
pub fn feasibility_residual(lp: &LinearProgram, x: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for (row, rhs) in &lp.ineqs {
        let lhs: f64 = row.iter().zip(x.iter()).map(|(a, v)| a * v).sum();
        worst = worst.max(lhs - rhs);
    }
    for (row, rhs) in &lp.eqs {
        let lhs: f64 = row.iter().zip(x.iter()).map(|(a, v)| a * v).sum();
        worst = worst.max((lhs - rhs).abs());
    }
    for v in x {
        worst = worst.max(-v);
    }
    worst
}

/// Shared equality block: one balance row per state plus normalization.
fn measure_equalities(kernel: &Kernel) -> Vec<(Vec<f64>, f64)> {
    let n = kernel.num_states();
    let cols = n * NUM_ACTIONS;
    let mut eqs = Vec::with_capacity(n + 1);
    for target in 0..n {
        let mut row = vec![0.0; cols];
        row[target * NUM_ACTIONS] += 1.0;
        row[target * NUM_ACTIONS + 1] += 1.0;
        for s in 0..n {
            for action in Action::ALL {
                let p = kernel.prob(s, action, target);
                if p != 0.0 {
                    row[s * NUM_ACTIONS + action.index()] -= p;
                }
            }
        }
        eqs.push((row, 0.0));
    }
    eqs.push((vec![1.0; cols], 1.0));
    eqs
}

fn cmdp_lp_with(model: &SensingModel, kernel: &Kernel) -> LinearProgram {
    let n = model.num_states();
    let cols = n * NUM_ACTIONS;
    let mut objective = vec![0.0; cols];
    let mut usage = vec![0.0; cols];
    for s in 0..n {
        for action in Action::ALL {
            objective[s * NUM_ACTIONS + action.index()] = model.detect_error_idx(s, action);
            usage[s * NUM_ACTIONS + action.index()] = model.data_usage_idx(s, action);
        }
    }
    LinearProgram {
        num_vars: cols,
        objective,
        ineqs: vec![(usage, model.budget())],
        eqs: measure_equalities(kernel),
    }
}

/// The constrained program: minimize expected detection error subject to the
/// data budget, balance, and normalization.
pub fn build_cmdp_lp(model: &SensingModel) -> Result<LinearProgram, LpError> {
    let kernel = model.build_kernel()?;
    Ok(cmdp_lp_with(model, &kernel))
}

fn lagrangian_lp_with(model: &SensingModel, kernel: &Kernel, lambda: f64) -> LinearProgram {
    let n = model.num_states();
    let cols = n * NUM_ACTIONS;
    let mut objective = vec![0.0; cols];
    for s in 0..n {
        for action in Action::ALL {
            objective[s * NUM_ACTIONS + action.index()] =
                model.lagrangian_cost_idx(s, action, lambda);
        }
    }
    LinearProgram {
        num_vars: cols,
        objective,
        ineqs: Vec::new(),
        eqs: measure_equalities(kernel),
    }
}

/// The relaxed program: the budget row is dropped and the data usage is
/// charged into the objective at price `lambda`.
pub fn build_lagrangian_lp(model: &SensingModel, lambda: f64) -> Result<LinearProgram, LpError> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(LpError::NegativeLambda(lambda));
    }
    let kernel = model.build_kernel()?;
    Ok(lagrangian_lp_with(model, &kernel, lambda))
}

/// An occupation measure together with its two long-run costs.
#[derive(Debug, Clone, PartialEq)]
pub struct StationarySolution {
    pub measure: OccupationMeasure,
    /// Expected detection error under the measure.
    pub objective_value: f64,
    /// Expected data usage under the measure.
    pub data_usage: f64,
}

impl StationarySolution {
    /// Wrap a measure, recomputing both costs.
    pub fn from_measure(model: &SensingModel, measure: OccupationMeasure) -> StationarySolution {
        let objective_value = measure.detection_error(model);
        let data_usage = measure.data_usage(model);
        StationarySolution {
            measure,
            objective_value,
            data_usage,
        }
    }

    /// Validate an LP point as an occupation measure: clip `-1e-12`-scale
    /// negatives to zero, require unit mass within 1e-8 and per-state balance
    /// residuals within 1e-8.
    fn from_lp_point(
        model: &SensingModel,
        kernel: &Kernel,
        x: &[f64],
    ) -> Result<StationarySolution, LpError> {
        let n = model.num_states();
        let mut phi = Vec::with_capacity(n * NUM_ACTIONS);
        for (idx, value) in x.iter().enumerate() {
            if *value < -1e-12 {
                return Err(LpError::InvalidMeasure {
                    detail: format!("phi[{idx}] = {value}"),
                });
            }
            phi.push(value.max(0.0));
        }
        let total: f64 = phi.iter().sum();
        if (total - 1.0).abs() > 1e-8 {
            return Err(LpError::InvalidMeasure {
                detail: format!("total mass {total}"),
            });
        }
        for target in 0..n {
            let outgoing = phi[target * NUM_ACTIONS] + phi[target * NUM_ACTIONS + 1];
            let mut incoming = 0.0;
            for s in 0..n {
                for action in Action::ALL {
                    let p = kernel.prob(s, action, target);
                    if p != 0.0 {
                        incoming += p * phi[s * NUM_ACTIONS + action.index()];
                    }
                }
            }
            if (outgoing - incoming).abs() > 1e-8 {
                return Err(LpError::InvalidMeasure {
                    detail: format!(
                        "balance residual {} at state {target}",
                        outgoing - incoming
                    ),
                });
            }
        }
        Ok(StationarySolution::from_measure(
            model,
            OccupationMeasure::from_raw(phi),
        ))
    }
}

/// Build and solve the constrained program.
pub fn solve_cmdp(model: &SensingModel) -> Result<StationarySolution, LpError> {
    let kernel = model.build_kernel()?;
    let lp = cmdp_lp_with(model, &kernel);
    let solution = solve_lp(&lp)?;
    StationarySolution::from_lp_point(model, &kernel, &solution.x)
}

/// Build and solve the relaxed program at a fixed multiplier.
pub fn solve_lagrangian(model: &SensingModel, lambda: f64) -> Result<StationarySolution, LpError> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(LpError::NegativeLambda(lambda));
    }
    let kernel = model.build_kernel()?;
    let lp = lagrangian_lp_with(model, &kernel, lambda);
    let solution = solve_lp(&lp)?;
    StationarySolution::from_lp_point(model, &kernel, &solution.x)
}

/// Normalize an occupation measure into a stationary policy. States carrying
/// less than 1e-12 mass are not identified by the measure and default to
/// sleep.
pub fn policy_from_phi(phi: &OccupationMeasure) -> Policy {
    let probs = (0..phi.num_states())
        .map(|s| {
            let mass = phi.state_mass(s);
            if mass > 1e-12 {
                (phi.get(s, Action::Active) / mass).clamp(0.0, 1.0)
            } else {
                0.0
            }
        })
        .collect();
    Policy::from_active_probs(probs).expect("normalized probabilities are in range")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{SensingModel, StateSpace};
    use crate::sim::{stationary_distribution, Policy};
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn lp_min_x_geq_one() -> LinearProgram {
        LinearProgram {
            num_vars: 1,
            objective: vec![1.0],
            ineqs: vec![(vec![-1.0], -1.0)],
            eqs: vec![],
        }
    }

    #[test]
    fn scalar_bound_program() {
        let sol = solve_lp(&lp_min_x_geq_one()).unwrap();
        assert!((sol.x[0] - 1.0).abs() < 1e-9);
        assert!((sol.objective - 1.0).abs() < 1e-9);
    }

    #[test]
    fn unbounded_program_is_reported() {
        let lp = LinearProgram {
            num_vars: 1,
            objective: vec![-1.0],
            ineqs: vec![],
            eqs: vec![],
        };
        assert_eq!(solve_lp(&lp).unwrap_err(), LpError::Unbounded);
    }

    #[test]
    fn infeasible_program_is_reported() {
        let lp = LinearProgram {
            num_vars: 1,
            objective: vec![0.0],
            ineqs: vec![(vec![1.0], -1.0)],
            eqs: vec![],
        };
        assert_eq!(solve_lp(&lp).unwrap_err(), LpError::Infeasible);
    }

    #[test]
    fn small_degenerate_program() {
        // two variables forced onto a single vertex by equalities
        let lp = LinearProgram {
            num_vars: 2,
            objective: vec![1.0, 2.0],
            ineqs: vec![(vec![1.0, 0.0], 0.5)],
            eqs: vec![(vec![1.0, 1.0], 1.0)],
        };
        let sol = solve_lp(&lp).unwrap();
        assert!((sol.x[0] - 0.5).abs() < 1e-9);
        assert!((sol.x[1] - 0.5).abs() < 1e-9);
        assert!((sol.objective - 1.5).abs() < 1e-9);
    }

    /// Random full-table model where actions genuinely differ at every
    /// battery level, including empty.
    fn random_model(u: usize, cap: usize, seed: u64) -> SensingModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let space = StateSpace::new(u, cap);
        let n = space.num_states();
        let mut transition = vec![0.0; u * u];
        for row in 0..u {
            let mut sum = 0.0;
            for col in 0..u {
                let w: f64 = rng.random::<f64>() + 0.1;
                transition[row * u + col] = w;
                sum += w;
            }
            for col in 0..u {
                transition[row * u + col] /= sum;
            }
        }
        let mut detect = vec![1.0; n * 2];
        let mut coverage = vec![0.0; n * 2];
        let mut data = vec![0.0; n * 2];
        for s in 0..n {
            detect[s * 2 + 1] = rng.random::<f64>();
            coverage[s * 2 + 1] = 0.05 + 0.9 * rng.random::<f64>();
            if space.state(s).battery > 0 {
                data[s * 2 + 1] = rng.random::<f64>();
            }
        }
        SensingModel::new(
            space,
            transition,
            0.1 + 0.8 * rng.random::<f64>(),
            detect,
            coverage,
            data,
            10.0, // slack budget
            0.9,
        )
        .unwrap()
    }

    /// Average-cost brute force: enumerate deterministic policies, evaluate
    /// each by power iteration, return the best long-run detection error.
    fn brute_force_average_cost(model: &SensingModel) -> f64 {
        let n = model.num_states();
        assert!(n <= 10);
        let mut best = f64::INFINITY;
        for mask in 0u32..(1 << n) {
            let probs: Vec<f64> = (0..n)
                .map(|s| if mask & (1 << s) != 0 { 1.0 } else { 0.0 })
                .collect();
            let policy = Policy::from_active_probs(probs).unwrap();
            let phi = stationary_distribution(model, &policy).unwrap();
            best = best.min(phi.detection_error(model));
        }
        best
    }

    #[test]
    fn cmdp_matches_brute_force_when_slack() {
        for seed in [5, 6, 7] {
            let model = random_model(2, 1, seed);
            let lp_solution = solve_cmdp(&model).unwrap();
            let oracle = brute_force_average_cost(&model);
            assert!(
                (lp_solution.objective_value - oracle).abs() < 1e-7,
                "seed {seed}: lp {} oracle {oracle}",
                lp_solution.objective_value
            );
        }
    }

    #[test]
    fn default_model_program_dimensions() {
        let model = SensingModel::default_instance();
        let lp = build_cmdp_lp(&model).unwrap();
        assert_eq!(lp.num_vars, 504);
        assert_eq!(lp.ineqs.len(), 1);
        assert_eq!(lp.eqs.len(), 253);
    }

    #[test]
    fn two_state_program_is_degenerate_but_solvable() {
        let model = random_model(1, 0, 9);
        let lp = build_cmdp_lp(&model).unwrap();
        assert_eq!(lp.num_vars, 4);
        let solution = solve_cmdp(&model).unwrap();
        assert!((solution.measure.total() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn lagrangian_at_zero_matches_cmdp_objective_vector() {
        let model = random_model(2, 1, 10);
        let cmdp = build_cmdp_lp(&model).unwrap();
        let relaxed = build_lagrangian_lp(&model, 0.0).unwrap();
        assert_eq!(cmdp.objective, relaxed.objective);
        assert!(relaxed.ineqs.is_empty());
    }

    #[test]
    fn negative_lambda_is_rejected() {
        let model = random_model(2, 1, 11);
        assert!(matches!(
            build_lagrangian_lp(&model, -0.1),
            Err(LpError::NegativeLambda(_))
        ));
    }

    #[test]
    fn huge_lambda_stops_all_transmission() {
        let model = random_model(2, 2, 12);
        let solution = solve_lagrangian(&model, 1e6).unwrap();
        assert!(solution.data_usage.abs() < 1e-9);
    }

    #[test]
    fn slack_budget_equals_unpriced_relaxation() {
        let model = random_model(2, 1, 13); // budget 10 >= any usage
        let constrained = solve_cmdp(&model).unwrap();
        let relaxed = solve_lagrangian(&model, 0.0).unwrap();
        assert!((constrained.objective_value - relaxed.objective_value).abs() < 1e-9);
    }

    #[test]
    fn tighter_budgets_never_help() {
        let model = SensingModel::default_instance();
        let mut previous = f64::INFINITY;
        for budget in [0.05, 0.15, 0.25] {
            let m = model.clone().with_budget(budget).unwrap();
            let solution = solve_cmdp(&m).unwrap();
            assert!(solution.objective_value <= previous + 1e-9);
            previous = solution.objective_value;
        }
    }

    #[test]
    fn policy_from_phi_normalizes() {
        let mut phi = vec![0.0; 4];
        phi[0] = 0.3; // state 0 sleep
        phi[1] = 0.1; // state 0 active
        phi[3] = 0.6; // state 1 active only
        let measure = OccupationMeasure::from_raw(phi);
        let policy = policy_from_phi(&measure);
        assert!((policy.prob_active(0) - 0.25).abs() < 1e-12);
        assert!((policy.prob_active(1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unvisited_states_default_to_sleep() {
        let measure = OccupationMeasure::from_raw(vec![0.5, 0.5, 0.0, 0.0]);
        let policy = policy_from_phi(&measure);
        assert_eq!(policy.prob_active(1), 0.0);
    }
}
