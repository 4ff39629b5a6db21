//! Discounted dynamic programming for the relaxed (multiplier-weighted)
//! problem, plus the structure verifiers: value monotonicity in the battery
//! level, submodularity of the state-action costs, and threshold extraction.

use alloc::vec;
use alloc::vec::Vec;
use thiserror::Error;

use crate::model::{Action, ModelError, SensingModel, StateSpace, NUM_ACTIONS};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum DpError {
    #[error("value iteration did not reach tolerance within {sweeps} sweeps (residual {residual:.3e})")]
    NotConverged { sweeps: usize, residual: f64 },
    #[error("policy evaluation system is singular; cannot happen for discount < 1")]
    SingularSystem,
    #[error("policy is not a battery threshold: slice ({activity},{charging}) sleeps at battery {battery} after activating below it")]
    NotThreshold {
        activity: usize,
        charging: usize,
        battery: usize,
    },
    #[error("invalid argument: {0}")]
    BadArgument(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Per-state value function.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    pub values: Vec<f64>,
}

impl ValueTable {
    #[inline]
    pub fn get(&self, index: usize) -> f64 {
        self.values[index]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Per-(state, action) cost-to-go table, indexed `state * 2 + action`.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub values: Vec<f64>,
}

impl QTable {
    pub fn zeros(num_states: usize) -> QTable {
        QTable {
            values: vec![0.0; num_states * NUM_ACTIONS],
        }
    }

    #[inline]
    pub fn get(&self, index: usize, action: Action) -> f64 {
        self.values[index * NUM_ACTIONS + action.index()]
    }

    #[inline]
    pub fn set(&mut self, index: usize, action: Action, value: f64) {
        self.values[index * NUM_ACTIONS + action.index()] = value;
    }

    pub fn num_states(&self) -> usize {
        self.values.len() / NUM_ACTIONS
    }

    /// Action gap `Q(active) - Q(sleep)`.
    #[inline]
    pub fn gap(&self, index: usize) -> f64 {
        self.get(index, Action::Active) - self.get(index, Action::Sleep)
    }

    /// Cost-minimizing action; ties go to sleep.
    #[inline]
    pub fn greedy(&self, index: usize) -> Action {
        if self.get(index, Action::Active) < self.get(index, Action::Sleep) {
            Action::Active
        } else {
            Action::Sleep
        }
    }

    #[inline]
    pub fn min_value(&self, index: usize) -> f64 {
        let sleep = self.get(index, Action::Sleep);
        let active = self.get(index, Action::Active);
        sleep.min(active)
    }
}

/// One action per state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeterministicPolicy {
    pub actions: Vec<Action>,
}

impl DeterministicPolicy {
    pub fn uniform(num_states: usize, action: Action) -> DeterministicPolicy {
        DeterministicPolicy {
            actions: vec![action; num_states],
        }
    }

    /// Greedy policy of a Q-table, ties to sleep.
    pub fn greedy_from(q: &QTable) -> DeterministicPolicy {
        DeterministicPolicy {
            actions: (0..q.num_states()).map(|s| q.greedy(s)).collect(),
        }
    }

    #[inline]
    pub fn action(&self, index: usize) -> Action {
        self.actions[index]
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Converged output of [`value_iteration`].
#[derive(Debug, Clone)]
pub struct ViSolution {
    pub values: ValueTable,
    pub q: QTable,
    pub policy: DeterministicPolicy,
    /// Sweeps performed until the stopping rule fired.
    pub sweeps: usize,
    /// Successive sup-norm differences, one per sweep.
    pub residuals: Vec<f64>,
}

/// Solve the discounted Bellman equation for stage cost `c + lambda * d` by
/// synchronous value iteration.
///
/// Stops when the sup-norm of successive value tables drops to `tol`. The
/// returned Q is one backup of the converged table and the returned values
/// are its per-state minima, so `v = min_a Q(., a)` holds exactly; the policy
/// is the per-state argmin with ties resolved to sleep.
pub fn value_iteration(
    model: &SensingModel,
    lambda: f64,
    beta: f64,
    tol: f64,
    max_sweeps: usize,
) -> Result<ViSolution, DpError> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(DpError::BadArgument("lambda must be >= 0"));
    }
    if !(0.0..1.0).contains(&beta) {
        return Err(DpError::BadArgument("beta must be in [0, 1)"));
    }
    if !(tol > 0.0) {
        return Err(DpError::BadArgument("tol must be > 0"));
    }
    let kernel = model.build_kernel()?;
    let n = model.num_states();
    let mut v = vec![0.0; n];
    let mut v_next = vec![0.0; n];
    let mut residuals = Vec::new();
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < max_sweeps {
        let mut residual: f64 = 0.0;
        for s in 0..n {
            let mut best = f64::INFINITY;
            for action in Action::ALL {
                let expect: f64 = kernel
                    .row(s, action)
                    .iter()
                    .zip(v.iter())
                    .map(|(p, value)| p * value)
                    .sum();
                let q = model.lagrangian_cost_idx(s, action, lambda) + beta * expect;
                if q < best {
                    best = q;
                }
            }
            v_next[s] = best;
            residual = residual.max((best - v[s]).abs());
        }
        core::mem::swap(&mut v, &mut v_next);
        residuals.push(residual);
        sweeps += 1;
        if residual <= tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(DpError::NotConverged {
            sweeps,
            residual: residuals.last().copied().unwrap_or(f64::INFINITY),
        });
    }

    let mut q = QTable::zeros(n);
    for s in 0..n {
        for action in Action::ALL {
            let expect: f64 = kernel
                .row(s, action)
                .iter()
                .zip(v.iter())
                .map(|(p, value)| p * value)
                .sum();
            q.set(
                s,
                action,
                model.lagrangian_cost_idx(s, action, lambda) + beta * expect,
            );
        }
    }
    let values = ValueTable {
        values: (0..n).map(|s| q.min_value(s)).collect(),
    };
    let policy = DeterministicPolicy::greedy_from(&q);
    Ok(ViSolution {
        values,
        q,
        policy,
        sweeps,
        residuals,
    })
}

/// Exact discounted cost of a fixed deterministic policy: solves the linear
/// fixed point `v = c_pi + beta * P_pi v` by Gaussian elimination.
pub fn policy_evaluation(
    model: &SensingModel,
    policy: &DeterministicPolicy,
    lambda: f64,
    beta: f64,
) -> Result<ValueTable, DpError> {
    let n = model.num_states();
    if policy.len() != n {
        return Err(DpError::BadArgument("policy length mismatch"));
    }
    if !(0.0..1.0).contains(&beta) {
        return Err(DpError::BadArgument("beta must be in [0, 1)"));
    }
    let kernel = model.build_kernel()?;
    // A = I - beta * P_pi, rhs = c_pi
    let mut a = vec![0.0; n * n];
    let mut rhs = vec![0.0; n];
    for s in 0..n {
        let action = policy.action(s);
        let row = kernel.row(s, action);
        for (t, p) in row.iter().enumerate() {
            a[s * n + t] = -beta * p;
        }
        a[s * n + s] += 1.0;
        rhs[s] = model.lagrangian_cost_idx(s, action, lambda);
    }
    let v = solve_dense(&mut a, &mut rhs, n).ok_or(DpError::SingularSystem)?;

    // residual of the fixed point, recomputed against the kernel
    let mut worst: f64 = 0.0;
    for s in 0..n {
        let action = policy.action(s);
        let expect: f64 = kernel
            .row(s, action)
            .iter()
            .zip(v.iter())
            .map(|(p, value)| p * value)
            .sum();
        let res = (model.lagrangian_cost_idx(s, action, lambda) + beta * expect - v[s]).abs();
        worst = worst.max(res);
    }
    if worst > 1e-10 * (1.0 + 1.0 / (1.0 - beta)) {
        return Err(DpError::SingularSystem);
    }
    Ok(ValueTable { values: v })
}

/// In-place Gaussian elimination with partial pivoting; returns the solution
/// or `None` when a pivot vanishes.
pub(crate) fn solve_dense(a: &mut [f64], b: &mut [f64], n: usize) -> Option<Vec<f64>> {
    for col in 0..n {
        let mut pivot_row = col;
        let mut pivot_abs = a[col * n + col].abs();
        for row in col + 1..n {
            let mag = a[row * n + col].abs();
            if mag > pivot_abs {
                pivot_abs = mag;
                pivot_row = row;
            }
        }
        if pivot_abs < 1e-300 {
            return None;
        }
        if pivot_row != col {
            for k in 0..n {
                a.swap(col * n + k, pivot_row * n + k);
            }
            b.swap(col, pivot_row);
        }
        let pivot = a[col * n + col];
        for row in col + 1..n {
            let factor = a[row * n + col] / pivot;
            if factor == 0.0 {
                continue;
            }
            a[row * n + col] = 0.0;
            for k in col + 1..n {
                a[row * n + k] -= factor * a[col * n + k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let mut sum = b[col];
        for k in col + 1..n {
            sum -= a[col * n + k] * x[k];
        }
        x[col] = sum / a[col * n + col];
    }
    Some(x)
}

/// Direction of a value slice along the battery axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Monotonicity {
    Constant,
    NonDecreasing,
    NonIncreasing,
    NonMonotone,
}

/// Monotonicity verdict for one `(activity, charging)` slice.
#[derive(Debug, Clone, Copy)]
pub struct SliceMonotonicity {
    pub activity: usize,
    pub charging: usize,
    pub direction: Monotonicity,
    /// First battery level violating each direction, when any.
    pub first_rise: Option<usize>,
    pub first_fall: Option<usize>,
}

/// Report of [`verify_value_monotone`].
#[derive(Debug, Clone)]
pub struct MonotoneReport {
    pub slices: Vec<SliceMonotonicity>,
    pub tolerance: f64,
}

impl MonotoneReport {
    /// True when every slice is monotone and all non-constant slices share
    /// one direction.
    pub fn pass(&self) -> bool {
        self.direction().is_some()
    }

    /// The common direction, if the report passes.
    pub fn direction(&self) -> Option<Monotonicity> {
        let mut common = Monotonicity::Constant;
        for slice in &self.slices {
            match (slice.direction, common) {
                (Monotonicity::NonMonotone, _) => return None,
                (Monotonicity::Constant, _) => {}
                (d, Monotonicity::Constant) => common = d,
                (d, c) if d == c => {}
                _ => return None,
            }
        }
        Some(common)
    }

    pub fn violations(&self) -> impl Iterator<Item = &SliceMonotonicity> {
        self.slices
            .iter()
            .filter(|s| s.direction == Monotonicity::NonMonotone)
    }
}

/// Check, per `(activity, charging)` slice, whether the value function is
/// monotone in the battery level. Report-only: the direction is recorded,
/// not asserted.
pub fn verify_value_monotone(value: &ValueTable, space: &StateSpace) -> MonotoneReport {
    let tolerance = 1e-9;
    let mut slices = Vec::new();
    for (activity, charging) in space.slices() {
        let mut first_rise = None;
        let mut first_fall = None;
        for b in 0..space.battery_capacity {
            let here = value.get(space.index(crate::model::State::new(activity, charging, b)));
            let next = value.get(space.index(crate::model::State::new(activity, charging, b + 1)));
            if next > here + tolerance && first_rise.is_none() {
                first_rise = Some(b + 1);
            }
            if next < here - tolerance && first_fall.is_none() {
                first_fall = Some(b + 1);
            }
        }
        let direction = match (first_rise, first_fall) {
            (None, None) => Monotonicity::Constant,
            (Some(_), None) => Monotonicity::NonDecreasing,
            (None, Some(_)) => Monotonicity::NonIncreasing,
            (Some(_), Some(_)) => Monotonicity::NonMonotone,
        };
        slices.push(SliceMonotonicity {
            activity,
            charging,
            direction,
            first_rise,
            first_fall,
        });
    }
    MonotoneReport { slices, tolerance }
}

/// Report of [`verify_q_submodular`].
#[derive(Debug, Clone)]
pub struct SubmodularReport {
    /// `(activity, charging, battery)` triples where the action gap grows
    /// with the battery level.
    pub violations: Vec<(usize, usize, usize)>,
    pub comparisons: usize,
    pub tolerance: f64,
}

impl SubmodularReport {
    pub fn pass(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check that the action gap `Q(active) - Q(sleep)` is non-increasing in the
/// battery level within every `(activity, charging)` slice — a sufficient
/// condition for the greedy policy to be a battery threshold.
pub fn verify_q_submodular(q: &QTable, space: &StateSpace) -> SubmodularReport {
    let tolerance = 1e-9;
    let mut violations = Vec::new();
    let mut comparisons = 0;
    for (activity, charging) in space.slices() {
        for b in 0..space.battery_capacity {
            let here = q.gap(space.index(crate::model::State::new(activity, charging, b)));
            let next = q.gap(space.index(crate::model::State::new(activity, charging, b + 1)));
            comparisons += 1;
            if here < next - tolerance {
                violations.push((activity, charging, b));
            }
        }
    }
    SubmodularReport {
        violations,
        comparisons,
        tolerance,
    }
}

/// Compact threshold form of a monotone policy: one battery cut per
/// `(activity, charging)` slice. The sentinel cut `capacity + 1` means the
/// slice never activates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThresholdTable {
    pub battery_capacity: usize,
    /// Cut per slice, indexed `activity * 2 + charging`.
    pub cuts: Vec<usize>,
}

impl ThresholdTable {
    #[inline]
    pub fn cut(&self, activity: usize, charging: usize) -> usize {
        self.cuts[activity * 2 + charging]
    }

    #[inline]
    pub fn is_active(&self, activity: usize, charging: usize, battery: usize) -> bool {
        battery >= self.cut(activity, charging)
    }

    pub fn to_policy(&self, space: &StateSpace) -> DeterministicPolicy {
        let actions = space
            .states()
            .map(|s| {
                if self.is_active(s.activity, s.charging, s.battery) {
                    Action::Active
                } else {
                    Action::Sleep
                }
            })
            .collect();
        DeterministicPolicy { actions }
    }
}

/// Recover the threshold form of a deterministic policy, or name the first
/// state where actions fail to be non-decreasing in the battery level.
pub fn extract_threshold(
    policy: &DeterministicPolicy,
    space: &StateSpace,
) -> Result<ThresholdTable, DpError> {
    let levels = space.battery_levels();
    let mut cuts = Vec::with_capacity(space.num_activities * 2);
    for (activity, charging) in space.slices() {
        let mut cut = levels; // sentinel: never active
        for b in 0..levels {
            let action =
                policy.action(space.index(crate::model::State::new(activity, charging, b)));
            match (action, cut == levels) {
                (Action::Active, true) => cut = b,
                (Action::Sleep, false) => {
                    return Err(DpError::NotThreshold {
                        activity,
                        charging,
                        battery: b,
                    })
                }
                _ => {}
            }
        }
        cuts.push(cut);
    }
    Ok(ThresholdTable {
        battery_capacity: space.battery_capacity,
        cuts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{SensingModel, State, StateSpace};
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_model(num_activities: usize, capacity: usize, seed: u64) -> SensingModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = num_activities;
        let mut transition = vec![0.0; u * u];
        for row in 0..u {
            let mut sum = 0.0;
            for col in 0..u {
                let w: f64 = rng.random::<f64>() + 0.05;
                transition[row * u + col] = w;
                sum += w;
            }
            for col in 0..u {
                transition[row * u + col] /= sum;
            }
        }
        let errors: Vec<f64> = (0..u).map(|_| rng.random::<f64>()).collect();
        let coverage: Vec<f64> = (0..u).map(|_| rng.random::<f64>()).collect();
        SensingModel::from_activity_params(
            StateSpace::new(u, capacity),
            transition,
            0.2 + 0.6 * rng.random::<f64>(),
            &errors,
            &coverage,
            1.0,
            0.25,
            0.9,
        )
        .unwrap()
    }

    /// Exhaustive policy enumeration oracle: best discounted value per state
    /// over all deterministic stationary policies, via policy evaluation.
    fn brute_force_values(model: &SensingModel, lambda: f64, beta: f64) -> Vec<f64> {
        let n = model.num_states();
        assert!(n <= 8, "oracle is exponential in the state count");
        let mut best = vec![f64::INFINITY; n];
        for mask in 0..(1u32 << n) {
            let actions = (0..n)
                .map(|s| {
                    if mask & (1 << s) != 0 {
                        Action::Active
                    } else {
                        Action::Sleep
                    }
                })
                .collect();
            let policy = DeterministicPolicy { actions };
            let v = policy_evaluation(model, &policy, lambda, beta).unwrap();
            for s in 0..n {
                best[s] = best[s].min(v.values[s]);
            }
        }
        best
    }

    #[test]
    fn degenerate_battery_model_matches_geometric_series() {
        // states differ only in the charging flag and both actions keep the
        // battery empty, so v = min(1, c1) / (1 - beta) in closed form; data
        // usage is pinned to zero at an empty battery, so lambda drops out
        let space = StateSpace::new(1, 0);
        let n = space.num_states();
        for c1 in [0.3, 1.0] {
            let mut detect = vec![1.0; n * 2];
            for s in 0..n {
                detect[s * 2 + 1] = c1;
            }
            let model = SensingModel::new(
                space,
                vec![1.0],
                0.4,
                detect,
                vec![0.0, 0.6, 0.0, 0.6],
                vec![0.0; n * 2],
                0.25,
                0.5,
            )
            .unwrap();
            let sol = value_iteration(&model, 0.7, 0.5, 1e-12, 10_000).unwrap();
            for s in 0..n {
                assert!((sol.values.get(s) - 2.0 * 1.0_f64.min(c1)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn value_iteration_matches_brute_force() {
        for seed in [1, 2, 3] {
            let model = toy_model(2, 0, seed); // 4 states, 16 policies
            let lambda = 0.3;
            let beta = 0.9;
            let sol = value_iteration(&model, lambda, beta, 1e-12, 100_000).unwrap();
            let best = brute_force_values(&model, lambda, beta);
            for s in 0..model.num_states() {
                assert!(
                    (sol.values.get(s) - best[s]).abs() < 1e-7,
                    "seed {seed} state {s}: vi {} oracle {}",
                    sol.values.get(s),
                    best[s]
                );
            }
        }
    }

    #[test]
    fn oracle_equivalence_up_to_eight_states() {
        for (u, cap, seed) in [(1, 1, 11), (2, 1, 12), (1, 3, 13)] {
            let model = toy_model(u, cap, seed);
            assert!(model.num_states() <= 8);
            let sol = value_iteration(&model, 0.15, 0.9, 1e-12, 100_000).unwrap();
            let best = brute_force_values(&model, 0.15, 0.9);
            for s in 0..model.num_states() {
                assert!((sol.values.get(s) - best[s]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn residuals_contract_geometrically() {
        let model = toy_model(3, 4, 7);
        let beta = 0.9;
        let sol = value_iteration(&model, 0.2, beta, 1e-10, 100_000).unwrap();
        for pair in sol.residuals.windows(2) {
            assert!(pair[1] <= beta * pair[0] + 1e-12);
        }
    }

    #[test]
    fn bellman_consistency_at_convergence() {
        let model = toy_model(2, 3, 9);
        let sol = value_iteration(&model, 0.2, 0.9, 1e-9, 100_000).unwrap();
        for s in 0..model.num_states() {
            assert!((sol.values.get(s) - sol.q.min_value(s)).abs() <= 1e-9);
        }
    }

    #[test]
    fn not_converged_reports_residual() {
        let model = toy_model(2, 2, 5);
        let err = value_iteration(&model, 0.1, 0.99, 1e-12, 3).unwrap_err();
        assert!(matches!(err, DpError::NotConverged { sweeps: 3, .. }));
    }

    #[test]
    fn all_sleep_policy_costs_geometric_sum() {
        let model = toy_model(3, 2, 21);
        let beta = 0.9;
        let policy = DeterministicPolicy::uniform(model.num_states(), Action::Sleep);
        let v = policy_evaluation(&model, &policy, 0.5, beta).unwrap();
        for s in 0..model.num_states() {
            assert!((v.values[s] - 1.0 / (1.0 - beta)).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_discount_returns_stage_cost() {
        let model = toy_model(2, 2, 22);
        let policy = DeterministicPolicy::uniform(model.num_states(), Action::Active);
        let lambda = 0.4;
        let v = policy_evaluation(&model, &policy, lambda, 0.0).unwrap();
        for s in 0..model.num_states() {
            assert!((v.values[s] - model.lagrangian_cost_idx(s, Action::Active, lambda)).abs() < 1e-12);
        }
    }

    #[test]
    fn policy_evaluation_matches_monte_carlo() {
        // discounted-return oracle: average many truncated rollouts
        use crate::sim::sample_step;
        let model = toy_model(2, 0, 33);
        let n = model.num_states();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let actions = (0..n)
            .map(|_| {
                if rng.random::<f64>() < 0.5 {
                    Action::Sleep
                } else {
                    Action::Active
                }
            })
            .collect();
        let policy = DeterministicPolicy { actions };
        let lambda = 0.2;
        let beta = 0.9;
        let exact = policy_evaluation(&model, &policy, lambda, beta).unwrap();

        let episodes = 8_000;
        let horizon = 220; // beta^220 ~ 8e-11
        let start = State::new(0, 0, 0);
        let start_idx = model.space().index(start);
        let mut returns = Vec::with_capacity(episodes);
        for _ in 0..episodes {
            let mut state = start;
            let mut discount = 1.0;
            let mut total = 0.0;
            for _ in 0..horizon {
                let idx = model.space().index(state);
                let action = policy.action(idx);
                total += discount * model.lagrangian_cost_idx(idx, action, lambda);
                discount *= beta;
                state = sample_step(&model, state, action, &mut rng).next;
            }
            returns.push(total);
        }
        let mean: f64 = returns.iter().sum::<f64>() / episodes as f64;
        let var: f64 = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>()
            / (episodes as f64 - 1.0);
        let se = (var / episodes as f64).sqrt();
        let diff = (mean - exact.values[start_idx]).abs();
        assert!(diff <= 3.0 * se + 1e-9, "diff {diff}, se {se}");
    }

    #[test]
    fn constant_table_is_monotone_both_ways() {
        let space = StateSpace::new(2, 4);
        let table = ValueTable {
            values: vec![1.5; space.num_states()],
        };
        let report = verify_value_monotone(&table, &space);
        assert!(report.pass());
        assert_eq!(report.direction(), Some(Monotonicity::Constant));
    }

    #[test]
    fn bump_table_fails_with_location() {
        let space = StateSpace::new(1, 4);
        let mut values = vec![0.0; space.num_states()];
        // slice (0, 0): 0, 1, 0.5, 2, 3 — a bump at battery 2
        for (b, v) in [(0, 0.0), (1, 1.0), (2, 0.5), (3, 2.0), (4, 3.0)] {
            values[space.index(State::new(0, 0, b))] = v;
        }
        for b in 0..=4 {
            values[space.index(State::new(0, 1, b))] = b as f64;
        }
        let table = ValueTable { values };
        let report = verify_value_monotone(&table, &space);
        assert!(!report.pass());
        let bad: Vec<_> = report.violations().collect();
        assert_eq!(bad.len(), 1);
        assert_eq!((bad[0].activity, bad[0].charging), (0, 0));
        assert_eq!(bad[0].first_fall, Some(2));
    }

    #[test]
    fn constant_gap_passes_submodularity() {
        let space = StateSpace::new(2, 3);
        let mut q = QTable::zeros(space.num_states());
        for s in 0..space.num_states() {
            q.set(s, Action::Sleep, 1.0);
            q.set(s, Action::Active, 0.7);
        }
        let report = verify_q_submodular(&q, &space);
        assert!(report.pass());
        assert_eq!(report.comparisons, 2 * 2 * 3);
    }

    #[test]
    fn growing_gap_is_reported() {
        let space = StateSpace::new(1, 2);
        let mut q = QTable::zeros(space.num_states());
        for s in 0..space.num_states() {
            let b = space.state(s).battery as f64;
            q.set(s, Action::Sleep, 1.0);
            // gap grows between battery 1 and 2 on both slices
            q.set(s, Action::Active, if b < 2.0 { 0.5 } else { 0.9 });
        }
        let report = verify_q_submodular(&q, &space);
        assert!(!report.pass());
        assert!(report.violations.contains(&(0, 0, 1)));
        assert!(report.violations.contains(&(0, 1, 1)));
    }

    #[test]
    fn threshold_extraction_examples() {
        let space = StateSpace::new(2, 9);
        let sleepy = DeterministicPolicy::uniform(space.num_states(), Action::Sleep);
        let table = extract_threshold(&sleepy, &space).unwrap();
        for (u, e) in space.slices() {
            assert_eq!(table.cut(u, e), 10);
        }

        let actions = space
            .states()
            .map(|s| {
                if s.battery >= 7 {
                    Action::Active
                } else {
                    Action::Sleep
                }
            })
            .collect();
        let policy = DeterministicPolicy { actions };
        let table = extract_threshold(&policy, &space).unwrap();
        for (u, e) in space.slices() {
            assert_eq!(table.cut(u, e), 7);
        }
        assert_eq!(table.to_policy(&space), policy);
    }

    #[test]
    fn non_threshold_policy_names_first_violation() {
        let space = StateSpace::new(1, 4);
        let mut actions = vec![Action::Sleep; space.num_states()];
        actions[space.index(State::new(0, 0, 1))] = Action::Active;
        // sleeps again at battery 3 after activating at 1
        actions[space.index(State::new(0, 0, 2))] = Action::Active;
        actions[space.index(State::new(0, 0, 4))] = Action::Active;
        let policy = DeterministicPolicy { actions };
        let err = extract_threshold(&policy, &space).unwrap_err();
        assert_eq!(
            err,
            DpError::NotThreshold {
                activity: 0,
                charging: 0,
                battery: 3
            }
        );
    }
}
