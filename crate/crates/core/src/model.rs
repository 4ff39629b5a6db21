//! Problem instance: state space, actions, stage costs, and the transition
//! kernel of the sensing chain.
//!
//! A state is `(activity, charging, battery)`: the user's current activity,
//! whether an energy unit arrives this epoch, and the battery level in
//! `0..=capacity`. The two actions are sleep and active. Battery levels
//! follow a Lindley recursion: consumption is floored at empty, charging is
//! capped at capacity.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use thiserror::Error;

/// Number of actions (sleep, active).
pub const NUM_ACTIONS: usize = 2;
/// Number of charging states (no unit arriving / one unit arriving).
pub const NUM_CHARGING: usize = 2;

/// Sensing action: stay asleep or wake, sense, and try to sync.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Sleep = 0,
    Active = 1,
}

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [Action::Sleep, Action::Active];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Action> {
        match index {
            0 => Some(Action::Sleep),
            1 => Some(Action::Active),
            _ => None,
        }
    }

    #[inline]
    pub fn is_active(self) -> bool {
        matches!(self, Action::Active)
    }
}

impl core::fmt::Display for Action {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Action::Sleep => write!(f, "sleep"),
            Action::Active => write!(f, "active"),
        }
    }
}

/// A single system state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct State {
    /// Activity index in `0..num_activities`.
    pub activity: usize,
    /// 1 when an energy unit arrives during this epoch, else 0.
    pub charging: usize,
    /// Battery level in `0..=capacity`.
    pub battery: usize,
}

impl State {
    pub fn new(activity: usize, charging: usize, battery: usize) -> State {
        State {
            activity,
            charging,
            battery,
        }
    }
}

/// Dimensions of the state space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateSpace {
    pub num_activities: usize,
    pub battery_capacity: usize,
}

impl StateSpace {
    pub fn new(num_activities: usize, battery_capacity: usize) -> StateSpace {
        StateSpace {
            num_activities,
            battery_capacity,
        }
    }

    /// Number of battery levels, `capacity + 1`.
    #[inline]
    pub fn battery_levels(&self) -> usize {
        self.battery_capacity + 1
    }

    /// Total number of states: `activities * 2 * (capacity + 1)`.
    #[inline]
    pub fn num_states(&self) -> usize {
        self.num_activities * NUM_CHARGING * self.battery_levels()
    }

    /// Fixed state indexing: lexicographic in `(activity, charging, battery)`
    /// with battery fastest-varying. LP column order and CSV row order both
    /// derive from this.
    #[inline]
    pub fn index(&self, state: State) -> usize {
        debug_assert!(self.contains(state));
        (state.activity * NUM_CHARGING + state.charging) * self.battery_levels() + state.battery
    }

    /// Inverse of [`StateSpace::index`].
    #[inline]
    pub fn state(&self, index: usize) -> State {
        debug_assert!(index < self.num_states());
        let levels = self.battery_levels();
        State {
            activity: index / (NUM_CHARGING * levels),
            charging: (index / levels) % NUM_CHARGING,
            battery: index % levels,
        }
    }

    pub fn contains(&self, state: State) -> bool {
        state.activity < self.num_activities
            && state.charging < NUM_CHARGING
            && state.battery <= self.battery_capacity
    }

    /// Iterate states in index order.
    pub fn states(&self) -> impl Iterator<Item = State> + '_ {
        (0..self.num_states()).map(move |i| self.state(i))
    }

    /// Iterate the `(activity, charging)` slices, in index order.
    pub fn slices(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_activities).flat_map(|u| (0..NUM_CHARGING).map(move |e| (u, e)))
    }
}

/// Battery update: `min(max(b - consumption, 0) + charge, capacity)`.
///
/// Consumption is one unit when the action is active, floored at an empty
/// battery; the arriving unit `charge` is capped at capacity (any excess is
/// wasted — the overflow event).
#[inline]
pub fn lindley_update(battery: usize, charge: usize, action: Action, capacity: usize) -> usize {
    (battery.saturating_sub(action.index()) + charge).min(capacity)
}

/// Validation failures when assembling a [`SensingModel`].
#[derive(Debug, Clone, Error, PartialEq)]
pub enum ModelError {
    #[error("state space must have at least one activity")]
    EmptySpace,
    #[error("{name} has length {got}, expected {expected}")]
    BadLength {
        name: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("user transition row {row} sums to {sum}, expected 1 within 1e-12")]
    RowNotStochastic { row: usize, sum: f64 },
    #[error("{name} entry for state {index} action {action} is {value}, outside its valid range")]
    EntryOutOfRange {
        name: &'static str,
        index: usize,
        action: usize,
        value: f64,
    },
    #[error("detection error must be exactly 1 under sleep (state {index})")]
    SleepCostNotOne { index: usize },
    #[error("connectivity must be exactly 0 under sleep (state {index})")]
    SleepConnectivityNotZero { index: usize },
    #[error("data usage must be 0 under sleep or at an empty battery (state {index})")]
    DataUsageNotZero { index: usize },
    #[error("{name} = {value} is outside {range}")]
    BadScalar {
        name: &'static str,
        value: f64,
        range: &'static str,
    },
    #[error("kernel row for state {index} action {action} sums to {sum}, expected 1 within 1e-10")]
    KernelRowNotStochastic {
        index: usize,
        action: usize,
        sum: f64,
    },
    #[error("active data usage is not a single positive constant over states with battery > 0: {detail}")]
    DataUsageNotConstant { detail: String },
}

/// A full problem instance, immutable after construction.
///
/// Stage functions are stored as dense per-(state, action) tables so that
/// arbitrary instances (not just the per-activity parametrization) can be
/// expressed, e.g. for randomized cross-checks.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingModel {
    space: StateSpace,
    /// Row-stochastic activity matrix, row-major `num_activities^2`.
    user_transition: Vec<f64>,
    /// Probability that an energy unit arrives in an epoch.
    charge_prob: f64,
    /// Detection error `c`, `num_states * 2`, indexed `state * 2 + action`.
    detect_error: Vec<f64>,
    /// Access-network coverage probability `g`, same layout as `detect_error`.
    connectivity: Vec<f64>,
    /// Data usage `d`, same layout.
    data_usage: Vec<f64>,
    /// Long-run data budget per epoch.
    budget: f64,
    /// Discount factor for the relaxed problem.
    discount: f64,
}

impl SensingModel {
    /// Build a model from full per-(state, action) tables and validate every
    /// structural invariant.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        space: StateSpace,
        user_transition: Vec<f64>,
        charge_prob: f64,
        detect_error: Vec<f64>,
        connectivity: Vec<f64>,
        data_usage: Vec<f64>,
        budget: f64,
        discount: f64,
    ) -> Result<SensingModel, ModelError> {
        if space.num_activities == 0 {
            return Err(ModelError::EmptySpace);
        }
        let u = space.num_activities;
        let n = space.num_states();
        check_len("user_transition", user_transition.len(), u * u)?;
        check_len("detect_error", detect_error.len(), n * NUM_ACTIONS)?;
        check_len("connectivity", connectivity.len(), n * NUM_ACTIONS)?;
        check_len("data_usage", data_usage.len(), n * NUM_ACTIONS)?;

        for row in 0..u {
            let mut sum = 0.0;
            for col in 0..u {
                let p = user_transition[row * u + col];
                if !(0.0..=1.0).contains(&p) {
                    return Err(ModelError::EntryOutOfRange {
                        name: "user_transition",
                        index: row,
                        action: col,
                        value: p,
                    });
                }
                sum += p;
            }
            if (sum - 1.0).abs() > 1e-12 {
                return Err(ModelError::RowNotStochastic { row, sum });
            }
        }
        check_prob("charge_prob", charge_prob)?;
        if !(budget > 0.0 && budget.is_finite()) {
            return Err(ModelError::BadScalar {
                name: "budget",
                value: budget,
                range: "(0, inf)",
            });
        }
        if !(0.0..1.0).contains(&discount) {
            return Err(ModelError::BadScalar {
                name: "discount",
                value: discount,
                range: "[0, 1)",
            });
        }

        for index in 0..n {
            let state = space.state(index);
            for action in Action::ALL {
                let a = action.index();
                let c = detect_error[index * NUM_ACTIONS + a];
                let g = connectivity[index * NUM_ACTIONS + a];
                let d = data_usage[index * NUM_ACTIONS + a];
                if !(0.0..=1.0).contains(&c) {
                    return Err(ModelError::EntryOutOfRange {
                        name: "detect_error",
                        index,
                        action: a,
                        value: c,
                    });
                }
                if !(0.0..=1.0).contains(&g) {
                    return Err(ModelError::EntryOutOfRange {
                        name: "connectivity",
                        index,
                        action: a,
                        value: g,
                    });
                }
                if !(d >= 0.0 && d.is_finite()) {
                    return Err(ModelError::EntryOutOfRange {
                        name: "data_usage",
                        index,
                        action: a,
                        value: d,
                    });
                }
                if action == Action::Sleep {
                    if c != 1.0 {
                        return Err(ModelError::SleepCostNotOne { index });
                    }
                    if g != 0.0 {
                        return Err(ModelError::SleepConnectivityNotZero { index });
                    }
                }
                if (action == Action::Sleep || state.battery == 0) && d != 0.0 {
                    return Err(ModelError::DataUsageNotZero { index });
                }
            }
        }

        Ok(SensingModel {
            space,
            user_transition,
            charge_prob,
            detect_error,
            connectivity,
            data_usage,
            budget,
            discount,
        })
    }

    /// Build a model from per-activity parameters.
    ///
    /// Conventions baked in here:
    /// * sleep detects nothing (`c = 1`), has no coverage and uses no data;
    /// * active sensing at an empty battery also fails (`c = 1`): there is no
    ///   energy to drive the sensors, and no data is generated;
    /// * coverage under the active action depends on the activity only.
    #[allow(clippy::too_many_arguments)]
    pub fn from_activity_params(
        space: StateSpace,
        user_transition: Vec<f64>,
        charge_prob: f64,
        detect_error_active: &[f64],
        connectivity_active: &[f64],
        data_usage_active: f64,
        budget: f64,
        discount: f64,
    ) -> Result<SensingModel, ModelError> {
        let u = space.num_activities;
        check_len("detect_error_active", detect_error_active.len(), u)?;
        check_len("connectivity_active", connectivity_active.len(), u)?;
        let n = space.num_states();
        let mut detect_error = vec![1.0; n * NUM_ACTIONS];
        let mut connectivity = vec![0.0; n * NUM_ACTIONS];
        let mut data_usage = vec![0.0; n * NUM_ACTIONS];
        for index in 0..n {
            let state = space.state(index);
            let active = index * NUM_ACTIONS + Action::Active.index();
            if state.battery > 0 {
                detect_error[active] = detect_error_active[state.activity];
                data_usage[active] = data_usage_active;
            }
            connectivity[active] = connectivity_active[state.activity];
        }
        SensingModel::new(
            space,
            user_transition,
            charge_prob,
            detect_error,
            connectivity,
            data_usage,
            budget,
            discount,
        )
    }

    /// The default six-activity instance used throughout the tests and docs:
    /// 21 battery levels, charge probability 0.15, per-activity detection
    /// errors (0.28, 0.25, 0.18, 0.12, 0.10, 0.08), coverage probabilities
    /// (0.50, 0.55, 0.60, 0.65, 0.68, 0.70), one data unit per active epoch,
    /// budget 0.25 and discount 0.99.
    pub fn default_instance() -> SensingModel {
        let space = StateSpace::new(6, 20);
        SensingModel::from_activity_params(
            space,
            default_user_transition(6),
            0.15,
            &[0.28, 0.25, 0.18, 0.12, 0.10, 0.08],
            &[0.50, 0.55, 0.60, 0.65, 0.68, 0.70],
            1.0,
            0.25,
            0.99,
        )
        .expect("default instance is valid")
    }

    #[inline]
    pub fn space(&self) -> StateSpace {
        self.space
    }

    #[inline]
    pub fn num_states(&self) -> usize {
        self.space.num_states()
    }

    #[inline]
    pub fn charge_prob(&self) -> f64 {
        self.charge_prob
    }

    #[inline]
    pub fn budget(&self) -> f64 {
        self.budget
    }

    #[inline]
    pub fn discount(&self) -> f64 {
        self.discount
    }

    /// Rebind the data budget (used by experiment sweeps).
    pub fn with_budget(mut self, budget: f64) -> Result<SensingModel, ModelError> {
        if !(budget > 0.0 && budget.is_finite()) {
            return Err(ModelError::BadScalar {
                name: "budget",
                value: budget,
                range: "(0, inf)",
            });
        }
        self.budget = budget;
        Ok(self)
    }

    #[inline]
    pub fn user_transition(&self, from: usize, to: usize) -> f64 {
        self.user_transition[from * self.space.num_activities + to]
    }

    pub fn user_transition_row(&self, from: usize) -> &[f64] {
        let u = self.space.num_activities;
        &self.user_transition[from * u..(from + 1) * u]
    }

    #[inline]
    pub fn detect_error_idx(&self, index: usize, action: Action) -> f64 {
        self.detect_error[index * NUM_ACTIONS + action.index()]
    }

    #[inline]
    pub fn connectivity_idx(&self, index: usize, action: Action) -> f64 {
        self.connectivity[index * NUM_ACTIONS + action.index()]
    }

    #[inline]
    pub fn data_usage_idx(&self, index: usize, action: Action) -> f64 {
        self.data_usage[index * NUM_ACTIONS + action.index()]
    }

    pub fn detect_error(&self, state: State, action: Action) -> f64 {
        self.detect_error_idx(self.space.index(state), action)
    }

    pub fn connectivity(&self, state: State, action: Action) -> f64 {
        self.connectivity_idx(self.space.index(state), action)
    }

    pub fn data_usage(&self, state: State, action: Action) -> f64 {
        self.data_usage_idx(self.space.index(state), action)
    }

    /// Stage cost with the data constraint folded in: `c + lambda * d`.
    #[inline]
    pub fn lagrangian_cost_idx(&self, index: usize, action: Action, lambda: f64) -> f64 {
        self.detect_error_idx(index, action) + lambda * self.data_usage_idx(index, action)
    }

    /// One-step transition probability between explicit states.
    ///
    /// The kernel factorizes into the activity chain, the Bernoulli charging
    /// draw, and a two-branch battery move: with probability `g` the sync
    /// succeeds and one unit is consumed, otherwise the battery only charges.
    /// Both branches apply the Lindley clamps, and when the two targets
    /// coincide (e.g. at an empty battery) their mass merges.
    pub fn transition_prob(&self, from: State, action: Action, to: State) -> f64 {
        debug_assert!(self.space.contains(from) && self.space.contains(to));
        let p_activity = self.user_transition(from.activity, to.activity);
        let p_charge = if to.charging == 1 {
            self.charge_prob
        } else {
            1.0 - self.charge_prob
        };
        let g = self.connectivity(from, action);
        let cap = self.space.battery_capacity;
        let b_synced = lindley_update(from.battery, from.charging, action, cap);
        let b_idle = lindley_update(from.battery, from.charging, Action::Sleep, cap);
        let mut p_battery = 0.0;
        if to.battery == b_synced {
            p_battery += g;
        }
        if to.battery == b_idle {
            p_battery += 1.0 - g;
        }
        p_activity * p_charge * p_battery
    }

    /// Materialize the dense kernel and check every row for stochasticity.
    pub fn build_kernel(&self) -> Result<Kernel, ModelError> {
        let n = self.num_states();
        let cap = self.space.battery_capacity;
        let u = self.space.num_activities;
        let mut probs = vec![0.0; n * NUM_ACTIONS * n];
        for index in 0..n {
            let state = self.space.state(index);
            for action in Action::ALL {
                let g = self.connectivity_idx(index, action);
                let b_synced = lindley_update(state.battery, state.charging, action, cap);
                let b_idle = lindley_update(state.battery, state.charging, Action::Sleep, cap);
                let row = (index * NUM_ACTIONS + action.index()) * n;
                for next_u in 0..u {
                    let p_activity = self.user_transition(state.activity, next_u);
                    if p_activity == 0.0 {
                        continue;
                    }
                    for next_e in 0..NUM_CHARGING {
                        let p_charge = if next_e == 1 {
                            self.charge_prob
                        } else {
                            1.0 - self.charge_prob
                        };
                        let base = p_activity * p_charge;
                        if base == 0.0 {
                            continue;
                        }
                        probs[row + self.space.index(State::new(next_u, next_e, b_synced))] +=
                            base * g;
                        probs[row + self.space.index(State::new(next_u, next_e, b_idle))] +=
                            base * (1.0 - g);
                    }
                }
                let sum: f64 = probs[row..row + n].iter().sum();
                if (sum - 1.0).abs() > 1e-10 {
                    return Err(ModelError::KernelRowNotStochastic {
                        index,
                        action: action.index(),
                        sum,
                    });
                }
            }
        }
        Ok(Kernel { n, probs })
    }

    /// Fraction of epochs the budget allows the device to be actively
    /// sensing: `budget / d_active`. Requires the active data usage to be one
    /// positive constant over every state with a non-empty battery.
    pub fn sensing_fraction(&self) -> Result<f64, ModelError> {
        let mut d_active: Option<f64> = None;
        for index in 0..self.num_states() {
            if self.space.state(index).battery == 0 {
                continue;
            }
            let d = self.data_usage_idx(index, Action::Active);
            match d_active {
                None => d_active = Some(d),
                Some(prev) if prev != d => {
                    return Err(ModelError::DataUsageNotConstant {
                        detail: alloc::format!("found both {prev} and {d}"),
                    })
                }
                Some(_) => {}
            }
        }
        match d_active {
            Some(d) if d > 0.0 => Ok(self.budget / d),
            Some(d) => Err(ModelError::DataUsageNotConstant {
                detail: alloc::format!("active data usage is {d}, expected > 0"),
            }),
            None => Err(ModelError::DataUsageNotConstant {
                detail: String::from("no state has battery > 0"),
            }),
        }
    }
}

fn check_len(name: &'static str, got: usize, expected: usize) -> Result<(), ModelError> {
    if got != expected {
        Err(ModelError::BadLength {
            name,
            got,
            expected,
        })
    } else {
        Ok(())
    }
}

fn check_prob(name: &'static str, value: f64) -> Result<(), ModelError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(ModelError::BadScalar {
            name,
            value,
            range: "[0, 1]",
        })
    }
}

/// The default activity matrix: stay with probability 0.6, step to the
/// previous activity with probability 0.3 and to the next with probability
/// 0.1 (steps off either end fold into staying). The bias toward low-index
/// activities — the hardest to detect and the worst covered — keeps the data
/// budget an active constraint at the default parameters.
pub fn default_user_transition(num_activities: usize) -> Vec<f64> {
    let u = num_activities;
    let mut p = vec![0.0; u * u];
    for row in 0..u {
        let mut stay = 0.6;
        if row == 0 {
            stay += 0.3;
        } else {
            p[row * u + row - 1] = 0.3;
        }
        if row + 1 == u {
            stay += 0.1;
        } else {
            p[row * u + row + 1] = 0.1;
        }
        p[row * u + row] = stay;
    }
    p
}

/// Dense transition kernel, `P(next | state, action)`.
#[derive(Debug, Clone)]
pub struct Kernel {
    n: usize,
    probs: Vec<f64>,
}

impl Kernel {
    #[inline]
    pub fn num_states(&self) -> usize {
        self.n
    }

    /// Probability row over next states for `(state, action)`.
    #[inline]
    pub fn row(&self, index: usize, action: Action) -> &[f64] {
        let start = (index * NUM_ACTIONS + action.index()) * self.n;
        &self.probs[start..start + self.n]
    }

    #[inline]
    pub fn prob(&self, from: usize, action: Action, to: usize) -> f64 {
        self.row(from, action)[to]
    }
}
