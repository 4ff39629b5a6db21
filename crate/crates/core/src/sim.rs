//! Policy representation, exact stationary-distribution evaluation, the
//! long-run performance metrics, and seeded Monte-Carlo simulation.

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dp::DeterministicPolicy;
use crate::math;
use crate::model::{Action, ModelError, SensingModel, State};

/// Epochs discarded before statistics accumulate in [`simulate`].
pub const DEFAULT_WARMUP: u64 = 10_000;
/// Power-iteration stopping residual (L1 distance between sweeps).
pub const STATIONARY_TOL: f64 = 1e-12;
/// Power-iteration step budget before giving up on ergodicity.
pub const STATIONARY_MAX_STEPS: usize = 100_000;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SimError {
    #[error("activation probability {value} at state {index} is outside [0, 1]")]
    BadProbability { index: usize, value: f64 },
    #[error("simulation needs at least one recorded epoch")]
    NoEpochs,
    #[error("policy has {got} states, model has {expected}")]
    LengthMismatch { got: usize, expected: usize },
    #[error("power iteration did not reach {tol:.0e} within {steps} steps (residual {residual:.3e}); the chain may be periodic or multichain")]
    NotErgodic {
        steps: usize,
        residual: f64,
        tol: f64,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A stationary randomized policy: the probability of choosing the active
/// action in each state. Deterministic policies, LP-derived randomized
/// policies, threshold mixtures and the uniform baseline all fit this shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    probs: Vec<f64>,
}

impl Policy {
    pub fn from_active_probs(probs: Vec<f64>) -> Result<Policy, SimError> {
        for (index, p) in probs.iter().enumerate() {
            if !(0.0..=1.0).contains(p) {
                return Err(SimError::BadProbability {
                    index,
                    value: *p,
                });
            }
        }
        Ok(Policy { probs })
    }

    pub fn all_sleep(num_states: usize) -> Policy {
        Policy {
            probs: vec![0.0; num_states],
        }
    }

    pub fn all_active(num_states: usize) -> Policy {
        Policy {
            probs: vec![1.0; num_states],
        }
    }

    /// State-independent activation probability (the uniform baseline).
    pub fn constant(num_states: usize, p_active: f64) -> Result<Policy, SimError> {
        Policy::from_active_probs(vec![p_active; num_states])
    }

    pub fn from_deterministic(policy: &DeterministicPolicy) -> Policy {
        Policy {
            probs: policy
                .actions
                .iter()
                .map(|a| if a.is_active() { 1.0 } else { 0.0 })
                .collect(),
        }
    }

    /// Per-decision blend: activate with probability
    /// `weight * a + (1 - weight) * b`.
    pub fn blend(a: &Policy, b: &Policy, weight: f64) -> Policy {
        debug_assert_eq!(a.len(), b.len());
        Policy {
            probs: a
                .probs
                .iter()
                .zip(b.probs.iter())
                .map(|(pa, pb)| weight * pa + (1.0 - weight) * pb)
                .collect(),
        }
    }

    #[inline]
    pub fn prob_active(&self, index: usize) -> f64 {
        self.probs[index]
    }

    pub fn prob(&self, index: usize, action: Action) -> f64 {
        match action {
            Action::Active => self.probs[index],
            Action::Sleep => 1.0 - self.probs[index],
        }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Long-run fraction of epochs spent in each (state, action) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupationMeasure {
    /// Indexed `state * 2 + action`.
    pub phi: Vec<f64>,
}

impl OccupationMeasure {
    pub fn from_raw(phi: Vec<f64>) -> OccupationMeasure {
        OccupationMeasure { phi }
    }

    #[inline]
    pub fn get(&self, index: usize, action: Action) -> f64 {
        self.phi[index * 2 + action.index()]
    }

    /// Total mass on a state, summed over actions.
    #[inline]
    pub fn state_mass(&self, index: usize) -> f64 {
        self.phi[index * 2] + self.phi[index * 2 + 1]
    }

    pub fn num_states(&self) -> usize {
        self.phi.len() / 2
    }

    pub fn total(&self) -> f64 {
        self.phi.iter().sum()
    }

    /// Expected detection error under the measure.
    pub fn detection_error(&self, model: &SensingModel) -> f64 {
        self.expectation(|s, a| model.detect_error_idx(s, a))
    }

    /// Expected data usage under the measure.
    pub fn data_usage(&self, model: &SensingModel) -> f64 {
        self.expectation(|s, a| model.data_usage_idx(s, a))
    }

    /// Expectation of a per-(state, action) function.
    pub fn expectation(&self, mut f: impl FnMut(usize, Action) -> f64) -> f64 {
        let mut total = 0.0;
        for s in 0..self.num_states() {
            for a in Action::ALL {
                let mass = self.get(s, a);
                if mass != 0.0 {
                    total += mass * f(s, a);
                }
            }
        }
        total
    }
}

/// Stationary occupation measure of the chain induced by a policy, by power
/// iteration from the uniform distribution to an L1 residual of 1e-12.
pub fn stationary_distribution(
    model: &SensingModel,
    policy: &Policy,
) -> Result<OccupationMeasure, SimError> {
    let n = model.num_states();
    if policy.len() != n {
        return Err(SimError::LengthMismatch {
            got: policy.len(),
            expected: n,
        });
    }
    let kernel = model.build_kernel()?;

    // induced chain, stored transposed so each update row is a dot product
    let mut transposed = vec![0.0; n * n];
    for s in 0..n {
        let p_active = policy.prob_active(s);
        let sleep = kernel.row(s, Action::Sleep);
        let active = kernel.row(s, Action::Active);
        for t in 0..n {
            let p = (1.0 - p_active) * sleep[t] + p_active * active[t];
            if p != 0.0 {
                transposed[t * n + s] = p;
            }
        }
    }

    let mut mu = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for _ in 0..STATIONARY_MAX_STEPS {
        for t in 0..n {
            next[t] = transposed[t * n..(t + 1) * n]
                .iter()
                .zip(mu.iter())
                .map(|(p, m)| p * m)
                .sum();
        }
        residual = mu
            .iter()
            .zip(next.iter())
            .map(|(a, b)| (a - b).abs())
            .sum();
        core::mem::swap(&mut mu, &mut next);
        if residual <= STATIONARY_TOL {
            let mut phi = vec![0.0; n * 2];
            for s in 0..n {
                phi[s * 2] = mu[s] * (1.0 - policy.prob_active(s));
                phi[s * 2 + 1] = mu[s] * policy.prob_active(s);
            }
            return Ok(OccupationMeasure { phi });
        }
    }
    Err(SimError::NotErgodic {
        steps: STATIONARY_MAX_STEPS,
        residual,
        tol: STATIONARY_TOL,
    })
}

/// Average battery level during active epochs, as an unconditional
/// expectation: `sum_b b * phi(state, active)`.
pub fn avg_battery(model: &SensingModel, phi: &OccupationMeasure) -> f64 {
    let space = model.space();
    let mut total = 0.0;
    for s in 0..phi.num_states() {
        total += space.state(s).battery as f64 * phi.get(s, Action::Active);
    }
    total
}

/// Alternate, conditioned on being active: `avg_battery / P(active)`.
/// Zero when the policy never activates.
pub fn avg_battery_conditional(model: &SensingModel, phi: &OccupationMeasure) -> f64 {
    let mass: f64 = (0..phi.num_states())
        .map(|s| phi.get(s, Action::Active))
        .sum();
    if mass <= 0.0 {
        0.0
    } else {
        avg_battery(model, phi) / mass
    }
}

/// Probability of a successful sync in an epoch:
/// `sum g(state, active) * phi(state, active)`.
pub fn sync_probability(model: &SensingModel, phi: &OccupationMeasure) -> f64 {
    (0..phi.num_states())
        .map(|s| model.connectivity_idx(s, Action::Active) * phi.get(s, Action::Active))
        .sum()
}

/// Battery-overflow indicator: mass on states one unit below capacity with a
/// unit arriving that the epoch does not consume —
/// `sum_u phi([u,1,B-1], active) * (1 - g) + phi([u,1,B-1], sleep)`.
/// Zero for a zero-capacity battery.
pub fn overflow_probability(model: &SensingModel, phi: &OccupationMeasure) -> f64 {
    let space = model.space();
    if space.battery_capacity == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for u in 0..space.num_activities {
        let s = space.index(State::new(u, 1, space.battery_capacity - 1));
        let g = model.connectivity_idx(s, Action::Active);
        total += phi.get(s, Action::Active) * (1.0 - g) + phi.get(s, Action::Sleep);
    }
    total
}

/// Alternate overflow reading: probability that an arriving energy unit is
/// actually wasted, i.e. the battery still sits at capacity after this
/// epoch's consumption.
pub fn wasted_energy_probability(model: &SensingModel, phi: &OccupationMeasure) -> f64 {
    let space = model.space();
    let cap = space.battery_capacity;
    let mut total = 0.0;
    for u in 0..space.num_activities {
        let s = space.index(State::new(u, 1, cap));
        let g = model.connectivity_idx(s, Action::Active);
        // under active with coverage, one unit is consumed first (cap > 0)
        let active_waste = if cap == 0 { 1.0 } else { 1.0 - g };
        total += phi.get(s, Action::Active) * active_waste + phi.get(s, Action::Sleep);
    }
    total
}

/// The constrained uniform baseline: activate with the budget-derived
/// probability `xi` in every state. Returns the policy together with the
/// uniform occupation measure the baseline's metrics are defined over.
pub fn cup_policy(model: &SensingModel) -> Result<(Policy, OccupationMeasure), SimError> {
    let xi = model.sensing_fraction()?;
    let n = model.num_states();
    let policy = Policy::constant(n, xi)?;
    let cell = 1.0 / n as f64;
    let mut phi = vec![0.0; n * 2];
    for s in 0..n {
        phi[s * 2] = (1.0 - xi) * cell;
        phi[s * 2 + 1] = xi * cell;
    }
    Ok((policy, OccupationMeasure { phi }))
}

/// Outcome of one environment step.
#[derive(Debug, Clone, Copy)]
pub struct StepOutcome {
    pub next: State,
    /// True when the active action found network coverage this epoch.
    pub synced: bool,
}

/// Sample one transition of the chain. Draw order is fixed — next activity,
/// charge arrival, then (only for the active action) the coverage draw — so
/// trajectories are reproducible given the generator state.
pub fn sample_step(
    model: &SensingModel,
    state: State,
    action: Action,
    rng: &mut ChaCha8Rng,
) -> StepOutcome {
    let space = model.space();
    let row = model.user_transition_row(state.activity);
    let draw: f64 = rng.random();
    let mut acc = 0.0;
    let mut next_activity = row.len() - 1;
    for (u, p) in row.iter().enumerate() {
        acc += p;
        if draw < acc {
            next_activity = u;
            break;
        }
    }
    let next_charging = usize::from(rng.random::<f64>() < model.charge_prob());
    let synced = action.is_active() && rng.random::<f64>() < model.connectivity(state, action);
    let consuming = if synced { action } else { Action::Sleep };
    let next_battery = crate::model::lindley_update(
        state.battery,
        state.charging,
        consuming,
        space.battery_capacity,
    );
    StepOutcome {
        next: State::new(next_activity, next_charging, next_battery),
        synced,
    }
}

/// Mean and batch-means standard error of one accumulated series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
}

/// Empirical counterparts of the long-run metrics from one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStats {
    /// Epochs that entered the statistics (after warm-up).
    pub epochs: u64,
    pub warmup: u64,
    pub detection_error: Estimate,
    pub data_usage: Estimate,
    /// Battery level gated by the active action (unconditional form).
    pub battery_active: Estimate,
    /// Mean battery level over active epochs only.
    pub battery_active_conditional: f64,
    pub sync_rate: Estimate,
    /// Empirical counterpart of [`overflow_probability`].
    pub overflow_rate: Estimate,
    /// Empirical counterpart of [`wasted_energy_probability`].
    pub wasted_energy_rate: Estimate,
}

/// Accumulates per-epoch values into up to 100 equal batches; the standard
/// error comes from the spread of batch means, which absorbs the serial
/// correlation of the chain.
struct BatchSeries {
    batch_sums: Vec<f64>,
    batch_len: u64,
    in_batch: u64,
    current: f64,
}

impl BatchSeries {
    fn new(epochs: u64) -> BatchSeries {
        let batches = epochs.min(100).max(1);
        BatchSeries {
            batch_sums: Vec::with_capacity(batches as usize),
            batch_len: epochs.div_euclid(batches).max(1),
            in_batch: 0,
            current: 0.0,
        }
    }

    fn push(&mut self, value: f64) {
        self.current += value;
        self.in_batch += 1;
        if self.in_batch == self.batch_len {
            self.batch_sums.push(self.current);
            self.current = 0.0;
            self.in_batch = 0;
        }
    }

    fn finish(mut self) -> Estimate {
        if self.in_batch > 0 {
            // fold the ragged tail into the last batch
            if let Some(last) = self.batch_sums.last_mut() {
                *last += self.current;
                self.in_batch = 0;
            } else {
                self.batch_sums.push(self.current);
            }
        }
        let total_epochs: f64 = self.batch_sums.len() as f64 * self.batch_len as f64;
        let grand: f64 = self.batch_sums.iter().sum();
        let mean = grand / total_epochs;
        let k = self.batch_sums.len();
        if k < 2 {
            return Estimate {
                mean,
                std_err: f64::INFINITY,
            };
        }
        let batch_means: Vec<f64> = self
            .batch_sums
            .iter()
            .map(|s| s / self.batch_len as f64)
            .collect();
        let center: f64 = batch_means.iter().sum::<f64>() / k as f64;
        let var: f64 = batch_means
            .iter()
            .map(|m| (m - center) * (m - center))
            .sum::<f64>()
            / (k as f64 - 1.0);
        Estimate {
            mean,
            std_err: math::sqrt(var / k as f64),
        }
    }
}

/// Simulate `epochs` recorded epochs after the default warm-up.
pub fn simulate(
    model: &SensingModel,
    policy: &Policy,
    epochs: u64,
    seed: u64,
) -> Result<TrajectoryStats, SimError> {
    simulate_with(model, policy, epochs, seed, DEFAULT_WARMUP)
}

/// Simulate with an explicit warm-up. The trajectory starts at
/// `(activity 0, no charge, empty battery)`; the first `warmup` epochs are
/// discarded, the next `epochs` are recorded. Identical inputs produce
/// identical statistics.
pub fn simulate_with(
    model: &SensingModel,
    policy: &Policy,
    epochs: u64,
    seed: u64,
    warmup: u64,
) -> Result<TrajectoryStats, SimError> {
    let n = model.num_states();
    if policy.len() != n {
        return Err(SimError::LengthMismatch {
            got: policy.len(),
            expected: n,
        });
    }
    if epochs == 0 {
        return Err(SimError::NoEpochs);
    }
    let space = model.space();
    let cap = space.battery_capacity;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = State::new(0, 0, 0);

    for _ in 0..warmup {
        let idx = space.index(state);
        let action = draw_action(policy, idx, &mut rng);
        state = sample_step(model, state, action, &mut rng).next;
    }

    let mut err = BatchSeries::new(epochs);
    let mut data = BatchSeries::new(epochs);
    let mut battery = BatchSeries::new(epochs);
    let mut sync = BatchSeries::new(epochs);
    let mut overflow = BatchSeries::new(epochs);
    let mut wasted = BatchSeries::new(epochs);
    let mut active_epochs: u64 = 0;
    let mut active_battery_sum: f64 = 0.0;

    for _ in 0..epochs {
        let idx = space.index(state);
        let action = draw_action(policy, idx, &mut rng);
        let outcome = sample_step(model, state, action, &mut rng);

        err.push(model.detect_error_idx(idx, action));
        data.push(model.data_usage_idx(idx, action));
        if action.is_active() {
            active_epochs += 1;
            active_battery_sum += state.battery as f64;
            battery.push(state.battery as f64);
        } else {
            battery.push(0.0);
        }
        sync.push(if outcome.synced { 1.0 } else { 0.0 });
        let near_full = cap > 0 && state.charging == 1 && state.battery == cap - 1;
        overflow.push(if near_full && !outcome.synced { 1.0 } else { 0.0 });
        let consumed = if outcome.synced { 1 } else { 0 };
        let still_full = state.charging == 1 && state.battery.saturating_sub(consumed) == cap;
        wasted.push(if still_full { 1.0 } else { 0.0 });

        state = outcome.next;
    }

    Ok(TrajectoryStats {
        epochs,
        warmup,
        detection_error: err.finish(),
        data_usage: data.finish(),
        battery_active: battery.finish(),
        battery_active_conditional: if active_epochs > 0 {
            active_battery_sum / active_epochs as f64
        } else {
            0.0
        },
        sync_rate: sync.finish(),
        overflow_rate: overflow.finish(),
        wasted_energy_rate: wasted.finish(),
    })
}

#[inline]
fn draw_action(policy: &Policy, index: usize, rng: &mut ChaCha8Rng) -> Action {
    if rng.random::<f64>() < policy.prob_active(index) {
        Action::Active
    } else {
        Action::Sleep
    }
}
