//! Tabular Q-learning against the simulated chain: the plain algorithm, and
//! the structured variant that seeds the table with a battery-monotone
//! initialization and projects the final greedy policy to threshold form.

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dp::{self, DeterministicPolicy, DpError, QTable, ViSolution};
use crate::math;
use crate::model::{Action, SensingModel, State, StateSpace, NUM_ACTIONS};
use crate::sim;

/// Q-gap below which a state counts as a genuine tie and is excluded from
/// mismatch statistics.
pub const TIE_GAP: f64 = 1e-6;

#[derive(Debug, Clone, Error)]
pub enum QlearnError {
    #[error("invalid learner config: {0}")]
    BadConfig(&'static str),
    #[error("config mode does not match the entry point")]
    WrongMode,
    #[error(transparent)]
    Dp(#[from] DpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LearnMode {
    Conventional,
    Structured,
}

/// Learning-run settings.
#[derive(Debug, Clone)]
pub struct LearnerConfig {
    /// Data price folded into the stage cost; fixed during learning.
    pub lambda: f64,
    pub beta: f64,
    /// Total environment steps.
    pub max_iters: usize,
    /// Exploration probability decays linearly from `eps_start` to `eps_end`
    /// over the first half of the run, then holds.
    pub eps_start: f64,
    pub eps_end: f64,
    pub seed: u64,
    pub mode: LearnMode,
    /// Slope of the structured initialization `Q0(b) = init_slope * b`.
    pub init_slope: f64,
    /// Use per-(state, action) visit counts for the step size instead of the
    /// single global counter. Off by default: the published rule indexes one
    /// global counter.
    pub per_pair_step_counts: bool,
    /// Extension beyond the two published devices: at every checkpoint,
    /// re-impose a non-increasing action gap in the battery level on the
    /// learned table (pool-adjacent-violators on the gaps). Off by default.
    pub project_at_checkpoints: bool,
    /// Number of mismatch checkpoints over the run.
    pub checkpoints: usize,
}

impl LearnerConfig {
    pub fn new(lambda: f64, beta: f64, max_iters: usize, seed: u64, mode: LearnMode) -> LearnerConfig {
        LearnerConfig {
            lambda,
            beta,
            max_iters,
            eps_start: 0.5,
            eps_end: 0.05,
            seed,
            mode,
            init_slope: 0.01,
            per_pair_step_counts: false,
            project_at_checkpoints: false,
            checkpoints: 100,
        }
    }

    pub fn validate(&self) -> Result<(), QlearnError> {
        if self.max_iters == 0 {
            return Err(QlearnError::BadConfig("max_iters must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.eps_start) || !(0.0..=1.0).contains(&self.eps_end) {
            return Err(QlearnError::BadConfig("exploration must be in [0, 1]"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(QlearnError::BadConfig("lambda must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(QlearnError::BadConfig("beta must be in [0, 1)"));
        }
        if self.checkpoints == 0 {
            return Err(QlearnError::BadConfig("checkpoints must be >= 1"));
        }
        Ok(())
    }

    fn epsilon_at(&self, step: usize) -> f64 {
        let half = (self.max_iters / 2).max(1);
        if step >= half {
            self.eps_end
        } else {
            self.eps_start + (self.eps_end - self.eps_start) * (step as f64 / half as f64)
        }
    }
}

/// Policy disagreement with the reference at one checkpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MismatchPoint {
    pub step: usize,
    /// Fraction of non-tied states whose greedy action differs from the
    /// reference policy.
    pub mismatch: f64,
}

/// Result of one learning run.
#[derive(Debug, Clone, PartialEq)]
pub struct LearningRun {
    pub q: QTable,
    /// Final policy: raw greedy for the conventional mode, threshold
    /// projection of the greedy for the structured mode.
    pub policy: DeterministicPolicy,
    pub mismatch: Vec<MismatchPoint>,
    pub env_steps: usize,
}

impl LearningRun {
    pub fn final_mismatch(&self) -> f64 {
        self.mismatch.last().map(|p| p.mismatch).unwrap_or(1.0)
    }
}

/// One temporal-difference backup with the published diminishing step size
/// `1 / sqrt(step + 1)` (`step` counts from zero, so the first update has
/// unit step): moves `Q(state, action)` toward
/// `cost + beta * min_a Q(next, a)` and touches nothing else.
pub fn q_update(
    q: &mut QTable,
    state: usize,
    action: Action,
    cost: f64,
    next_state: usize,
    step: usize,
    beta: f64,
) {
    let alpha = 1.0 / math::sqrt((step + 1) as f64);
    let target = cost + beta * q.min_value(next_state);
    let current = q.get(state, action);
    q.set(state, action, current + alpha * (target - current));
}

/// Run conventional Q-learning: zero initialization, greedy final policy.
/// The reference policy for the mismatch trace is recomputed by value
/// iteration at the same multiplier.
pub fn run_conventional(
    model: &SensingModel,
    cfg: &LearnerConfig,
) -> Result<LearningRun, QlearnError> {
    if cfg.mode != LearnMode::Conventional {
        return Err(QlearnError::WrongMode);
    }
    let reference = reference_solution(model, cfg)?;
    run_with_reference(model, cfg, &reference)
}

/// Run structured Q-learning: initialization strictly increasing in the
/// battery level within every `(activity, charging, action)` slice, the same
/// update rule, and a final threshold projection of the greedy policy.
pub fn run_structured(
    model: &SensingModel,
    cfg: &LearnerConfig,
) -> Result<LearningRun, QlearnError> {
    if cfg.mode != LearnMode::Structured {
        return Err(QlearnError::WrongMode);
    }
    let reference = reference_solution(model, cfg)?;
    run_with_reference(model, cfg, &reference)
}

/// The dynamic-programming solution mismatches are measured against.
pub fn reference_solution(
    model: &SensingModel,
    cfg: &LearnerConfig,
) -> Result<ViSolution, QlearnError> {
    cfg.validate()?;
    Ok(dp::value_iteration(model, cfg.lambda, cfg.beta, 1e-8, 1_000_000)?)
}

/// Run a learner against a precomputed reference (shared across paired-seed
/// batches so the reference is solved once).
pub fn run_with_reference(
    model: &SensingModel,
    cfg: &LearnerConfig,
    reference: &ViSolution,
) -> Result<LearningRun, QlearnError> {
    cfg.validate()?;
    let space = model.space();
    let n = model.num_states();
    let mut q = initial_table(cfg, &space);
    let mut visits = if cfg.per_pair_step_counts {
        vec![0usize; n * NUM_ACTIONS]
    } else {
        Vec::new()
    };
    let eligible: Vec<bool> = (0..n).map(|s| reference.q.gap(s).abs() >= TIE_GAP).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = State::new(0, 0, 0);
    let interval = (cfg.max_iters / cfg.checkpoints).max(1);
    let mut mismatch = Vec::with_capacity(cfg.checkpoints + 1);

    for step in 0..cfg.max_iters {
        let index = space.index(state);
        let action = if rng.random::<f64>() < cfg.epsilon_at(step) {
            if rng.random::<f64>() < 0.5 {
                Action::Sleep
            } else {
                Action::Active
            }
        } else {
            q.greedy(index)
        };
        let outcome = sim::sample_step(model, state, action, &mut rng);
        let next_index = space.index(outcome.next);
        let cost = model.lagrangian_cost_idx(index, action, cfg.lambda);
        let counter = if cfg.per_pair_step_counts {
            let slot = index * NUM_ACTIONS + action.index();
            let c = visits[slot];
            visits[slot] += 1;
            c
        } else {
            step
        };
        q_update(&mut q, index, action, cost, next_index, counter, cfg.beta);
        state = outcome.next;

        let at_checkpoint = (step + 1) % interval == 0 || step + 1 == cfg.max_iters;
        if at_checkpoint && mismatch.last().map(|p: &MismatchPoint| p.step) != Some(step + 1) {
            if cfg.project_at_checkpoints {
                project_gaps_monotone(&mut q, &space);
            }
            let estimate = current_policy(&q, &space, cfg.mode);
            mismatch.push(MismatchPoint {
                step: step + 1,
                mismatch: policy_mismatch(&estimate, &reference.policy, &eligible),
            });
        }
    }

    let policy = current_policy(&q, &space, cfg.mode);
    Ok(LearningRun {
        q,
        policy,
        mismatch,
        env_steps: cfg.max_iters,
    })
}

fn initial_table(cfg: &LearnerConfig, space: &StateSpace) -> QTable {
    let n = space.num_states();
    let mut q = QTable::zeros(n);
    if cfg.mode == LearnMode::Structured {
        for s in 0..n {
            let level = space.state(s).battery as f64;
            for action in Action::ALL {
                q.set(s, action, cfg.init_slope * level);
            }
        }
    }
    q
}

/// The mode's current policy estimate: raw greedy, or threshold-projected
/// greedy for the structured mode.
fn current_policy(q: &QTable, space: &StateSpace, mode: LearnMode) -> DeterministicPolicy {
    let greedy = DeterministicPolicy::greedy_from(q);
    match mode {
        LearnMode::Conventional => greedy,
        LearnMode::Structured => project_threshold(&greedy, space),
    }
}

/// Fraction of eligible (non-tied) states where the two policies disagree.
pub fn policy_mismatch(
    policy: &DeterministicPolicy,
    reference: &DeterministicPolicy,
    eligible: &[bool],
) -> f64 {
    let mut total = 0usize;
    let mut differ = 0usize;
    for s in 0..policy.len() {
        if !eligible[s] {
            continue;
        }
        total += 1;
        if policy.action(s) != reference.action(s) {
            differ += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        differ as f64 / total as f64
    }
}

/// Project a deterministic policy to threshold form: per
/// `(activity, charging)` slice pick the battery cut flipping the fewest
/// states, breaking ties toward the larger cut (the thriftier policy).
pub fn project_threshold(
    policy: &DeterministicPolicy,
    space: &StateSpace,
) -> DeterministicPolicy {
    let levels = space.battery_levels();
    let mut actions = policy.actions.clone();
    for (activity, charging) in space.slices() {
        let slice: Vec<bool> = (0..levels)
            .map(|b| {
                policy
                    .action(space.index(State::new(activity, charging, b)))
                    .is_active()
            })
            .collect();
        let mut best_cut = levels;
        let mut best_cost = usize::MAX;
        for cut in 0..=levels {
            let cost = slice
                .iter()
                .enumerate()
                .filter(|(b, active)| (*b >= cut) != **active)
                .count();
            if cost <= best_cost {
                best_cost = cost;
                best_cut = cut;
            }
        }
        for b in 0..levels {
            let index = space.index(State::new(activity, charging, b));
            actions[index] = if b >= best_cut {
                Action::Active
            } else {
                Action::Sleep
            };
        }
    }
    DeterministicPolicy { actions }
}

/// Checkpoint-projection extension: force the action gap
/// `Q(active) - Q(sleep)` to be non-increasing in the battery level by
/// pool-adjacent-violators on each slice, adjusting the active entries.
fn project_gaps_monotone(q: &mut QTable, space: &StateSpace) {
    let levels = space.battery_levels();
    for (activity, charging) in space.slices() {
        let indices: Vec<usize> = (0..levels)
            .map(|b| space.index(State::new(activity, charging, b)))
            .collect();
        let gaps: Vec<f64> = indices.iter().map(|&s| q.gap(s)).collect();
        // PAV for a non-increasing fit: negate, fit non-decreasing, negate.
        let mut pooled: Vec<(f64, usize)> = Vec::with_capacity(levels);
        for &g in &gaps {
            let mut value = -g;
            let mut weight = 1usize;
            while let Some(&(prev, w)) = pooled.last() {
                if prev > value {
                    pooled.pop();
                    value = (prev * w as f64 + value * weight as f64) / (w + weight) as f64;
                    weight += w;
                } else {
                    break;
                }
            }
            pooled.push((value, weight));
        }
        let mut fitted = Vec::with_capacity(levels);
        for (value, weight) in pooled {
            for _ in 0..weight {
                fitted.push(-value);
            }
        }
        for (b, &s) in indices.iter().enumerate() {
            let sleep = q.get(s, Action::Sleep);
            q.set(s, Action::Active, sleep + fitted[b]);
        }
    }
}
