//! The feasible randomized policy as a per-decision blend of two threshold
//! policies solved at perturbed multipliers, with the blend weight chosen so
//! the interpolated data usage meets the budget.

use thiserror::Error;

use crate::dp::{self, DeterministicPolicy, DpError, ThresholdTable};
use crate::lp::StationarySolution;
use crate::model::SensingModel;
use crate::sim::{self, SimError, TrajectoryStats};

/// Value-iteration settings for the two component solves.
pub const VI_TOL: f64 = 1e-8;
pub const VI_MAX_SWEEPS: usize = 1_000_000;

#[derive(Debug, Clone, Error)]
pub enum MixtureError {
    #[error("perturbation must satisfy 0 < delta <= lambda_star (lambda {lambda_star}, delta {delta_lambda})")]
    InvalidPerturbation { lambda_star: f64, delta_lambda: f64 },
    #[error("both components have identical usage {usage}, above the budget; no blend is feasible")]
    DegenerateMixture { usage: f64 },
    #[error("component policy at multiplier {lambda} is not a battery threshold")]
    ComponentNotThreshold { lambda: f64, source: DpError },
    #[error(transparent)]
    Dp(#[from] DpError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// How the blend weight was determined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MixtureStatus {
    /// Interpolation landed strictly inside `[0, 1]`.
    Regular,
    /// The low-multiplier component already fits the budget, so the blend
    /// degenerates to it alone.
    SlackAtLowSide,
    /// Numerical noise pushed the raw weight outside `[0, 1]`; it was
    /// clamped. The raw value is retained for diagnostics.
    Clamped { raw: f64 },
}

/// Two threshold policies at `lambda_star ± delta_lambda` and the mixing
/// probability of the high-multiplier (thriftier) component.
#[derive(Debug, Clone)]
pub struct MixturePolicy {
    /// Component at `lambda_star + delta_lambda`.
    pub pi_plus: DeterministicPolicy,
    /// Component at `lambda_star - delta_lambda`.
    pub pi_minus: DeterministicPolicy,
    /// Probability of acting with `pi_plus` at each epoch.
    pub gamma: f64,
    pub delta_lambda: f64,
    /// Long-run data usage of each component alone.
    pub usage_plus: f64,
    pub usage_minus: f64,
    pub status: MixtureStatus,
    /// Threshold form of the components.
    pub cuts_plus: ThresholdTable,
    pub cuts_minus: ThresholdTable,
}

impl MixturePolicy {
    /// The induced stationary randomized policy: at every epoch the active
    /// probability is `gamma * pi_plus + (1 - gamma) * pi_minus`.
    pub fn blended(&self) -> sim::Policy {
        sim::Policy::blend(
            &sim::Policy::from_deterministic(&self.pi_plus),
            &sim::Policy::from_deterministic(&self.pi_minus),
            self.gamma,
        )
    }
}

/// Solve the two perturbed relaxations and pick the blend weight
/// `gamma = (usage_minus - budget) / (usage_minus - usage_plus)`, clamped to
/// `[0, 1]`.
pub fn build_mixture(
    model: &SensingModel,
    lambda_star: f64,
    delta_lambda: f64,
    beta: f64,
) -> Result<MixturePolicy, MixtureError> {
    if !(delta_lambda > 0.0) || lambda_star - delta_lambda < 0.0 {
        return Err(MixtureError::InvalidPerturbation {
            lambda_star,
            delta_lambda,
        });
    }
    let (pi_plus, cuts_plus, usage_plus) =
        component(model, lambda_star + delta_lambda, beta)?;
    let (pi_minus, cuts_minus, usage_minus) =
        component(model, lambda_star - delta_lambda, beta)?;

    let budget = model.budget();
    let spread = usage_minus - usage_plus;
    let (gamma, status) = if usage_minus <= budget {
        (0.0, MixtureStatus::SlackAtLowSide)
    } else if spread.abs() < 1e-12 {
        return Err(MixtureError::DegenerateMixture { usage: usage_minus });
    } else {
        let raw = (usage_minus - budget) / spread;
        if (0.0..=1.0).contains(&raw) {
            (raw, MixtureStatus::Regular)
        } else {
            (raw.clamp(0.0, 1.0), MixtureStatus::Clamped { raw })
        }
    };

    Ok(MixturePolicy {
        pi_plus,
        pi_minus,
        gamma,
        delta_lambda,
        usage_plus,
        usage_minus,
        status,
        cuts_plus,
        cuts_minus,
    })
}

fn component(
    model: &SensingModel,
    lambda: f64,
    beta: f64,
) -> Result<(DeterministicPolicy, ThresholdTable, f64), MixtureError> {
    let vi = dp::value_iteration(model, lambda, beta, VI_TOL, VI_MAX_SWEEPS)?;
    let cuts = dp::extract_threshold(&vi.policy, &model.space())
        .map_err(|source| MixtureError::ComponentNotThreshold { lambda, source })?;
    let policy = sim::Policy::from_deterministic(&vi.policy);
    let phi = sim::stationary_distribution(model, &policy)?;
    Ok((vi.policy, cuts, phi.data_usage(model)))
}

/// Evaluate the blended policy exactly: stationary distribution of the
/// induced chain and the two long-run costs.
pub fn mixture_as_stationary(
    model: &SensingModel,
    mixture: &MixturePolicy,
) -> Result<StationarySolution, MixtureError> {
    let phi = sim::stationary_distribution(model, &mixture.blended())?;
    Ok(StationarySolution::from_measure(model, phi))
}

/// Simulate the one-shot reading of the blend: a single coin at time zero
/// selects which component runs the whole trajectory. Pairs with the
/// per-decision semantics of [`MixturePolicy::blended`] for comparison.
pub fn simulate_one_shot(
    model: &SensingModel,
    mixture: &MixturePolicy,
    epochs: u64,
    seed: u64,
) -> Result<TrajectoryStats, MixtureError> {
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    let mut coin = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let component = if coin.random::<f64>() < mixture.gamma {
        &mixture.pi_plus
    } else {
        &mixture.pi_minus
    };
    let policy = sim::Policy::from_deterministic(component);
    Ok(sim::simulate(model, &policy, epochs, seed.wrapping_add(1))?)
}

/// Convenience: number of states where the two components disagree.
pub fn disagreement_count(mixture: &MixturePolicy) -> usize {
    mixture
        .pi_plus
        .actions
        .iter()
        .zip(mixture.pi_minus.actions.iter())
        .filter(|(a, b)| a != b)
        .count()
}

/// Battery cuts never drop as the multiplier rises: a dearer data price only
/// postpones activation.
pub fn cuts_ordered(mixture: &MixturePolicy) -> bool {
    mixture
        .cuts_plus
        .cuts
        .iter()
        .zip(mixture.cuts_minus.cuts.iter())
        .all(|(plus, minus)| plus >= minus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lagrange;
    use crate::model::{SensingModel, StateSpace};
    use alloc::vec;

    fn small_model(budget: f64) -> SensingModel {
        SensingModel::from_activity_params(
            StateSpace::new(2, 6),
            vec![0.7, 0.3, 0.4, 0.6],
            0.3,
            &[0.3, 0.15],
            &[0.5, 0.7],
            1.0,
            budget,
            0.95,
        )
        .unwrap()
    }

    fn lambda_star(model: &SensingModel) -> f64 {
        match lagrange::estimate_lambda(model, 0.1, 1e-4, 400) {
            Ok(trace) => trace.lambda_star,
            Err(lagrange::LagrangeError::NotConverged { trace }) => trace.lambda_star,
            Err(other) => panic!("multiplier search failed: {other}"),
        }
    }

    #[test]
    fn gamma_midpoint_arithmetic() {
        // usage(minus)=0.4, usage(plus)=0.1, budget 0.25 -> gamma = 0.5
        let gamma: f64 = (0.4 - 0.25) / (0.4 - 0.1);
        assert!((gamma - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_perturbations() {
        let model = small_model(0.2);
        assert!(matches!(
            build_mixture(&model, 0.05, 0.1, 0.95),
            Err(MixtureError::InvalidPerturbation { .. })
        ));
        assert!(matches!(
            build_mixture(&model, 0.05, 0.0, 0.95),
            Err(MixtureError::InvalidPerturbation { .. })
        ));
    }

    #[test]
    fn blend_interpolates_between_components() {
        let model = small_model(0.18);
        let ls = lambda_star(&model);
        if ls < 0.01 {
            // budget not binding on this instance; nothing to blend
            return;
        }
        let mixture = build_mixture(&model, ls, 0.01, 0.95).unwrap();
        let solution = mixture_as_stationary(&model, &mixture).unwrap();
        let low = mixture.usage_plus.min(mixture.usage_minus) - 1e-9;
        let high = mixture.usage_plus.max(mixture.usage_minus) + 1e-9;
        assert!(
            solution.data_usage >= low && solution.data_usage <= high,
            "usage {} outside [{low}, {high}]",
            solution.data_usage
        );
        assert!(cuts_ordered(&mixture));
    }

    #[test]
    fn gamma_zero_is_low_component_alone() {
        let model = small_model(0.18);
        let ls = lambda_star(&model).max(0.02);
        let mut mixture = build_mixture(&model, ls, 0.01, 0.95).unwrap();
        mixture.gamma = 0.0;
        let blended = mixture_as_stationary(&model, &mixture).unwrap();
        let minus = sim::stationary_distribution(
            &model,
            &sim::Policy::from_deterministic(&mixture.pi_minus),
        )
        .unwrap();
        assert!((blended.data_usage - minus.data_usage(&model)).abs() < 1e-10);

        mixture.gamma = 1.0;
        let blended = mixture_as_stationary(&model, &mixture).unwrap();
        let plus = sim::stationary_distribution(
            &model,
            &sim::Policy::from_deterministic(&mixture.pi_plus),
        )
        .unwrap();
        assert!((blended.data_usage - plus.data_usage(&model)).abs() < 1e-10);
    }

    #[test]
    fn slack_low_side_flags_and_degenerates() {
        // generous budget: both components under budget -> gamma 0, flagged
        let model = small_model(2.0);
        let mixture = build_mixture(&model, 0.5, 0.01, 0.95).unwrap();
        assert_eq!(mixture.gamma, 0.0);
        assert_eq!(mixture.status, MixtureStatus::SlackAtLowSide);
    }

    #[test]
    fn components_stay_threshold_for_standard_perturbations() {
        let model = small_model(0.18);
        let ls = lambda_star(&model).max(0.03);
        for delta in [0.005, 0.01, 0.02] {
            let mixture = build_mixture(&model, ls, delta, 0.95).unwrap();
            assert!(cuts_ordered(&mixture), "delta {delta}");
        }
    }

    #[test]
    fn one_shot_simulation_is_reproducible() {
        let model = small_model(0.18);
        let ls = lambda_star(&model).max(0.02);
        let mixture = build_mixture(&model, ls, 0.01, 0.95).unwrap();
        let a = simulate_one_shot(&model, &mixture, 2_000, 5).unwrap();
        let b = simulate_one_shot(&model, &mixture, 2_000, 5).unwrap();
        assert_eq!(a, b);
    }
}
