//! Shared simulation traits: policies over patient states and one-step
//! transition samplers (the true synthetic environment and the learned
//! ensemble both implement the latter, so rollout and evaluation code is
//! written once).

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::{ActionClass, PatientState, N_ACTIONS};
use crate::error::Result;

/// A stochastic discrete policy.
pub trait Policy {
    /// Probability of each action class in the given state.
    fn action_probs(&self, state: &PatientState) -> [f64; N_ACTIONS];

    /// Sample an action from the policy's distribution (inverse CDF).
    fn sample_action(&self, state: &PatientState, rng: &mut ChaCha8Rng) -> ActionClass {
        let probs = self.action_probs(state);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (k, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return ActionClass::new(k).expect("probs length matches N_ACTIONS");
            }
        }
        ActionClass::new(N_ACTIONS - 1).unwrap()
    }

    /// Highest-probability action, ties to the lowest index.
    fn greedy_action(&self, state: &PatientState) -> ActionClass {
        let probs = self.action_probs(state);
        let mut best = 0;
        for k in 1..N_ACTIONS {
            if probs[k] > probs[best] {
                best = k;
            }
        }
        ActionClass::new(best).unwrap()
    }
}

/// One-step transition model: next state and reward for a (state, action).
pub trait TransitionSampler {
    fn sample_step(
        &self,
        state: &PatientState,
        action: ActionClass,
        rng: &mut ChaCha8Rng,
    ) -> Result<(PatientState, f64)>;
}

/// A per-step reward function over (state, action) pairs.
pub trait RewardModel {
    fn reward(&self, state: &PatientState, action: ActionClass) -> Result<f64>;
}

/// Uniform-random baseline policy.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformRandomPolicy;

impl Policy for UniformRandomPolicy {
    fn action_probs(&self, _state: &PatientState) -> [f64; N_ACTIONS] {
        [1.0 / N_ACTIONS as f64; N_ACTIONS]
    }
}

/// Wrap a policy so all probability mass sits on its greedy action.
pub struct GreedyPolicy<'a, P: Policy>(pub &'a P);

impl<P: Policy> Policy for GreedyPolicy<'_, P> {
    fn action_probs(&self, state: &PatientState) -> [f64; N_ACTIONS] {
        let mut probs = [0.0; N_ACTIONS];
        probs[self.0.greedy_action(state).index()] = 1.0;
        probs
    }
}
