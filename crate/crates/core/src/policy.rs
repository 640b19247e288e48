//! The policy abstraction shared by rollouts, trainers, filters, and the
//! stress-test harness.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::rng::Rng;

/// A (possibly stateful, possibly stochastic) map from states to actions.
///
/// Stateful implementations (e.g. the gameplay filter run as a closed-loop
/// controller) must return to their initial condition on `reset`.
pub trait Policy {
    fn act(&mut self, x: &[f64], rng: &mut Rng) -> Vec<f64>;

    fn reset(&mut self) {}
}

impl Policy for Box<dyn Policy + Send> {
    fn act(&mut self, x: &[f64], rng: &mut Rng) -> Vec<f64> {
        (**self).act(x, rng)
    }

    fn reset(&mut self) {
        (**self).reset()
    }
}

/// Always returns zeros.
pub struct ZeroPolicy(pub usize);

impl Policy for ZeroPolicy {
    fn act(&mut self, _x: &[f64], _rng: &mut Rng) -> Vec<f64> {
        vec![0.0; self.0]
    }
}

/// Always returns a fixed action.
pub struct ConstantPolicy(pub Vec<f64>);

impl Policy for ConstantPolicy {
    fn act(&mut self, _x: &[f64], _rng: &mut Rng) -> Vec<f64> {
        self.0.clone()
    }
}

/// Wraps a stateless closure.
pub struct FnPolicy<F: Fn(&[f64]) -> Vec<f64>>(pub F);

impl<F: Fn(&[f64]) -> Vec<f64>> Policy for FnPolicy<F> {
    fn act(&mut self, x: &[f64], _rng: &mut Rng) -> Vec<f64> {
        (self.0)(x)
    }
}

/// Replays a fixed action sequence, holding the last action once exhausted.
pub struct ActionSequencePolicy {
    actions: Vec<Vec<f64>>,
    cursor: usize,
}

impl ActionSequencePolicy {
    pub fn new(actions: Vec<Vec<f64>>) -> Self {
        assert!(!actions.is_empty(), "action sequence must be nonempty");
        ActionSequencePolicy { actions, cursor: 0 }
    }
}

impl Policy for ActionSequencePolicy {
    fn act(&mut self, _x: &[f64], _rng: &mut Rng) -> Vec<f64> {
        let i = self.cursor.min(self.actions.len() - 1);
        self.cursor += 1;
        self.actions[i].clone()
    }

    fn reset(&mut self) {
        self.cursor = 0;
    }
}
