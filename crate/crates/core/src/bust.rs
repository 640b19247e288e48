//! Bespoke ultimate stress test: train a specialized adversarial disturbance
//! against each frozen control scheme, then evaluate every (scheme, adversary)
//! pair on a shared set of initial states and report the safe-rate matrix.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::env::{EnvSpec, Interval, MarginSpec};
use crate::error::Error;
use crate::isaacs::{run_engine, EngineOpts, TrainConfig, TrainOutput};
use crate::nnet::{ActorPolicy, StochasticPolicy};
use crate::outcome::{rollout, StopRule};
use crate::policy::Policy;
use crate::rng::Rng;

/// A frozen closed-loop action source under test: the raw safety actor, the
/// task policy, or one of the filters wrapped as a policy.
pub struct ControlScheme {
    pub label: String,
    pub policy: Box<dyn Policy + Send>,
}

impl ControlScheme {
    pub fn new(label: &str, policy: Box<dyn Policy + Send>) -> Self {
        ControlScheme { label: String::from(label), policy }
    }

    /// The raw control actor playing mean actions.
    pub fn raw_actor(label: &str, actor: StochasticPolicy) -> Self {
        Self::new(label, Box::new(ActorPolicy::deterministic(actor)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RandomMode {
    /// Uniform draws componentwise over D.
    Uniform,
    /// Uniform over the corner set of D.
    Extreme,
}

pub fn random_disturbance(bounds: &[Interval], mode: RandomMode, rng: &mut Rng) -> Vec<f64> {
    match mode {
        RandomMode::Uniform => bounds.iter().map(|iv| iv.sample(rng)).collect(),
        RandomMode::Extreme => bounds
            .iter()
            .map(|iv| if iv.width() == 0.0 || rng.flip(0.5) { iv.lo } else { iv.hi })
            .collect(),
    }
}

/// Random disturbance source as a policy.
pub struct RandomDstb {
    pub bounds: Vec<Interval>,
    pub mode: RandomMode,
}

impl Policy for RandomDstb {
    fn act(&mut self, _x: &[f64], rng: &mut Rng) -> Vec<f64> {
        random_disturbance(&self.bounds, self.mode, rng)
    }
}

/// Train a disturbance actor (with a fresh critic) against a frozen control
/// scheme; the control side never updates.
pub fn train_bust_adversary(
    env: &EnvSpec,
    margins: &MarginSpec,
    scheme: &mut ControlScheme,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutput, Error> {
    let mut cfg = cfg.clone();
    cfg.objective = crate::isaacs::Objective::ReachAvoid;
    scheme.policy.reset();
    let out = run_engine(
        env,
        margins,
        &cfg,
        seed,
        None,
        EngineOpts {
            update_ctrl: false,
            update_dstb: true,
            ctrl_override: Some(&mut scheme.policy),
        },
    )?;
    scheme.policy.reset();
    Ok(out)
}

/// Safe rates over a shared initial-state set: rows are schemes, columns are
/// adversaries.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SafeRateMatrix {
    pub schemes: Vec<String>,
    pub adversaries: Vec<String>,
    pub rates: Vec<Vec<f64>>,
    pub episodes: usize,
    pub episode_len: usize,
    pub seed: u64,
}

impl SafeRateMatrix {
    pub fn rate(&self, scheme: &str, adversary: &str) -> Option<f64> {
        let i = self.schemes.iter().position(|s| s == scheme)?;
        let j = self.adversaries.iter().position(|a| a == adversary)?;
        Some(self.rates[i][j])
    }
}

/// A named adversary column.
pub struct Adversary {
    pub label: String,
    pub policy: Box<dyn Policy + Send>,
}

impl Adversary {
    pub fn new(label: &str, policy: Box<dyn Policy + Send>) -> Self {
        Adversary { label: String::from(label), policy }
    }
}

/// Play every (scheme, adversary) pair over the same `episodes` initial
/// states, sampled once from the deployment box. Cells use independently
/// derived generators, so any evaluation order gives identical results.
pub fn evaluate_matrix(
    env: &EnvSpec,
    margins: &MarginSpec,
    schemes: &mut [ControlScheme],
    adversaries: &mut [Adversary],
    episodes: usize,
    episode_len: usize,
    seed: u64,
) -> Result<SafeRateMatrix, Error> {
    assert!(episodes >= 1);
    let mut init_rng = Rng::seed_from_u64(seed);
    let starts: Vec<Vec<f64>> =
        (0..episodes).map(|_| env.sample_initial(&mut init_rng)).collect();
    let cols = adversaries.len();
    let mut rates = Vec::with_capacity(schemes.len());
    for (i, scheme) in schemes.iter_mut().enumerate() {
        let mut row = Vec::with_capacity(cols);
        for (j, adversary) in adversaries.iter_mut().enumerate() {
            let cell = (i * cols + j + 1) as u64;
            let mut cell_rng =
                Rng::seed_from_u64(seed ^ cell.wrapping_mul(0x9e37_79b9_7f4a_7c15));
            let mut safe = 0usize;
            for x0 in &starts {
                let mut ep_rng = cell_rng.split();
                scheme.policy.reset();
                adversary.policy.reset();
                let traj = rollout(
                    env,
                    margins,
                    x0,
                    &mut scheme.policy,
                    &mut adversary.policy,
                    episode_len,
                    &mut ep_rng,
                    StopRule::FailureOnly,
                )?;
                if traj.g_seq.iter().all(|&g| g >= 0.0) {
                    safe += 1;
                }
            }
            row.push(safe as f64 / episodes as f64);
        }
        rates.push(row);
    }
    Ok(SafeRateMatrix {
        schemes: schemes.iter().map(|s| s.label.clone()).collect(),
        adversaries: adversaries.iter().map(|a| a.label.clone()).collect(),
        rates,
        episodes,
        episode_len,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn extreme_draws_hit_corners() {
        let bounds = vec![Interval::symmetric(0.3)];
        let mut rng = Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let d = random_disturbance(&bounds, RandomMode::Extreme, &mut rng);
            assert!(d[0] == -0.3 || d[0] == 0.3);
        }
    }

    #[test]
    fn uniform_mean_near_midpoint() {
        let bounds = vec![Interval::new(0.1, 0.5)];
        let mut rng = Rng::seed_from_u64(2);
        let n = 100_000;
        let mean: f64 = (0..n)
            .map(|_| random_disturbance(&bounds, RandomMode::Uniform, &mut rng)[0])
            .sum::<f64>()
            / n as f64;
        assert!((mean - 0.3).abs() < 0.004, "mean {mean}");
    }

    #[test]
    fn degenerate_interval_always_zero() {
        let bounds = vec![Interval::new(0.0, 0.0)];
        let mut rng = Rng::seed_from_u64(3);
        for mode in [RandomMode::Uniform, RandomMode::Extreme] {
            for _ in 0..100 {
                assert_eq!(random_disturbance(&bounds, mode, &mut rng), vec![0.0]);
            }
        }
    }
}
