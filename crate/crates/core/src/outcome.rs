//! Rollouts and the reach-avoid game outcome.
//!
//! The outcome of a trajectory with margin sequences `g_0..g_N`, `l_0..l_N` is
//!
//! ```text
//! max over tau in [0, N] of min{ l[tau], min over s in [0, tau] of g[s] }
//! ```
//!
//! A past failure caps every later term, so failures override future target
//! entries. The streaming evaluation below carries a running minimum of `g`
//! and is checked against the brute-force double loop in the property tests.
//!
//! Indexing note: the outcome here quantifies from index 0 (the initial state
//! counts); the runtime monitor in [`crate::filter`] quantifies from index 1,
//! as its step 0 is the measured state itself. Callers that need the monitor
//! convention evaluate the index-1 suffix via [`GameResult`] on sliced
//! sequences or [`Trajectory::result_from`].

use alloc::format;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::env::{all_finite, EnvSpec, MarginSpec};
use crate::error::Error;
use crate::policy::Policy;
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    /// The target set was reached without previously touching the failure set.
    Win,
    /// The failure set was hit at or before every target entry.
    Loss,
    /// Neither decided within the horizon. Monitors treat this as unsafe.
    Timeout,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameResult {
    pub outcome_value: f64,
    pub verdict: Verdict,
    /// First index with `l >= 0`, decided or not.
    pub first_target_step: Option<usize>,
    /// First index with `g < 0`.
    pub first_failure_step: Option<usize>,
}

/// Streaming evaluation of the reach-avoid outcome over margin sequences.
pub fn reach_avoid_outcome(g_seq: &[f64], ell_seq: &[f64]) -> Result<GameResult, Error> {
    if g_seq.is_empty() || ell_seq.is_empty() {
        return Err(Error::EmptyInput);
    }
    if g_seq.len() != ell_seq.len() {
        return Err(Error::ShapeMismatch { expected: g_seq.len(), got: ell_seq.len() });
    }
    let mut running_min_g = f64::INFINITY;
    let mut best = f64::NEG_INFINITY;
    let mut first_target = None;
    let mut first_failure = None;
    let mut won = false;
    for (k, (&g, &l)) in g_seq.iter().zip(ell_seq).enumerate() {
        running_min_g = running_min_g.min(g);
        best = best.max(l.min(running_min_g));
        if g < 0.0 && first_failure.is_none() {
            first_failure = Some(k);
        }
        if l >= 0.0 {
            if first_target.is_none() {
                first_target = Some(k);
            }
            if running_min_g >= 0.0 {
                won = true;
            }
        }
    }
    let verdict = if won {
        Verdict::Win
    } else if first_failure.is_some() {
        Verdict::Loss
    } else {
        Verdict::Timeout
    };
    Ok(GameResult {
        outcome_value: best,
        verdict,
        first_target_step: first_target,
        first_failure_step: first_failure,
    })
}

/// A rolled-out closed-loop trajectory with margins evaluated at every state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    pub disturbances: Vec<Vec<f64>>,
    pub g_seq: Vec<f64>,
    pub ell_seq: Vec<f64>,
}

impl Trajectory {
    /// Number of steps taken (states are one longer).
    pub fn horizon(&self) -> usize {
        self.controls.len()
    }

    pub fn result(&self) -> Result<GameResult, Error> {
        reach_avoid_outcome(&self.g_seq, &self.ell_seq)
    }

    /// Outcome of the suffix starting at `start` (monitor convention uses 1).
    pub fn result_from(&self, start: usize) -> Result<GameResult, Error> {
        if start >= self.g_seq.len() {
            return Err(Error::EmptyInput);
        }
        reach_avoid_outcome(&self.g_seq[start..], &self.ell_seq[start..])
    }

    pub fn last_state(&self) -> &[f64] {
        self.states.last().expect("trajectory has at least the initial state")
    }
}

/// When a rollout may stop before the horizon.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopRule {
    /// Stop at the first failure or the first target entry (the verdict is
    /// then decided either way).
    ReachAvoid,
    /// Stop at the first failure only.
    FailureOnly,
    /// Always run the full horizon.
    Never,
}

/// Closed-loop simulation for at most `horizon` steps.
pub fn rollout(
    env: &EnvSpec,
    margins: &MarginSpec,
    x0: &[f64],
    ctrl: &mut dyn Policy,
    dstb: &mut dyn Policy,
    horizon: usize,
    rng: &mut Rng,
    stop: StopRule,
) -> Result<Trajectory, Error> {
    assert!(horizon >= 1, "rollout horizon must be at least 1");
    let (g0, l0) = margins.margins(x0)?;
    let mut traj = Trajectory {
        states: alloc::vec![x0.to_vec()],
        controls: Vec::new(),
        disturbances: Vec::new(),
        g_seq: alloc::vec![g0],
        ell_seq: alloc::vec![l0],
    };
    if decided(stop, g0, l0) {
        return Ok(traj);
    }
    for k in 0..horizon {
        let x = traj.states.last().unwrap().clone();
        let u = ctrl.act(&x, rng);
        if !all_finite(&u) {
            return Err(Error::NonFiniteAction { policy: format!("ctrl"), step: k });
        }
        let d = dstb.act(&x, rng);
        if !all_finite(&d) {
            return Err(Error::NonFiniteAction { policy: format!("dstb"), step: k });
        }
        let x_next = env.step(&x, &u, &d)?;
        let (g, l) = margins.margins(&x_next)?;
        traj.controls.push(env.clamp_ctrl(&u));
        traj.disturbances.push(env.clamp_dstb(&d));
        traj.states.push(x_next);
        traj.g_seq.push(g);
        traj.ell_seq.push(l);
        if decided(stop, g, l) {
            break;
        }
    }
    Ok(traj)
}

fn decided(stop: StopRule, g: f64, l: f64) -> bool {
    match stop {
        StopRule::ReachAvoid => g < 0.0 || l >= 0.0,
        StopRule::FailureOnly => g < 0.0,
        StopRule::Never => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::double_integrator;
    use crate::policy::{FnPolicy, ZeroPolicy};
    use alloc::vec;

    #[test]
    fn outcome_win_example() {
        let r = reach_avoid_outcome(&[0.2, 0.3], &[-1.0, 0.5]).unwrap();
        assert_eq!(r.verdict, Verdict::Win);
        assert!((r.outcome_value - 0.2).abs() < 1e-15);
        assert_eq!(r.first_target_step, Some(1));
        assert_eq!(r.first_failure_step, None);
    }

    #[test]
    fn outcome_loss_example() {
        // The failure at s=1 caps every later tau.
        let r = reach_avoid_outcome(&[0.2, -0.1, 0.4], &[-1.0, -1.0, 0.6]).unwrap();
        assert_eq!(r.verdict, Verdict::Loss);
        assert!((r.outcome_value - (-0.1)).abs() < 1e-15);
        assert_eq!(r.first_failure_step, Some(1));
    }

    #[test]
    fn outcome_timeout() {
        let r = reach_avoid_outcome(&[0.5, 0.4], &[-0.2, -0.1]).unwrap();
        assert_eq!(r.verdict, Verdict::Timeout);
        assert!(r.outcome_value < 0.0);
        assert_eq!(r.first_failure_step, None);
    }

    #[test]
    fn outcome_win_before_failure() {
        // Target reached safely at tau=1; later failure does not undo it.
        let r = reach_avoid_outcome(&[0.2, 0.1, -0.5], &[-1.0, 0.3, 0.3]).unwrap();
        assert_eq!(r.verdict, Verdict::Win);
        assert!(r.outcome_value >= 0.0);
    }

    #[test]
    fn outcome_rejects_empty_and_mismatch() {
        assert_eq!(reach_avoid_outcome(&[], &[]), Err(Error::EmptyInput));
        assert!(reach_avoid_outcome(&[0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn rollout_win_at_origin() {
        let (env, margins) = double_integrator(&Default::default());
        let mut ctrl = FnPolicy(|x: &[f64]| vec![-4.0 * x[0] - 3.0 * x[1]]);
        let mut dstb = ZeroPolicy(1);
        let mut rng = Rng::seed_from_u64(0);
        let traj = rollout(
            &env,
            &margins,
            &[0.0, 0.0],
            &mut ctrl,
            &mut dstb,
            50,
            &mut rng,
            StopRule::ReachAvoid,
        )
        .unwrap();
        // Already in the target: zero-step trajectory, Win at tau=0.
        assert_eq!(traj.horizon(), 0);
        assert_eq!(traj.result().unwrap().verdict, Verdict::Win);
    }

    #[test]
    fn rollout_one_step_loss_bound() {
        // From p=0.99, v=1.0 the position exceeds 1 in one step for any
        // admissible u, d: p1 >= 0.99 + 0.1 * (1.0 - 0.13) > 1.
        let (env, margins) = double_integrator(&Default::default());
        let mut ctrl = ConstantMax(-1.0);
        let mut dstb = ConstantMax(-0.3);
        let mut rng = Rng::seed_from_u64(0);
        let traj = rollout(
            &env,
            &margins,
            &[0.99, 1.0],
            &mut ctrl,
            &mut dstb,
            10,
            &mut rng,
            StopRule::ReachAvoid,
        )
        .unwrap();
        assert_eq!(traj.horizon(), 1);
        assert_eq!(traj.result().unwrap().verdict, Verdict::Loss);
    }

    struct ConstantMax(f64);
    impl Policy for ConstantMax {
        fn act(&mut self, _x: &[f64], _rng: &mut Rng) -> Vec<f64> {
            vec![self.0]
        }
    }

    #[test]
    fn rollout_deterministic_replay() {
        let (env, margins) = double_integrator(&Default::default());
        let run = || {
            let mut ctrl = FnPolicy(|_: &[f64]| vec![0.5]);
            let mut dstb = FnPolicy(|_: &[f64]| vec![-0.1]);
            let mut rng = Rng::seed_from_u64(4);
            rollout(
                &env,
                &margins,
                &[0.3, -0.2],
                &mut ctrl,
                &mut dstb,
                30,
                &mut rng,
                StopRule::Never,
            )
            .unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn rollout_replay_reproduces_states() {
        // Replaying the recorded (x, u, d) sequence through step reproduces
        // the stored states bit-exactly.
        let (env, margins) = double_integrator(&Default::default());
        let mut ctrl = FnPolicy(|x: &[f64]| vec![0.9 * x[1] - 0.4 * x[0]]);
        let mut dstb = FnPolicy(|x: &[f64]| vec![0.2 * x[0]]);
        let mut rng = Rng::seed_from_u64(8);
        let traj = rollout(
            &env,
            &margins,
            &[0.2, 0.1],
            &mut ctrl,
            &mut dstb,
            40,
            &mut rng,
            StopRule::Never,
        )
        .unwrap();
        for k in 0..traj.horizon() {
            let next = env
                .step(&traj.states[k], &traj.controls[k], &traj.disturbances[k])
                .unwrap();
            assert_eq!(next, traj.states[k + 1]);
        }
    }

    #[test]
    fn rollout_nonfinite_policy_error() {
        let (env, margins) = double_integrator(&Default::default());
        let mut ctrl = FnPolicy(|_: &[f64]| vec![f64::NAN]);
        let mut dstb = ZeroPolicy(1);
        let mut rng = Rng::seed_from_u64(0);
        let err = rollout(
            &env,
            &margins,
            &[0.5, 0.0],
            &mut ctrl,
            &mut dstb,
            5,
            &mut rng,
            StopRule::Never,
        )
        .unwrap_err();
        match err {
            Error::NonFiniteAction { policy, step } => {
                assert_eq!(policy, "ctrl");
                assert_eq!(step, 0);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn early_termination_preserves_verdict() {
        let (env, margins) = double_integrator(&Default::default());
        let mk = |stop| {
            let mut ctrl = FnPolicy(|x: &[f64]| vec![-4.0 * x[0] - 3.0 * x[1]]);
            let mut dstb = FnPolicy(|_: &[f64]| vec![0.3]);
            let mut rng = Rng::seed_from_u64(2);
            rollout(&env, &margins, &[0.6, 0.4], &mut ctrl, &mut dstb, 80, &mut rng, stop)
                .unwrap()
        };
        let early = mk(StopRule::ReachAvoid);
        let full = mk(StopRule::Never);
        assert_eq!(
            early.result().unwrap().verdict,
            full.result().unwrap().verdict
        );
    }
}
