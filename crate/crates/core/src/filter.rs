//! The gameplay safety filter: before permitting task actions, simulate a
//! match between the safety fallback and a worst-case adversary, and override
//! the task whenever the simulated match is lost.
//!
//! The monitor plays the candidate task policy for the first `L` steps of an
//! `H`-step rollout, the fallback afterwards, with every simulated disturbance
//! drawn from the adversary. Under the reach-avoid criterion it allows iff the
//! rollout reaches the target set without previously touching the failure set,
//! quantifying over simulated steps 1..=H (the measured state itself is step 0
//! and is not consulted). The avoid-only variant merely requires staying out
//! of the failure set for `H` steps.
//!
//! Monitor rollouts must be deterministic: learned actors enter as mean-action
//! policies, so a denial's returned rollout is replayable evidence.
//!
//! The block scheduler [`run_filtered`] accounts for rollout computation
//! latency: a monitor call issued at time `kL` first simulates `L` steps of
//! the currently-active policy (the block in flight), then evaluates the
//! candidate, and its verdict governs the window `[(k+1)L, (k+2)L)`. The very
//! first block runs the fallback, as no verdict exists yet.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::env::{EnvSpec, MarginSpec};
use crate::error::Error;
use crate::nnet::{ActorPolicy, Mlp, StochasticPolicy};
use crate::outcome::Trajectory;
use crate::policy::Policy;
use crate::rng::Rng;
use crate::tasks::Task;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    ReachAvoid,
    AvoidOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    /// Monitor horizon in steps.
    pub horizon: usize,
    /// Decision block length; 1 recovers per-step filtering.
    pub latency_block: usize,
    pub criterion: Criterion,
    /// Threshold of the critic-filter baseline.
    pub critic_threshold: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            horizon: 50,
            latency_block: 5,
            criterion: Criterion::ReachAvoid,
            critic_threshold: 0.0,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if self.latency_block < 1 || self.latency_block > self.horizon {
            return Err(Error::BadConfig(String::from(
                "latency block must satisfy 1 <= L <= horizon",
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MonitorReason {
    ReachedTarget,
    HitFailure,
    Timeout,
}

/// Monitor output plus the simulated rollout as replayable evidence.
#[derive(Clone, Debug)]
pub struct MonitorVerdict {
    pub allow: bool,
    pub reason: MonitorReason,
    /// Simulated step index (1-based) at which the verdict was decided; the
    /// horizon itself for timeouts.
    pub decisive_step: usize,
    pub rollout: Trajectory,
}

/// Fallback composition: the learned safety actor outside the target set, the
/// invariant controller inside it.
pub fn shield_action(x: &[f64], ctrl_actor: &StochasticPolicy, margins: &MarginSpec) -> Vec<f64> {
    if margins.in_target(x) {
        margins.invariant_ctrl(x)
    } else {
        ctrl_actor.mean_action(x).expect("state dimension matches actor input")
    }
}

/// Wraps any policy with the target-set switch of the fallback: inside T the
/// invariant controller takes over.
pub struct Shield<P> {
    pub inner: P,
    pub margins: MarginSpec,
}

impl<P: Policy> Policy for Shield<P> {
    fn act(&mut self, x: &[f64], rng: &mut Rng) -> Vec<f64> {
        if self.margins.in_target(x) {
            self.margins.invariant_ctrl(x)
        } else {
            self.inner.act(x, rng)
        }
    }

    fn reset(&mut self) {
        self.inner.reset()
    }
}

/// Rollout-based safety monitor over deterministic fallback and adversary
/// policies.
pub struct GameplayMonitor {
    pub env: EnvSpec,
    pub margins: MarginSpec,
    pub cfg: FilterConfig,
    fallback: Box<dyn Policy + Send>,
    adversary: Box<dyn Policy + Send>,
}

impl GameplayMonitor {
    /// Standard composition from a trained actor pair: the fallback is the
    /// shielded mean-action control actor, the adversary the mean-action
    /// disturbance actor.
    pub fn from_actors(
        env: EnvSpec,
        margins: MarginSpec,
        ctrl_actor: StochasticPolicy,
        dstb_actor: StochasticPolicy,
        cfg: FilterConfig,
    ) -> Result<Self, Error> {
        let fallback = Shield { inner: ActorPolicy::deterministic(ctrl_actor), margins: margins.clone() };
        Self::with_policies(env, margins, Box::new(fallback), Box::new(ActorPolicy::deterministic(dstb_actor)), cfg)
    }

    /// Substitute arbitrary deterministic policies (e.g. grid-solver optimal
    /// pairs) for the learned actors.
    pub fn with_policies(
        env: EnvSpec,
        margins: MarginSpec,
        fallback: Box<dyn Policy + Send>,
        adversary: Box<dyn Policy + Send>,
        cfg: FilterConfig,
    ) -> Result<Self, Error> {
        cfg.validate()?;
        Ok(GameplayMonitor { env, margins, cfg, fallback, adversary })
    }

    pub fn fallback_action(&mut self, x: &[f64], rng: &mut Rng) -> Vec<f64> {
        self.fallback.act(x, rng)
    }

    /// Simulate the switched rollout from `x` and judge it under the
    /// configured criterion. Policies are reset first; the task drives the
    /// first `latency_block` simulated steps.
    pub fn monitor(&mut self, x: &[f64], task: &mut dyn Policy) -> Result<MonitorVerdict, Error> {
        task.reset();
        self.fallback.reset();
        self.adversary.reset();
        // Deterministic rollout; the generator only satisfies the interface.
        let mut rng = Rng::seed_from_u64(0);
        let (g0, l0) = self.margins.margins(x)?;
        let mut traj = Trajectory {
            states: alloc::vec![x.to_vec()],
            controls: Vec::new(),
            disturbances: Vec::new(),
            g_seq: alloc::vec![g0],
            ell_seq: alloc::vec![l0],
        };
        let h = self.cfg.horizon;
        for tau in 0..h {
            let x_cur = traj.states.last().unwrap().clone();
            let u = if tau < self.cfg.latency_block {
                let a = task.act(&x_cur, &mut rng);
                if !crate::env::all_finite(&a) {
                    return Err(Error::NonFiniteAction { policy: String::from("task"), step: tau });
                }
                a
            } else {
                self.fallback.act(&x_cur, &mut rng)
            };
            let d = self.adversary.act(&x_cur, &mut rng);
            if !crate::env::all_finite(&d) {
                return Err(Error::NonFiniteAction { policy: String::from("adversary"), step: tau });
            }
            let x_next = self.env.step(&x_cur, &u, &d)?;
            let (g, l) = self.margins.margins(&x_next)?;
            traj.controls.push(self.env.clamp_ctrl(&u));
            traj.disturbances.push(self.env.clamp_dstb(&d));
            traj.states.push(x_next);
            traj.g_seq.push(g);
            traj.ell_seq.push(l);
            let step = tau + 1;
            if g < 0.0 {
                return Ok(MonitorVerdict {
                    allow: false,
                    reason: MonitorReason::HitFailure,
                    decisive_step: step,
                    rollout: traj,
                });
            }
            if self.cfg.criterion == Criterion::ReachAvoid && l >= 0.0 {
                // No failure occurred at any earlier simulated step, so this
                // entry is safe.
                return Ok(MonitorVerdict {
                    allow: true,
                    reason: MonitorReason::ReachedTarget,
                    decisive_step: step,
                    rollout: traj,
                });
            }
        }
        Ok(MonitorVerdict {
            allow: self.cfg.criterion == Criterion::AvoidOnly,
            reason: MonitorReason::Timeout,
            decisive_step: h,
            rollout: traj,
        })
    }

    /// The per-step switching rule: the task action when the monitor allows,
    /// the fallback otherwise.
    pub fn filter_step(
        &mut self,
        x: &[f64],
        task: &mut dyn Policy,
    ) -> Result<(Vec<f64>, MonitorVerdict), Error> {
        let verdict = self.monitor(x, task)?;
        task.reset();
        let mut rng = Rng::seed_from_u64(0);
        let action = if verdict.allow { task.act(x, &mut rng) } else { self.fallback.act(x, &mut rng) };
        Ok((action, verdict))
    }
}

/// Issues one verdict per decision block; scripted implementations exist only
/// in tests.
pub trait BlockMonitor {
    fn decide(
        &mut self,
        x_measured: &[f64],
        active_is_task: bool,
        task: &mut dyn Policy,
    ) -> Result<MonitorVerdict, Error>;

    fn latency_block(&self) -> usize;
}

impl BlockMonitor for GameplayMonitor {
    /// Bridge the in-flight block: simulate `L` steps of the currently-active
    /// policy from the measured state, then monitor the candidate from there.
    fn decide(
        &mut self,
        x_measured: &[f64],
        active_is_task: bool,
        task: &mut dyn Policy,
    ) -> Result<MonitorVerdict, Error> {
        let mut rng = Rng::seed_from_u64(0);
        task.reset();
        self.fallback.reset();
        self.adversary.reset();
        let mut x = x_measured.to_vec();
        for _ in 0..self.cfg.latency_block {
            let u = if active_is_task {
                task.act(&x, &mut rng)
            } else {
                self.fallback.act(&x, &mut rng)
            };
            let d = self.adversary.act(&x, &mut rng);
            x = self.env.step(&x, &u, &d)?;
        }
        self.monitor(&x, task)
    }

    fn latency_block(&self) -> usize {
        self.cfg.latency_block
    }
}

/// Which policy drove each executed step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActiveLabel {
    Task,
    Fallback,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BlockDecision {
    /// Time step at which the monitor call was issued.
    pub issued_at: usize,
    pub allow: bool,
    pub reason: MonitorReason,
    pub decisive_step: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunStats {
    /// No failure-set entry over the executed episode.
    pub safe: bool,
    pub steps: usize,
    /// Steps where the executed action differed from the task's proposal.
    pub interventions: usize,
    pub monitor_calls: usize,
    /// Task-specific progress metric over the executed trajectory.
    pub progress: f64,
    /// Per-step labels, aligned with the trajectory's controls.
    pub labels: Vec<ActiveLabel>,
}

impl RunStats {
    pub fn intervention_freq(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.interventions as f64 / self.steps as f64
        }
    }
}

/// Execute one episode under the L-step schedule against a real disturbance
/// source. Stops early if the failure set is hit.
#[allow(clippy::too_many_arguments)]
pub fn run_filtered(
    env: &EnvSpec,
    margins: &MarginSpec,
    task: &mut dyn Task,
    fallback: &mut dyn Policy,
    monitor: &mut dyn BlockMonitor,
    x0: &[f64],
    episode_len: usize,
    rng: &mut Rng,
    dstb_source: &mut dyn Policy,
) -> Result<(Trajectory, RunStats, Vec<BlockDecision>), Error> {
    let block = monitor.latency_block();
    assert!(episode_len >= block, "episode must cover at least one block");
    let (g0, l0) = margins.margins(x0)?;
    let mut traj = Trajectory {
        states: alloc::vec![x0.to_vec()],
        controls: Vec::new(),
        disturbances: Vec::new(),
        g_seq: alloc::vec![g0],
        ell_seq: alloc::vec![l0],
    };
    let mut stats = RunStats {
        safe: true,
        steps: 0,
        interventions: 0,
        monitor_calls: 0,
        progress: 0.0,
        labels: Vec::new(),
    };
    let mut decisions = Vec::new();
    let mut active_is_task = false; // first block runs the fallback
    let mut pending: Option<bool> = None;
    for k in 0..episode_len {
        let x = traj.states.last().unwrap().clone();
        if k % block == 0 {
            if k > 0 {
                active_is_task = pending.take().expect("verdict pending at block boundary");
            }
            let verdict = monitor.decide(&x, active_is_task, task)?;
            stats.monitor_calls += 1;
            decisions.push(BlockDecision {
                issued_at: k,
                allow: verdict.allow,
                reason: verdict.reason,
                decisive_step: verdict.decisive_step,
            });
            pending = Some(verdict.allow);
        }
        let proposal = task.act(&x, rng);
        if !crate::env::all_finite(&proposal) {
            return Err(Error::NonFiniteAction { policy: String::from("task"), step: k });
        }
        let executed = if active_is_task { proposal.clone() } else { fallback.act(&x, rng) };
        if executed != proposal {
            stats.interventions += 1;
        }
        stats.labels.push(if active_is_task { ActiveLabel::Task } else { ActiveLabel::Fallback });
        let d = dstb_source.act(&x, rng);
        let x_next = env.step(&x, &executed, &d)?;
        let (g, l) = margins.margins(&x_next)?;
        traj.controls.push(env.clamp_ctrl(&executed));
        traj.disturbances.push(env.clamp_dstb(&d));
        traj.states.push(x_next);
        traj.g_seq.push(g);
        traj.ell_seq.push(l);
        stats.steps += 1;
        if g < 0.0 {
            stats.safe = false;
            break;
        }
    }
    stats.progress = task.progress(&traj);
    Ok((traj, stats, decisions))
}

/// Value-based baseline: allow the task action iff the critic's game value at
/// `(x, task_action, adversary_mean)` clears the threshold.
pub fn critic_filter_step(
    x: &[f64],
    task_action: &[f64],
    critic: &Mlp,
    dstb_actor: &StochasticPolicy,
    threshold: f64,
    fallback_action: &[f64],
) -> Result<(Vec<f64>, bool), Error> {
    let d_hat = dstb_actor.mean_action(x)?;
    let q = crate::isaacs::critic_value(critic, x, task_action, &d_hat)?;
    if q >= threshold {
        Ok((task_action.to_vec(), true))
    } else {
        Ok((fallback_action.to_vec(), false))
    }
}

/// The gameplay filter as a self-contained closed-loop policy (block schedule
/// included), for stress-testing and matrix evaluation.
pub struct GameplayFilterPolicy {
    monitor: GameplayMonitor,
    task: Box<dyn Policy + Send>,
    step_in_episode: usize,
    active_is_task: bool,
    pending: Option<bool>,
}

impl GameplayFilterPolicy {
    pub fn new(monitor: GameplayMonitor, task: Box<dyn Policy + Send>) -> Self {
        GameplayFilterPolicy {
            monitor,
            task,
            step_in_episode: 0,
            active_is_task: false,
            pending: None,
        }
    }
}

impl Policy for GameplayFilterPolicy {
    fn act(&mut self, x: &[f64], rng: &mut Rng) -> Vec<f64> {
        let block = self.monitor.cfg.latency_block;
        if self.step_in_episode % block == 0 {
            if self.step_in_episode > 0 {
                self.active_is_task = self.pending.take().unwrap_or(false);
            }
            let verdict = self
                .monitor
                .decide(x, self.active_is_task, &mut self.task)
                .expect("monitor rollout over finite policies");
            self.pending = Some(verdict.allow);
        }
        self.step_in_episode += 1;
        if self.active_is_task {
            self.task.act(x, rng)
        } else {
            self.monitor.fallback_action(x, rng)
        }
    }

    fn reset(&mut self) {
        self.step_in_episode = 0;
        self.active_is_task = false;
        self.pending = None;
        self.task.reset();
    }
}

/// The critic filter as a closed-loop policy.
pub struct CriticFilterPolicy {
    pub critic: Mlp,
    pub dstb_actor: StochasticPolicy,
    pub threshold: f64,
    pub task: Box<dyn Policy + Send>,
    pub fallback: Box<dyn Policy + Send>,
}

impl Policy for CriticFilterPolicy {
    fn act(&mut self, x: &[f64], rng: &mut Rng) -> Vec<f64> {
        let proposal = self.task.act(x, rng);
        let fallback = self.fallback.act(x, rng);
        let (action, _) = critic_filter_step(
            x,
            &proposal,
            &self.critic,
            &self.dstb_actor,
            self.threshold,
            &fallback,
        )
        .expect("critic evaluation over finite inputs");
        action
    }

    fn reset(&mut self) {
        self.task.reset();
        self.fallback.reset();
    }
}
