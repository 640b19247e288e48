//! Adversarial reach-avoid actor-critic self-play: a control actor, a
//! disturbance actor, and a game critic are trained jointly against the
//! simulator, ISAACS-style. The same engine also runs the sparse-reward
//! baselines and (with a frozen control scheme) the bespoke stress-test
//! adversary training in [`crate::bust`].
//!
//! The critic regresses onto the discounted reach-avoid target
//!
//! ```text
//! y = gamma * min{ g', max{ l', Q_target(x', u', d') } } + (1 - gamma) * min{ l', g' }
//! ```
//!
//! with `u', d'` sampled from the current actors at the successor state. The
//! control actor descends `E[-Q(x, u~, d) + alpha_u log pi(u~|x)]` with `d`
//! taken from the replayed transition; the disturbance actor descends
//! `E[Q(x, u, d~) + alpha_d log pi(d~|x)]` with `u` from the transition.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::env::{sample_box, EnvSpec, Interval, MarginSpec};
use crate::error::Error;
use crate::nnet::{
    adam_step, polyak_update, AdamState, Mlp, MlpGrad, StochasticPolicy,
};
use crate::policy::Policy;
use crate::rng::{Rng, RngState};

/// One recorded gameplay step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub d: Vec<f64>,
    pub x_next: Vec<f64>,
    /// Target margin at the successor state.
    pub ell_next: f64,
    /// Failure margin at the successor state.
    pub g_next: f64,
}

/// Bounded ring of transitions with uniform replay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    data: Vec<TransitionRecord>,
    capacity: usize,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        ReplayBuffer { data: Vec::new(), capacity, next: 0 }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, rec: TransitionRecord) {
        if self.data.len() < self.capacity {
            self.data.push(rec);
        } else {
            self.data[self.next] = rec;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn get(&self, i: usize) -> &TransitionRecord {
        &self.data[i]
    }

    pub fn records(&self) -> &[TransitionRecord] {
        &self.data
    }

    /// Uniform indices with replacement; deterministic given the generator.
    pub fn sample_indices(&self, n: usize, rng: &mut Rng) -> Vec<usize> {
        (0..n).map(|_| rng.index(self.data.len())).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    Linear,
    Exponential,
}

/// Scalar hyperparameter schedule over training steps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub start: f64,
    pub end: f64,
    /// Steps over which the value moves from `start` to `end`.
    pub horizon: usize,
    pub kind: ScheduleKind,
}

impl Schedule {
    pub fn constant(v: f64) -> Self {
        Schedule { start: v, end: v, horizon: 0, kind: ScheduleKind::Constant }
    }

    pub fn at(&self, step: usize) -> f64 {
        match self.kind {
            ScheduleKind::Constant => self.start,
            _ if self.horizon == 0 => self.end,
            ScheduleKind::Linear => {
                let t = (step as f64 / self.horizon as f64).min(1.0);
                self.start + (self.end - self.start) * t
            }
            ScheduleKind::Exponential => {
                let t = (step as f64 / self.horizon as f64).min(1.0);
                self.start * libm::pow(self.end / self.start, t)
            }
        }
    }
}

/// What the critic regresses onto and who supplies disturbances.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Reach-avoid self-play: adversarial disturbance, capture ends episodes.
    ReachAvoid,
    /// Sparse reward (+1 in T, -1 in F), disturbance drawn uniformly from D.
    SparseSingle,
    /// Sparse reward with an adversarially trained disturbance actor.
    SparseAdversarial,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub total_steps: usize,
    /// Environment steps before gradient updates begin.
    pub warmup_steps: usize,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub gamma: Schedule,
    pub alpha_ctrl: Schedule,
    pub alpha_dstb: Schedule,
    /// Control actor updates once per this many disturbance updates.
    pub tau_ratio: usize,
    pub polyak: f64,
    /// Step cap per episode.
    pub episode_cap: usize,
    /// Environment steps between evaluations (0 disables).
    pub eval_period: usize,
    pub eval_episodes: usize,
    pub leaderboard_k: usize,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    /// Box for uniform exploration resets; empty means deploy-box only.
    pub explore_box: Vec<Interval>,
    /// Fraction of episodes reset from the deployment box (rest uniform over
    /// `explore_box`).
    pub deploy_reset_frac: f64,
    pub objective: Objective,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            total_steps: 200_000,
            warmup_steps: 1_000,
            batch_size: 256,
            buffer_capacity: 1_000_000,
            lr_actor: 3e-4,
            lr_critic: 3e-4,
            gamma: Schedule { start: 0.85, end: 0.999, horizon: 100_000, kind: ScheduleKind::Linear },
            alpha_ctrl: Schedule { start: 0.1, end: 0.005, horizon: 200_000, kind: ScheduleKind::Exponential },
            alpha_dstb: Schedule { start: 0.1, end: 0.005, horizon: 200_000, kind: ScheduleKind::Exponential },
            tau_ratio: 2,
            polyak: 5e-3,
            episode_cap: 200,
            eval_period: 10_000,
            eval_episodes: 100,
            leaderboard_k: 5,
            actor_hidden: vec![256, 256, 256],
            critic_hidden: vec![128, 128, 128],
            explore_box: Vec::new(),
            deploy_reset_frac: 0.5,
            objective: Objective::ReachAvoid,
        }
    }
}

impl TrainConfig {
    /// Desk-scale defaults for the built-in low-dimensional environments:
    /// small networks, short schedules, all knobs still overridable.
    pub fn desk(total_steps: usize, explore_box: Vec<Interval>) -> Self {
        TrainConfig {
            total_steps,
            warmup_steps: 500,
            batch_size: 64,
            buffer_capacity: 200_000,
            gamma: Schedule {
                start: 0.85,
                end: 0.999,
                horizon: total_steps / 2,
                kind: ScheduleKind::Linear,
            },
            alpha_ctrl: Schedule {
                start: 0.05,
                end: 0.003,
                horizon: total_steps,
                kind: ScheduleKind::Exponential,
            },
            alpha_dstb: Schedule {
                start: 0.05,
                end: 0.003,
                horizon: total_steps,
                kind: ScheduleKind::Exponential,
            },
            episode_cap: 120,
            eval_period: (total_steps / 20).max(1),
            eval_episodes: 50,
            actor_hidden: vec![48, 48],
            critic_hidden: vec![48, 48],
            explore_box,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.tau_ratio < 1 {
            return Err(Error::BadConfig(String::from("tau_ratio must be >= 1")));
        }
        if !(self.polyak > 0.0 && self.polyak <= 1.0) {
            return Err(Error::BadConfig(String::from("polyak must be in (0, 1]")));
        }
        if !(self.gamma.start > 0.0 && self.gamma.start < 1.0)
            || !(self.gamma.end > 0.0 && self.gamma.end < 1.0)
        {
            return Err(Error::BadConfig(String::from("gamma must stay in (0, 1)")));
        }
        if self.batch_size == 0 || self.episode_cap == 0 {
            return Err(Error::BadConfig(String::from("batch_size and episode_cap must be positive")));
        }
        Ok(())
    }
}

/// Ranked snapshot of an actor together with everything needed to reproduce
/// its evaluation score exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    pub policy: StochasticPolicy,
    /// The opposing policy used during the scoring run.
    pub opponent: StochasticPolicy,
    /// Safe rate for control entries, unsafe rate for disturbance entries.
    pub score: f64,
    pub step: usize,
    pub eval_seed: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Leaderboard {
    pub ctrl: Vec<LeaderboardEntry>,
    pub dstb: Vec<LeaderboardEntry>,
}

impl Leaderboard {
    fn insert(list: &mut Vec<LeaderboardEntry>, entry: LeaderboardEntry, k: usize) {
        list.push(entry);
        list.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap_or(core::cmp::Ordering::Equal));
        list.truncate(k);
    }
}

/// Episode in progress, carried inside checkpoints so a resumed run continues
/// bit-exactly where it stopped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeState {
    pub x: Vec<f64>,
    pub steps: usize,
    /// 0 = live adversary, i+1 = disturbance leaderboard entry i.
    pub opponent: usize,
}

/// Complete training state: parameters, optimizers, replay, leaderboard, and
/// the generator position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub ctrl_actor: StochasticPolicy,
    pub dstb_actor: StochasticPolicy,
    pub critic: Mlp,
    pub target_critic: Mlp,
    pub opt_ctrl: AdamState,
    pub opt_dstb: AdamState,
    pub opt_critic: AdamState,
    pub config: TrainConfig,
    pub seed: u64,
    pub step: usize,
    pub cum_violations: u64,
    pub update_rounds: u64,
    pub leaderboard: Leaderboard,
    pub episode: Option<EpisodeState>,
    pub replay: ReplayBuffer,
    pub rng_state: RngState,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub critic_loss: f64,
    pub ctrl_loss: f64,
    pub dstb_loss: f64,
    pub eval_safe_rate: f64,
    pub cum_violations: u64,
    pub gamma: f64,
    pub alpha_ctrl: f64,
    pub alpha_dstb: f64,
}

pub struct TrainOutput {
    pub checkpoint: PolicyCheckpoint,
    pub metrics: Vec<MetricsRow>,
    /// Populated when training stopped early on a non-finite diagnostic; the
    /// checkpoint still reflects the state at the abort.
    pub aborted: Option<String>,
}

/// Critic input layout is the concatenation `(x, u, d)`.
pub fn critic_input(x: &[f64], u: &[f64], d: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(x.len() + u.len() + d.len());
    v.extend_from_slice(x);
    v.extend_from_slice(u);
    v.extend_from_slice(d);
    v
}

pub fn critic_value(critic: &Mlp, x: &[f64], u: &[f64], d: &[f64]) -> Result<f64, Error> {
    Ok(critic.forward(&critic_input(x, u, d))?[0])
}

/// Discounted reach-avoid regression target for one transition.
pub fn critic_target(
    rec: &TransitionRecord,
    gamma: f64,
    target_critic: &Mlp,
    ctrl_actor: &StochasticPolicy,
    dstb_actor: &StochasticPolicy,
    rng: &mut Rng,
) -> Result<f64, Error> {
    let (u_next, _) = ctrl_actor.sample(&rec.x_next, rng)?;
    let (d_next, _) = dstb_actor.sample(&rec.x_next, rng)?;
    let q = critic_value(target_critic, &rec.x_next, &u_next, &d_next)?;
    Ok(reach_avoid_target(gamma, rec.g_next, rec.ell_next, q))
}

/// The closed-form composition of the reach-avoid target.
pub fn reach_avoid_target(gamma: f64, g_next: f64, ell_next: f64, q_next: f64) -> f64 {
    gamma * g_next.min(ell_next.max(q_next)) + (1.0 - gamma) * ell_next.min(g_next)
}

/// Sparse reward: +1 inside T, -1 inside F, 0 elsewhere.
pub fn sparse_reward(g: f64, ell: f64) -> f64 {
    if g < 0.0 {
        -1.0
    } else if ell >= 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Standard discounted-sum target for the sparse-reward baselines. Failure is
/// terminal (no bootstrap past it).
pub fn sparse_target(
    rec: &TransitionRecord,
    gamma: f64,
    target_critic: &Mlp,
    ctrl_actor: &StochasticPolicy,
    dstb_next: &mut dyn FnMut(&[f64], &mut Rng) -> Result<Vec<f64>, Error>,
    rng: &mut Rng,
) -> Result<f64, Error> {
    let r = sparse_reward(rec.g_next, rec.ell_next);
    if rec.g_next < 0.0 {
        return Ok(r);
    }
    let (u_next, _) = ctrl_actor.sample(&rec.x_next, rng)?;
    let d_next = dstb_next(&rec.x_next, rng)?;
    let q = critic_value(target_critic, &rec.x_next, &u_next, &d_next)?;
    Ok(r + gamma * q)
}

/// Mean squared deviation from precomputed targets and its exact gradient.
pub fn critic_loss_grad(
    critic: &Mlp,
    batch: &[(&TransitionRecord, f64)],
) -> Result<(f64, MlpGrad), Error> {
    if batch.is_empty() {
        return Err(Error::EmptyInput);
    }
    let scale = 1.0 / batch.len() as f64;
    let mut grad = MlpGrad::zeros_like(critic);
    let mut loss = 0.0;
    for (rec, y) in batch {
        let input = critic_input(&rec.x, &rec.u, &rec.d);
        let acts = critic.forward_cached(&input)?;
        let err = acts.output()[0] - y;
        loss += err * err * scale;
        let (g, _) = critic.backward(&acts, &[2.0 * err * scale])?;
        grad.add_scaled(&g, 1.0);
    }
    if !loss.is_finite() {
        return Err(Error::NonFiniteTensor { tensor: String::from("critic loss") });
    }
    Ok((loss, grad))
}

/// One Adam step on the mean squared deviation from precomputed targets.
/// Returns the pre-step loss.
pub fn critic_update_on_targets(
    critic: &mut Mlp,
    batch: &[(&TransitionRecord, f64)],
    opt: &mut AdamState,
) -> Result<f64, Error> {
    let (loss, grad) = critic_loss_grad(critic, batch)?;
    adam_step(critic, &grad, opt)?;
    Ok(loss)
}

/// Which actor an update touches; decides the critic input slot and the sign
/// on the critic term (the control actor maximizes Q, the disturbance actor
/// minimizes it).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActorSide {
    Ctrl,
    Dstb,
}

/// Entropy-regularized policy-gradient loss and exact gradient against an
/// arbitrary differentiable action-value `q`: given `(x, action, other)`,
/// `q` returns the value and its gradient with respect to this actor's
/// action. The reparameterization noise `z_batch` is supplied by the caller,
/// which makes the loss a deterministic function of the parameters (finite
/// differences validate it directly).
pub fn actor_loss_grad<Q>(
    actor: &StochasticPolicy,
    batch: &[(&[f64], &[f64])],
    z_batch: &[Vec<f64>],
    side: ActorSide,
    alpha: f64,
    mut q: Q,
) -> Result<(f64, MlpGrad), Error>
where
    Q: FnMut(&[f64], &[f64], &[f64]) -> Result<(f64, Vec<f64>), Error>,
{
    if batch.is_empty() {
        return Err(Error::EmptyInput);
    }
    let q_sign = match side {
        ActorSide::Ctrl => -1.0,
        ActorSide::Dstb => 1.0,
    };
    let scale = 1.0 / batch.len() as f64;
    let act_dim = actor.act_dim();
    let mut grad = MlpGrad::zeros_like(&actor.trunk);
    let mut loss = 0.0;
    for ((x, other), z) in batch.iter().zip(z_batch) {
        let acts = actor.trunk.forward_cached(x)?;
        let (mean, log_std, std_clamped) = actor.heads(acts.output());
        let s = actor.sample_from_heads(&mean, &log_std, &std_clamped, z);
        let (q_val, dq_da) = q(x, &s.action, other)?;
        loss += scale * (q_sign * q_val + alpha * s.log_prob);
        let mut upstream = vec![0.0; 2 * act_dim];
        for i in 0..act_dim {
            let th = libm::tanh(s.xi[i]);
            let half = 0.5 * (actor.act_hi[i] - actor.act_lo[i]);
            let da_dxi = half * (1.0 - th * th);
            let dl_dxi = q_sign * dq_da[i] * da_dxi + alpha * 2.0 * th;
            upstream[i] = scale * dl_dxi;
            let sigma = libm::exp(s.log_std[i]);
            let dl_dlogstd = if s.std_clamped[i] {
                0.0
            } else {
                dl_dxi * sigma * z[i] - alpha
            };
            upstream[act_dim + i] = scale * dl_dlogstd;
        }
        let (g, _) = actor.trunk.backward(&acts, &upstream)?;
        grad.add_scaled(&g, 1.0);
    }
    if !loss.is_finite() {
        return Err(Error::NonFiniteTensor { tensor: String::from("actor loss") });
    }
    Ok((loss, grad))
}

/// Draw reparameterization noise and take one Adam step on the actor loss.
pub fn actor_update_with<Q>(
    actor: &mut StochasticPolicy,
    batch: &[(&[f64], &[f64])],
    side: ActorSide,
    alpha: f64,
    opt: &mut AdamState,
    rng: &mut Rng,
    q: Q,
) -> Result<f64, Error>
where
    Q: FnMut(&[f64], &[f64], &[f64]) -> Result<(f64, Vec<f64>), Error>,
{
    let act_dim = actor.act_dim();
    let z_batch: Vec<Vec<f64>> = (0..batch.len())
        .map(|_| {
            let mut z = vec![0.0; act_dim];
            rng.fill_normal(&mut z);
            z
        })
        .collect();
    let (loss, grad) = actor_loss_grad(actor, batch, &z_batch, side, alpha, q)?;
    adam_step(&mut actor.trunk, &grad, opt)?;
    Ok(loss)
}

/// Control-actor update on a replayed batch: the opposing disturbance comes
/// from the buffer record.
pub fn ctrl_actor_update(
    buffer: &ReplayBuffer,
    idx: &[usize],
    ctrl_actor: &mut StochasticPolicy,
    critic: &Mlp,
    alpha: f64,
    opt: &mut AdamState,
    rng: &mut Rng,
) -> Result<f64, Error> {
    let batch: Vec<(&[f64], &[f64])> =
        idx.iter().map(|&i| (buffer.get(i).x.as_slice(), buffer.get(i).d.as_slice())).collect();
    actor_update_with(ctrl_actor, &batch, ActorSide::Ctrl, alpha, opt, rng, |x, a, d| {
        let acts = critic.forward_cached(&critic_input(x, a, d))?;
        let (_, input_grad) = critic.backward(&acts, &[1.0])?;
        Ok((acts.output()[0], input_grad[x.len()..x.len() + a.len()].to_vec()))
    })
}

/// Disturbance-actor update on a replayed batch: the opposing control comes
/// from the buffer record.
pub fn dstb_actor_update(
    buffer: &ReplayBuffer,
    idx: &[usize],
    dstb_actor: &mut StochasticPolicy,
    critic: &Mlp,
    alpha: f64,
    opt: &mut AdamState,
    rng: &mut Rng,
) -> Result<f64, Error> {
    let batch: Vec<(&[f64], &[f64])> =
        idx.iter().map(|&i| (buffer.get(i).x.as_slice(), buffer.get(i).u.as_slice())).collect();
    actor_update_with(dstb_actor, &batch, ActorSide::Dstb, alpha, opt, rng, |x, a, u| {
        let acts = critic.forward_cached(&critic_input(x, u, a))?;
        let (_, input_grad) = critic.backward(&acts, &[1.0])?;
        let start = input_grad.len() - a.len();
        Ok((acts.output()[0], input_grad[start..].to_vec()))
    })
}

/// Isaacs-target critic regression on a replayed batch (targets from the
/// frozen target critic), one Adam step, pre-step loss returned.
#[allow(clippy::too_many_arguments)]
pub fn critic_update(
    buffer: &ReplayBuffer,
    idx: &[usize],
    critic: &mut Mlp,
    target_critic: &Mlp,
    ctrl_actor: &StochasticPolicy,
    dstb_actor: &StochasticPolicy,
    gamma: f64,
    opt: &mut AdamState,
    rng: &mut Rng,
) -> Result<f64, Error> {
    let mut targets = Vec::with_capacity(idx.len());
    for &i in idx {
        targets.push(critic_target(buffer.get(i), gamma, target_critic, ctrl_actor, dstb_actor, rng)?);
    }
    let batch: Vec<(&TransitionRecord, f64)> =
        idx.iter().zip(&targets).map(|(&i, &y)| (buffer.get(i), y)).collect();
    critic_update_on_targets(critic, &batch, opt)
}

/// Failure-free fraction over seeded episodes of two deterministic policies.
pub fn evaluate_safe_rate(
    env: &EnvSpec,
    margins: &MarginSpec,
    ctrl: &mut dyn Policy,
    dstb: &mut dyn Policy,
    episodes: usize,
    episode_cap: usize,
    seed: u64,
) -> Result<f64, Error> {
    let mut base = Rng::seed_from_u64(seed);
    let mut safe = 0usize;
    for _ in 0..episodes {
        let mut rng = base.split();
        let x0 = env.sample_initial(&mut rng);
        ctrl.reset();
        dstb.reset();
        let traj = crate::outcome::rollout(
            env,
            margins,
            &x0,
            ctrl,
            dstb,
            episode_cap,
            &mut rng,
            crate::outcome::StopRule::FailureOnly,
        )?;
        if traj.g_seq.iter().all(|&g| g >= 0.0) {
            safe += 1;
        }
    }
    Ok(safe as f64 / episodes as f64)
}

// ---------------------------------------------------------------------------
// Training engine
// ---------------------------------------------------------------------------

pub(crate) struct EngineOpts<'a> {
    pub update_ctrl: bool,
    pub update_dstb: bool,
    /// Frozen closed-loop control source replacing the live actor (stress
    /// tests).
    pub ctrl_override: Option<&'a mut dyn Policy>,
}

fn reset_state(env: &EnvSpec, margins: &MarginSpec, cfg: &TrainConfig, rng: &mut Rng) -> Vec<f64> {
    for _ in 0..100 {
        let x = if cfg.explore_box.is_empty() || rng.flip(cfg.deploy_reset_frac) {
            env.sample_initial(rng)
        } else {
            sample_box(&cfg.explore_box, rng)
        };
        // Episodes never start inside the failure set.
        if !margins.in_failure(&x) {
            return x;
        }
    }
    env.sample_initial(rng)
}

pub(crate) fn run_engine(
    env: &EnvSpec,
    margins: &MarginSpec,
    cfg: &TrainConfig,
    seed: u64,
    init: Option<PolicyCheckpoint>,
    mut opts: EngineOpts<'_>,
) -> Result<TrainOutput, Error> {
    cfg.validate()?;
    let mut ck = match init {
        Some(ck) => ck,
        None => {
            let mut rng = Rng::seed_from_u64(seed);
            let ctrl_actor = StochasticPolicy::new(
                env.state_dim,
                env.ctrl_bounds.iter().map(|iv| iv.lo).collect(),
                env.ctrl_bounds.iter().map(|iv| iv.hi).collect(),
                &cfg.actor_hidden,
                &mut rng,
            );
            let dstb_actor = StochasticPolicy::new(
                env.state_dim,
                env.dstb_bounds.iter().map(|iv| iv.lo).collect(),
                env.dstb_bounds.iter().map(|iv| iv.hi).collect(),
                &cfg.actor_hidden,
                &mut rng,
            );
            let mut critic_sizes = vec![env.state_dim + env.ctrl_dim + env.dstb_dim];
            critic_sizes.extend_from_slice(&cfg.critic_hidden);
            critic_sizes.push(1);
            let critic = Mlp::new(&critic_sizes, &mut rng);
            let target_critic = critic.clone();
            let opt_ctrl = AdamState::new(&ctrl_actor.trunk, cfg.lr_actor);
            let opt_dstb = AdamState::new(&dstb_actor.trunk, cfg.lr_actor);
            let opt_critic = AdamState::new(&critic, cfg.lr_critic);
            PolicyCheckpoint {
                ctrl_actor,
                dstb_actor,
                critic,
                target_critic,
                opt_ctrl,
                opt_dstb,
                opt_critic,
                config: cfg.clone(),
                seed,
                step: 0,
                cum_violations: 0,
                update_rounds: 0,
                leaderboard: Leaderboard::default(),
                episode: None,
                replay: ReplayBuffer::new(cfg.buffer_capacity),
                rng_state: rng.state(),
            }
        }
    };
    let mut rng = Rng::restore(&ck.rng_state);
    let mut metrics = Vec::new();
    let mut aborted = None;

    let mut loss_acc = LossAccumulator::default();
    let end_step = cfg.total_steps.max(ck.step);

    while ck.step < end_step {
        // --- episode bookkeeping -----------------------------------------
        let mut episode = match ck.episode.take() {
            Some(e) => e,
            None => {
                let x = reset_state(env, margins, cfg, &mut rng);
                let opponent = if matches!(cfg.objective, Objective::ReachAvoid)
                    && opts.ctrl_override.is_none()
                {
                    // Mitigate overfitting to the newest adversary: face a
                    // uniform draw from the leaderboard plus the live one.
                    rng.index(ck.leaderboard.dstb.len() + 1)
                } else {
                    0
                };
                EpisodeState { x, steps: 0, opponent }
            }
        };

        // --- one environment step ----------------------------------------
        let u = match opts.ctrl_override.as_mut() {
            Some(scheme) => env.clamp_ctrl(&scheme.act(&episode.x, &mut rng)),
            None => ck.ctrl_actor.sample(&episode.x, &mut rng)?.0,
        };
        let d = match cfg.objective {
            Objective::SparseSingle => sample_box(&env.dstb_bounds, &mut rng),
            _ => {
                // Entries may have been evicted since the episode started.
                let opp = if episode.opponent <= ck.leaderboard.dstb.len() {
                    episode.opponent
                } else {
                    0
                };
                if opp == 0 {
                    ck.dstb_actor.sample(&episode.x, &mut rng)?.0
                } else {
                    ck.leaderboard.dstb[opp - 1].policy.sample(&episode.x, &mut rng)?.0
                }
            }
        };
        let x_next = env.step(&episode.x, &u, &d)?;
        let (g_next, ell_next) = margins.margins(&x_next)?;
        ck.replay.push(TransitionRecord {
            x: core::mem::take(&mut episode.x),
            u,
            d,
            x_next: x_next.clone(),
            ell_next,
            g_next,
        });
        if g_next < 0.0 {
            ck.cum_violations += 1;
        }
        episode.steps += 1;
        let capture_ends = matches!(cfg.objective, Objective::ReachAvoid);
        let done = g_next < 0.0
            || (capture_ends && ell_next >= 0.0)
            || episode.steps >= cfg.episode_cap;
        if !done {
            episode.x = x_next;
            ck.episode = Some(episode);
        }
        ck.step += 1;

        // --- gradient updates ---------------------------------------------
        if ck.step >= cfg.warmup_steps && ck.replay.len() >= cfg.batch_size {
            let gamma = cfg.gamma.at(ck.step);
            let alpha_u = cfg.alpha_ctrl.at(ck.step);
            let alpha_d = cfg.alpha_dstb.at(ck.step);
            let idx = ck.replay.sample_indices(cfg.batch_size, &mut rng);

            let update = (|| -> Result<(f64, Option<f64>, Option<f64>), Error> {
                let mut targets = Vec::with_capacity(idx.len());
                for &i in &idx {
                    let rec = ck.replay.get(i);
                    let y = match cfg.objective {
                        Objective::ReachAvoid => critic_target(
                            rec,
                            gamma,
                            &ck.target_critic,
                            &ck.ctrl_actor,
                            &ck.dstb_actor,
                            &mut rng,
                        )?,
                        Objective::SparseSingle => {
                            let bounds = env.dstb_bounds.clone();
                            sparse_target(
                                rec,
                                gamma,
                                &ck.target_critic,
                                &ck.ctrl_actor,
                                &mut |_, r| Ok(sample_box(&bounds, r)),
                                &mut rng,
                            )?
                        }
                        Objective::SparseAdversarial => {
                            let dstb = &ck.dstb_actor;
                            sparse_target(
                                rec,
                                gamma,
                                &ck.target_critic,
                                &ck.ctrl_actor,
                                &mut |x, r| Ok(dstb.sample(x, r)?.0),
                                &mut rng,
                            )?
                        }
                    };
                    targets.push(y);
                }
                let batch: Vec<(&TransitionRecord, f64)> =
                    idx.iter().zip(&targets).map(|(&i, &y)| (ck.replay.get(i), y)).collect();
                let critic_loss = critic_update_on_targets(&mut ck.critic, &batch, &mut ck.opt_critic)?;
                polyak_update(&mut ck.target_critic, &ck.critic, cfg.polyak);

                let dstb_loss = if opts.update_dstb {
                    Some(dstb_actor_update(
                        &ck.replay,
                        &idx,
                        &mut ck.dstb_actor,
                        &ck.critic,
                        alpha_d,
                        &mut ck.opt_dstb,
                        &mut rng,
                    )?)
                } else {
                    None
                };
                ck.update_rounds += 1;
                let ctrl_loss = if opts.update_ctrl && ck.update_rounds % cfg.tau_ratio as u64 == 0 {
                    Some(ctrl_actor_update(
                        &ck.replay,
                        &idx,
                        &mut ck.ctrl_actor,
                        &ck.critic,
                        alpha_u,
                        &mut ck.opt_ctrl,
                        &mut rng,
                    )?)
                } else {
                    None
                };
                Ok((critic_loss, ctrl_loss, dstb_loss))
            })();
            match update {
                Ok((cl, ul, dl)) => loss_acc.push(cl, ul, dl),
                Err(e) => {
                    aborted = Some(alloc::format!("{e}"));
                    break;
                }
            }
        }

        // --- periodic evaluation and leaderboard ---------------------------
        if cfg.eval_period > 0 && ck.step % cfg.eval_period == 0 {
            let eval_seed = rng.next_u64();
            let safe_rate = run_eval(env, margins, cfg, &mut ck, &mut opts, eval_seed)?;
            if opts.ctrl_override.is_some() {
                // Evaluating a stateful scheme resets its internal state, so
                // the in-flight episode cannot continue coherently.
                ck.episode = None;
            }
            let row = MetricsRow {
                step: ck.step,
                critic_loss: loss_acc.mean_critic(),
                ctrl_loss: loss_acc.mean_ctrl(),
                dstb_loss: loss_acc.mean_dstb(),
                eval_safe_rate: safe_rate,
                cum_violations: ck.cum_violations,
                gamma: cfg.gamma.at(ck.step),
                alpha_ctrl: cfg.alpha_ctrl.at(ck.step),
                alpha_dstb: cfg.alpha_dstb.at(ck.step),
            };
            metrics.push(row);
            loss_acc = LossAccumulator::default();
        }
    }

    ck.rng_state = rng.state();
    ck.config = cfg.clone();
    Ok(TrainOutput { checkpoint: ck, metrics, aborted })
}

/// Leaderboard evaluation: mean-action policies, fixed seed, scores stored
/// with the exact opponent so they can be reproduced later.
fn run_eval(
    env: &EnvSpec,
    margins: &MarginSpec,
    cfg: &TrainConfig,
    ck: &mut PolicyCheckpoint,
    opts: &mut EngineOpts<'_>,
    eval_seed: u64,
) -> Result<f64, Error> {
    use crate::nnet::ActorPolicy;
    let best_dstb = ck
        .leaderboard
        .dstb
        .first()
        .map(|e| e.policy.clone())
        .unwrap_or_else(|| ck.dstb_actor.clone());
    let safe_rate = match opts.ctrl_override.as_mut() {
        Some(scheme) => {
            let mut dstb = ActorPolicy::deterministic(best_dstb.clone());
            scheme.reset();
            let rate = evaluate_safe_rate(
                env,
                margins,
                &mut **scheme,
                &mut dstb,
                cfg.eval_episodes,
                cfg.episode_cap,
                eval_seed,
            )?;
            scheme.reset();
            rate
        }
        None => {
            let mut ctrl = ActorPolicy::deterministic(ck.ctrl_actor.clone());
            let mut dstb = ActorPolicy::deterministic(best_dstb.clone());
            evaluate_safe_rate(
                env,
                margins,
                &mut ctrl,
                &mut dstb,
                cfg.eval_episodes,
                cfg.episode_cap,
                eval_seed,
            )?
        }
    };
    if opts.ctrl_override.is_none() {
        Leaderboard::insert(
            &mut ck.leaderboard.ctrl,
            LeaderboardEntry {
                policy: ck.ctrl_actor.clone(),
                opponent: best_dstb,
                score: safe_rate,
                step: ck.step,
                eval_seed,
            },
            cfg.leaderboard_k,
        );
        // Disturbance snapshots score by how unsafe they make the best
        // stored controller (or the live one early on).
        let best_ctrl = ck
            .leaderboard
            .ctrl
            .first()
            .map(|e| e.policy.clone())
            .unwrap_or_else(|| ck.ctrl_actor.clone());
        let dstb_seed = eval_seed ^ 0x9e37_79b9_7f4a_7c15;
        let mut ctrl_pol = ActorPolicy::deterministic(best_ctrl.clone());
        let mut dstb_pol = ActorPolicy::deterministic(ck.dstb_actor.clone());
        let ctrl_safe = evaluate_safe_rate(
            env,
            margins,
            &mut ctrl_pol,
            &mut dstb_pol,
            cfg.eval_episodes,
            cfg.episode_cap,
            dstb_seed,
        )?;
        Leaderboard::insert(
            &mut ck.leaderboard.dstb,
            LeaderboardEntry {
                policy: ck.dstb_actor.clone(),
                opponent: best_ctrl,
                score: 1.0 - ctrl_safe,
                step: ck.step,
                eval_seed: dstb_seed,
            },
            cfg.leaderboard_k,
        );
    }
    Ok(safe_rate)
}

#[derive(Default)]
struct LossAccumulator {
    critic: (f64, u64),
    ctrl: (f64, u64),
    dstb: (f64, u64),
}

impl LossAccumulator {
    fn push(&mut self, critic: f64, ctrl: Option<f64>, dstb: Option<f64>) {
        self.critic.0 += critic;
        self.critic.1 += 1;
        if let Some(v) = ctrl {
            self.ctrl.0 += v;
            self.ctrl.1 += 1;
        }
        if let Some(v) = dstb {
            self.dstb.0 += v;
            self.dstb.1 += 1;
        }
    }

    fn mean(pair: (f64, u64)) -> f64 {
        if pair.1 == 0 {
            f64::NAN
        } else {
            pair.0 / pair.1 as f64
        }
    }

    fn mean_critic(&self) -> f64 {
        Self::mean(self.critic)
    }

    fn mean_ctrl(&self) -> f64 {
        Self::mean(self.ctrl)
    }

    fn mean_dstb(&self) -> f64 {
        Self::mean(self.dstb)
    }
}

/// Joint reach-avoid self-play of critic, control actor, and disturbance
/// actor.
pub fn train(
    env: &EnvSpec,
    margins: &MarginSpec,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutput, Error> {
    let mut cfg = cfg.clone();
    cfg.objective = Objective::ReachAvoid;
    run_engine(
        env,
        margins,
        &cfg,
        seed,
        None,
        EngineOpts { update_ctrl: true, update_dstb: true, ctrl_override: None },
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaselineMode {
    /// Controller only; disturbances drawn uniformly from D (domain
    /// randomization).
    Single,
    /// Both actors, sparse reward.
    Adversarial,
}

/// Same machinery with the reach-avoid target swapped for the discounted sum
/// of the sparse reward.
pub fn train_reward_baseline(
    env: &EnvSpec,
    margins: &MarginSpec,
    cfg: &TrainConfig,
    mode: BaselineMode,
    seed: u64,
) -> Result<TrainOutput, Error> {
    let mut cfg = cfg.clone();
    let (objective, update_dstb) = match mode {
        BaselineMode::Single => (Objective::SparseSingle, false),
        BaselineMode::Adversarial => (Objective::SparseAdversarial, true),
    };
    cfg.objective = objective;
    run_engine(
        env,
        margins,
        &cfg,
        seed,
        None,
        EngineOpts { update_ctrl: true, update_dstb, ctrl_override: None },
    )
}

/// Continue a run from its checkpoint; with the same config this reproduces
/// the uninterrupted run bit-exactly.
pub fn resume(
    env: &EnvSpec,
    margins: &MarginSpec,
    checkpoint: PolicyCheckpoint,
    total_steps: usize,
) -> Result<TrainOutput, Error> {
    let mut cfg = checkpoint.config.clone();
    cfg.total_steps = total_steps;
    let (update_ctrl, update_dstb) = match cfg.objective {
        Objective::SparseSingle => (true, false),
        _ => (true, true),
    };
    run_engine(
        env,
        margins,
        &cfg,
        checkpoint.seed,
        Some(checkpoint),
        EngineOpts { update_ctrl, update_dstb, ctrl_override: None },
    )
}
