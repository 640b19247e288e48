//! Scripted task policies for the built-in environments. These are
//! deliberately safety-agnostic (underdamped, gravity-blind) so the filters
//! have something worth overriding.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::env::EnvConfig;
use crate::outcome::Trajectory;
use crate::policy::Policy;
use crate::rng::Rng;

/// A task policy with a progress metric over executed trajectories (the
/// "distance" reported by sweeps).
pub trait Task: Policy {
    fn label(&self) -> &str;

    fn progress(&self, _traj: &Trajectory) -> f64 {
        0.0
    }
}

/// Zero action, zero ambition.
pub struct NullTask(pub usize);

impl Policy for NullTask {
    fn act(&mut self, _x: &[f64], _rng: &mut Rng) -> Vec<f64> {
        vec![0.0; self.0]
    }
}

impl Task for NullTask {
    fn label(&self) -> &str {
        "null"
    }
}

/// Double integrator: drive the position toward `goal` with a lightly damped
/// proportional law. Overshoots badly from far away, which is the point.
pub struct GoalSeekTask {
    pub goal: f64,
    pub kp: f64,
    pub kv: f64,
    pub ctrl_max: f64,
}

impl Default for GoalSeekTask {
    fn default() -> Self {
        GoalSeekTask { goal: 0.9, kp: 2.0, kv: 0.2, ctrl_max: 1.0 }
    }
}

impl Policy for GoalSeekTask {
    fn act(&mut self, x: &[f64], _rng: &mut Rng) -> Vec<f64> {
        let u = self.kp * (self.goal - x[0]) - self.kv * x[1];
        vec![u.max(-self.ctrl_max).min(self.ctrl_max)]
    }
}

impl Task for GoalSeekTask {
    fn label(&self) -> &str {
        "goal_seeker"
    }

    /// Net displacement toward the goal.
    fn progress(&self, traj: &Trajectory) -> f64 {
        let p0 = traj.states[0][0];
        let p_last = traj.last_state()[0];
        (p_last - p0) * (self.goal - p0).signum()
    }
}

/// Pendulum: hold an aggressive lean angle with gains too weak to dominate
/// gravity. Unstable on its own; survives only when something safer steps in.
pub struct LeanTask {
    pub theta_goal: f64,
    pub kp: f64,
    pub kd: f64,
    pub ctrl_max: f64,
}

impl Default for LeanTask {
    fn default() -> Self {
        LeanTask { theta_goal: 0.12, kp: 6.0, kd: 1.5, ctrl_max: 2.0 }
    }
}

impl Policy for LeanTask {
    fn act(&mut self, x: &[f64], _rng: &mut Rng) -> Vec<f64> {
        let u = self.kp * (self.theta_goal - x[0]) - self.kd * x[1];
        vec![u.max(-self.ctrl_max).min(self.ctrl_max)]
    }
}

impl Task for LeanTask {
    fn label(&self) -> &str {
        "lean"
    }

    /// Mean angular displacement toward the lean target.
    fn progress(&self, traj: &Trajectory) -> f64 {
        let mean: f64 =
            traj.states.iter().map(|x| x[0]).sum::<f64>() / traj.states.len() as f64;
        mean * self.theta_goal.signum()
    }
}

/// Planar quadrotor: shift sideways to an x-position goal while holding
/// altitude, with no regard for the wind budget.
pub struct HoverShiftTask {
    pub goal_x: f64,
    pub hover_alt: f64,
    pub gravity: f64,
    pub mass: f64,
    pub arm_over_inertia: f64,
    pub thrust_max: f64,
}

impl Default for HoverShiftTask {
    fn default() -> Self {
        HoverShiftTask {
            goal_x: 2.0,
            hover_alt: 1.2,
            gravity: 9.81,
            mass: 0.5,
            arm_over_inertia: 0.17 / 0.005,
            thrust_max: 5.0,
        }
    }
}

impl Policy for HoverShiftTask {
    fn act(&mut self, x: &[f64], _rng: &mut Rng) -> Vec<f64> {
        let ax_des = 1.5 * (self.goal_x - x[0]) - 1.0 * x[3];
        let az_des = -4.0 * (x[1] - self.hover_alt) - 4.0 * x[4];
        let theta_ref = (-ax_des / self.gravity).max(-0.5).min(0.5);
        let cos_t = libm::cos(x[2]).max(0.5);
        let total = (self.mass * (self.gravity + az_des) / cos_t).max(0.0);
        let torque_acc = -80.0 * (x[2] - theta_ref) - 18.0 * x[5];
        let diff = torque_acc / self.arm_over_inertia;
        let clamp = |t: f64| t.max(0.0).min(self.thrust_max);
        vec![clamp(0.5 * (total - diff)), clamp(0.5 * (total + diff))]
    }
}

impl Task for HoverShiftTask {
    fn label(&self) -> &str {
        "hover_shift"
    }

    fn progress(&self, traj: &Trajectory) -> f64 {
        let p0 = traj.states[0][0];
        let p_last = traj.last_state()[0];
        (p_last - p0) * (self.goal_x - p0).signum()
    }
}

/// The environment's default scripted task.
pub fn default_task(env: &EnvConfig) -> Box<dyn Task + Send> {
    match env {
        EnvConfig::DoubleIntegrator(p) => {
            Box::new(GoalSeekTask { ctrl_max: p.ctrl_max, ..Default::default() })
        }
        EnvConfig::Pendulum(p) => Box::new(LeanTask { ctrl_max: p.ctrl_max, ..Default::default() }),
        EnvConfig::PlanarQuadrotor(p) => Box::new(HoverShiftTask {
            hover_alt: p.hover_alt,
            gravity: p.gravity,
            mass: p.mass,
            arm_over_inertia: p.arm / p.inertia,
            thrust_max: p.thrust_max,
            ..Default::default()
        }),
    }
}

/// Task lookup by identifier, e.g. for server-side policy registration.
pub fn task_by_name(name: &str, env: &EnvConfig) -> Option<Box<dyn Task + Send>> {
    match name {
        "null" => {
            let (spec, _) = env.build();
            Some(Box::new(NullTask(spec.ctrl_dim)))
        }
        "default" => Some(default_task(env)),
        "goal_seeker" => match env {
            EnvConfig::DoubleIntegrator(p) => {
                Some(Box::new(GoalSeekTask { ctrl_max: p.ctrl_max, ..Default::default() }))
            }
            _ => None,
        },
        "lean" => match env {
            EnvConfig::Pendulum(p) => {
                Some(Box::new(LeanTask { ctrl_max: p.ctrl_max, ..Default::default() }))
            }
            _ => None,
        },
        "hover_shift" => match env {
            EnvConfig::PlanarQuadrotor(_) => Some(default_task(env)),
            _ => None,
        },
        _ => None,
    }
}

impl Policy for Box<dyn Task + Send> {
    fn act(&mut self, x: &[f64], rng: &mut Rng) -> Vec<f64> {
        (**self).act(x, rng)
    }

    fn reset(&mut self) {
        (**self).reset()
    }
}

impl Task for Box<dyn Task + Send> {
    fn label(&self) -> &str {
        (**self).label()
    }

    fn progress(&self, traj: &Trajectory) -> f64 {
        (**self).progress(traj)
    }
}
