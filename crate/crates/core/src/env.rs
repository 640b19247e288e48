//! Benchmark environments: discrete-time controlled systems with bounded
//! disturbances, failure/target margins, and a stabilizing controller for the
//! target set.
//!
//! A system is a pair ([`EnvSpec`], [`MarginSpec`]). The dynamics map is a
//! deterministic `(x, u, d) -> x'`; controls and disturbances are clamped
//! componentwise to their bounds (actuator-saturation semantics). All built-in
//! environments integrate their continuous-time model with one semi-implicit
//! Euler step per call: velocities first, then positions with the updated
//! velocities.
//!
//! Sign conventions for the margins:
//! * failure margin `g`: `g(x) < 0` iff `x` is in the failure set `F`;
//! * target margin `l`: `l(x) >= 0` iff `x` is in the target set `T`.

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::rng::Rng;

/// Closed interval used for per-dimension bounds and boxes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn symmetric(half_width: f64) -> Self {
        Interval { lo: -half_width, hi: half_width }
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.max(self.lo).min(self.hi)
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn sample(&self, rng: &mut Rng) -> f64 {
        if self.width() == 0.0 {
            self.lo
        } else {
            rng.uniform(self.lo, self.hi)
        }
    }
}

/// Sample a point uniformly from an axis-aligned box.
pub fn sample_box(bounds: &[Interval], rng: &mut Rng) -> Vec<f64> {
    bounds.iter().map(|iv| iv.sample(rng)).collect()
}

/// Componentwise clamp of a vector to a box.
pub fn clamp_to(bounds: &[Interval], v: &[f64]) -> Vec<f64> {
    bounds.iter().zip(v).map(|(iv, &x)| iv.clamp(x)).collect()
}

pub fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

pub type DynamicsFn = Arc<dyn Fn(&[f64], &[f64], &[f64]) -> Vec<f64> + Send + Sync>;
pub type MarginFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type ControllerFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// A named discrete-time controlled system with disturbance.
///
/// Immutable after construction; safe to share across concurrent rollouts.
#[derive(Clone)]
pub struct EnvSpec {
    pub name: String,
    pub state_dim: usize,
    pub ctrl_dim: usize,
    pub dstb_dim: usize,
    /// Timestep in seconds of one `step` call.
    pub dt: f64,
    pub ctrl_bounds: Vec<Interval>,
    pub dstb_bounds: Vec<Interval>,
    /// Box of admissible initial states.
    pub deploy_box: Vec<Interval>,
    dynamics: DynamicsFn,
}

impl EnvSpec {
    pub fn new(
        name: &str,
        dt: f64,
        ctrl_bounds: Vec<Interval>,
        dstb_bounds: Vec<Interval>,
        deploy_box: Vec<Interval>,
        dynamics: DynamicsFn,
    ) -> Self {
        EnvSpec {
            name: String::from(name),
            state_dim: deploy_box.len(),
            ctrl_dim: ctrl_bounds.len(),
            dstb_dim: dstb_bounds.len(),
            dt,
            ctrl_bounds,
            dstb_bounds,
            deploy_box,
            dynamics,
        }
    }

    /// One dynamics step. Out-of-bounds controls and disturbances are clamped
    /// componentwise, not rejected.
    pub fn step(&self, x: &[f64], u: &[f64], d: &[f64]) -> Result<Vec<f64>, Error> {
        if !all_finite(x) {
            return Err(Error::NonFiniteState);
        }
        let u = clamp_to(&self.ctrl_bounds, u);
        let d = clamp_to(&self.dstb_bounds, d);
        Ok((self.dynamics)(x, &u, &d))
    }

    /// Uniform sample from the deployment box; deterministic given the seed.
    pub fn sample_initial(&self, rng: &mut Rng) -> Vec<f64> {
        sample_box(&self.deploy_box, rng)
    }

    pub fn clamp_ctrl(&self, u: &[f64]) -> Vec<f64> {
        clamp_to(&self.ctrl_bounds, u)
    }

    pub fn clamp_dstb(&self, d: &[f64]) -> Vec<f64> {
        clamp_to(&self.dstb_bounds, d)
    }
}

/// Failure margin `g`, target margin `l`, and the controller that keeps the
/// target set invariant.
#[derive(Clone)]
pub struct MarginSpec {
    failure_margin: MarginFn,
    target_margin: MarginFn,
    invariant_controller: ControllerFn,
}

impl MarginSpec {
    pub fn new(
        failure_margin: MarginFn,
        target_margin: MarginFn,
        invariant_controller: ControllerFn,
    ) -> Self {
        MarginSpec { failure_margin, target_margin, invariant_controller }
    }

    /// Returns `(g(x), l(x))`.
    pub fn margins(&self, x: &[f64]) -> Result<(f64, f64), Error> {
        if !all_finite(x) {
            return Err(Error::NonFiniteState);
        }
        Ok(((self.failure_margin)(x), (self.target_margin)(x)))
    }

    pub fn failure(&self, x: &[f64]) -> f64 {
        (self.failure_margin)(x)
    }

    pub fn target(&self, x: &[f64]) -> f64 {
        (self.target_margin)(x)
    }

    pub fn in_target(&self, x: &[f64]) -> bool {
        self.target(x) >= 0.0
    }

    pub fn in_failure(&self, x: &[f64]) -> bool {
        self.failure(x) < 0.0
    }

    pub fn invariant_ctrl(&self, x: &[f64]) -> Vec<f64> {
        (self.invariant_controller)(x)
    }
}

// ---------------------------------------------------------------------------
// Built-in environments
// ---------------------------------------------------------------------------

/// Double integrator: state `(p, v)`, `v' = v + dt (u + d)`, `p' = p + dt v'`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DoubleIntegratorParams {
    pub dt: f64,
    pub ctrl_max: f64,
    pub dstb_max: f64,
    /// Failure when `|p| > fail_pos`.
    pub fail_pos: f64,
    /// Target box `|p| <= target_pos`, `|v| <= target_vel`.
    pub target_pos: f64,
    pub target_vel: f64,
    pub deploy_half_width: f64,
}

impl Default for DoubleIntegratorParams {
    fn default() -> Self {
        DoubleIntegratorParams {
            dt: 0.1,
            ctrl_max: 1.0,
            dstb_max: 0.3,
            fail_pos: 1.0,
            target_pos: 0.2,
            target_vel: 0.2,
            deploy_half_width: 0.1,
        }
    }
}

pub fn double_integrator(p: &DoubleIntegratorParams) -> (EnvSpec, MarginSpec) {
    let dt = p.dt;
    let dynamics: DynamicsFn = Arc::new(move |x, u, d| {
        let v = x[1] + dt * (u[0] + d[0]);
        vec![x[0] + dt * v, v]
    });
    let env = EnvSpec::new(
        "double_integrator",
        dt,
        vec![Interval::symmetric(p.ctrl_max)],
        vec![Interval::symmetric(p.dstb_max)],
        vec![
            Interval::symmetric(p.deploy_half_width),
            Interval::symmetric(p.deploy_half_width),
        ],
        dynamics,
    );
    let fail_pos = p.fail_pos;
    let target_pos = p.target_pos;
    let target_vel = p.target_vel;
    let ctrl_max = p.ctrl_max;
    let margins = MarginSpec::new(
        Arc::new(move |x| fail_pos - x[0].abs()),
        Arc::new(move |x| (target_pos - x[0].abs()).min(target_vel - x[1].abs())),
        Arc::new(move |x| vec![(-4.0 * x[0] - 3.0 * x[1]).max(-ctrl_max).min(ctrl_max)]),
    );
    (env, margins)
}

/// Torque-limited inverted pendulum: state `(theta, omega)` with
/// `omega' = omega + dt ((g/l) sin theta + (u + d) / (m l^2))`.
///
/// Gravity dominates the actuator beyond a few tenths of a radian, so the
/// winnable region is a narrow band around upright.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PendulumParams {
    pub dt: f64,
    pub gravity: f64,
    pub mass: f64,
    pub length: f64,
    pub ctrl_max: f64,
    pub dstb_max: f64,
    /// Failure when `|theta| > fail_angle`.
    pub fail_angle: f64,
    pub target_angle: f64,
    pub target_rate: f64,
    pub deploy_half_width: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        PendulumParams {
            dt: 0.05,
            gravity: 9.81,
            mass: 1.0,
            length: 1.0,
            ctrl_max: 2.0,
            dstb_max: 0.5,
            fail_angle: core::f64::consts::FRAC_PI_2,
            target_angle: 0.1,
            target_rate: 0.5,
            deploy_half_width: 0.05,
        }
    }
}

pub fn pendulum(p: &PendulumParams) -> (EnvSpec, MarginSpec) {
    let dt = p.dt;
    let grav_over_len = p.gravity / p.length;
    let inv_inertia = 1.0 / (p.mass * p.length * p.length);
    let dynamics: DynamicsFn = Arc::new(move |x, u, d| {
        let omega = x[1] + dt * (grav_over_len * libm::sin(x[0]) + (u[0] + d[0]) * inv_inertia);
        vec![x[0] + dt * omega, omega]
    });
    let env = EnvSpec::new(
        "pendulum",
        dt,
        vec![Interval::symmetric(p.ctrl_max)],
        vec![Interval::symmetric(p.dstb_max)],
        vec![
            Interval::symmetric(p.deploy_half_width),
            Interval::symmetric(p.deploy_half_width),
        ],
        dynamics,
    );
    let fail_angle = p.fail_angle;
    let target_angle = p.target_angle;
    let target_rate = p.target_rate;
    let ctrl_max = p.ctrl_max;
    let inertia = p.mass * p.length * p.length;
    let margins = MarginSpec::new(
        Arc::new(move |x| fail_angle - x[0].abs()),
        Arc::new(move |x| (target_angle - x[0].abs()).min(target_rate - x[1].abs())),
        // Feedback linearization plus PD, saturated at the torque limit.
        Arc::new(move |x| {
            let torque = -inertia * (grav_over_len * libm::sin(x[0]) + 8.0 * x[0] + 4.0 * x[1]);
            vec![torque.max(-ctrl_max).min(ctrl_max)]
        }),
    );
    (env, margins)
}

/// Planar quadrotor: state `(x, z, theta, vx, vz, omega)`, two thrust controls,
/// 2-D wind-force disturbance. Exercises scaling beyond the grid solvers; no
/// exact solution is claimed for it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanarQuadrotorParams {
    pub dt: f64,
    pub gravity: f64,
    pub mass: f64,
    /// Half distance between the rotors.
    pub arm: f64,
    pub inertia: f64,
    /// Per-rotor thrust range `[0, thrust_max]`.
    pub thrust_max: f64,
    /// Wind force bound per axis.
    pub wind_max: f64,
    /// Hover altitude at the center of the target set.
    pub hover_alt: f64,
}

impl Default for PlanarQuadrotorParams {
    fn default() -> Self {
        PlanarQuadrotorParams {
            dt: 0.02,
            gravity: 9.81,
            mass: 0.5,
            arm: 0.17,
            inertia: 0.005,
            thrust_max: 5.0,
            wind_max: 0.8,
            hover_alt: 1.2,
        }
    }
}

pub fn planar_quadrotor(p: &PlanarQuadrotorParams) -> (EnvSpec, MarginSpec) {
    let dt = p.dt;
    let mass = p.mass;
    let inv_mass = 1.0 / p.mass;
    let gravity = p.gravity;
    let arm_over_inertia = p.arm / p.inertia;
    let dynamics: DynamicsFn = Arc::new(move |x, u, d| {
        let thrust = u[0] + u[1];
        let (sin_t, cos_t) = (libm::sin(x[2]), libm::cos(x[2]));
        let ax = (-thrust * sin_t + d[0]) * inv_mass;
        let az = (thrust * cos_t + d[1]) * inv_mass - gravity;
        let aw = (u[1] - u[0]) * arm_over_inertia;
        let vx = x[3] + dt * ax;
        let vz = x[4] + dt * az;
        let om = x[5] + dt * aw;
        vec![x[0] + dt * vx, x[1] + dt * vz, x[2] + dt * om, vx, vz, om]
    });
    let hover = p.hover_alt;
    let env = EnvSpec::new(
        "planar_quadrotor",
        dt,
        vec![Interval::new(0.0, p.thrust_max), Interval::new(0.0, p.thrust_max)],
        vec![Interval::symmetric(p.wind_max), Interval::symmetric(p.wind_max)],
        vec![
            Interval::symmetric(0.2),
            Interval::new(hover - 0.2, hover + 0.2),
            Interval::symmetric(0.05),
            Interval::symmetric(0.1),
            Interval::symmetric(0.1),
            Interval::symmetric(0.1),
        ],
        dynamics,
    );
    let margins = MarginSpec::new(
        // Fly inside a corridor without excessive tilt: crash below 0.1 m,
        // ceiling at 2.4 m, |theta| < 1.2, |x| < 3.
        Arc::new(move |x| {
            (x[1] - 0.1)
                .min(2.4 - x[1])
                .min(1.2 - x[2].abs())
                .min(3.0 - x[0].abs())
        }),
        // Near-hover window around (0, hover_alt).
        Arc::new(move |x| {
            (0.4 - x[0].abs())
                .min(0.4 - (x[1] - hover).abs())
                .min(0.25 - x[2].abs())
                .min(0.4 - x[3].abs())
                .min(0.4 - x[4].abs())
                .min(0.8 - x[5].abs())
        }),
        // Cascaded PD hover controller: outer loops command acceleration,
        // inner loop tracks the resulting tilt reference.
        Arc::new(move |x| {
            let ax_des = -2.0 * x[0] - 2.8 * x[3];
            let az_des = -4.0 * (x[1] - hover) - 4.0 * x[4];
            let theta_ref = (-ax_des / gravity).max(-0.3).min(0.3);
            let cos_t = libm::cos(x[2]).max(0.5);
            let total = (mass * (gravity + az_des) / cos_t).max(0.0);
            let torque_acc = -80.0 * (x[2] - theta_ref) - 18.0 * x[5];
            let diff = torque_acc / arm_over_inertia;
            vec![0.5 * (total - diff), 0.5 * (total + diff)]
        }),
    );
    (env, margins)
}

// ---------------------------------------------------------------------------
// Environment selection
// ---------------------------------------------------------------------------

/// Environment choice plus constant overrides, as it appears in run configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum EnvConfig {
    DoubleIntegrator(DoubleIntegratorParams),
    Pendulum(PendulumParams),
    PlanarQuadrotor(PlanarQuadrotorParams),
}

impl EnvConfig {
    /// Default configuration for a built-in environment name.
    pub fn by_name(name: &str) -> Option<EnvConfig> {
        match name {
            "double_integrator" => Some(EnvConfig::DoubleIntegrator(Default::default())),
            "pendulum" => Some(EnvConfig::Pendulum(Default::default())),
            "planar_quadrotor" => Some(EnvConfig::PlanarQuadrotor(Default::default())),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EnvConfig::DoubleIntegrator(_) => "double_integrator",
            EnvConfig::Pendulum(_) => "pendulum",
            EnvConfig::PlanarQuadrotor(_) => "planar_quadrotor",
        }
    }

    pub fn build(&self) -> (EnvSpec, MarginSpec) {
        match self {
            EnvConfig::DoubleIntegrator(p) => double_integrator(p),
            EnvConfig::Pendulum(p) => pendulum(p),
            EnvConfig::PlanarQuadrotor(p) => planar_quadrotor(p),
        }
    }

    /// State box covering the deployment set and the margin-relevant
    /// neighborhood; used for solver grids and exploration resets.
    pub fn default_domain(&self) -> Vec<Interval> {
        match self {
            EnvConfig::DoubleIntegrator(_) => {
                vec![Interval::symmetric(1.2), Interval::symmetric(1.2)]
            }
            EnvConfig::Pendulum(_) => {
                vec![Interval::symmetric(1.8), Interval::symmetric(3.0)]
            }
            EnvConfig::PlanarQuadrotor(_) => vec![
                Interval::symmetric(3.0),
                Interval::new(0.0, 2.4),
                Interval::symmetric(1.3),
                Interval::symmetric(2.0),
                Interval::symmetric(2.0),
                Interval::symmetric(3.0),
            ],
        }
    }

    /// Default grid resolution for the tabular solver (2-state environments
    /// only).
    pub fn default_grid_points(&self) -> Option<Vec<usize>> {
        match self {
            EnvConfig::DoubleIntegrator(_) | EnvConfig::Pendulum(_) => Some(vec![101, 101]),
            EnvConfig::PlanarQuadrotor(_) => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn di_equilibrium() {
        let (env, _) = double_integrator(&Default::default());
        let x = env.step(&[0.0, 0.0], &[0.0], &[0.0]).unwrap();
        assert_eq!(x, vec![0.0, 0.0]);
    }

    #[test]
    fn di_semi_implicit_order() {
        // v is updated first, then p uses the updated v.
        let (env, _) = double_integrator(&Default::default());
        let x = env.step(&[0.0, 1.0], &[0.0], &[0.0]).unwrap();
        assert_eq!(x[1], 1.0);
        assert!((x[0] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn pendulum_hand_integrated_step() {
        let p = PendulumParams::default();
        let (env, _) = pendulum(&p);
        let x = env.step(&[0.3, 0.0], &[0.0], &[0.0]).unwrap();
        let omega = p.dt * (p.gravity / p.length) * libm::sin(0.3);
        assert!((x[1] - omega).abs() < 1e-15);
        assert!((x[0] - (0.3 + p.dt * omega)).abs() < 1e-15);
    }

    #[test]
    fn di_margin_values() {
        let (_, m) = double_integrator(&Default::default());
        let (g, l) = m.margins(&[0.0, 0.0]).unwrap();
        assert_eq!(g, 1.0);
        assert_eq!(l, 0.2);
        let (g, _) = m.margins(&[1.5, 0.0]).unwrap();
        assert_eq!(g, -0.5);
        let (g, l) = m.margins(&[0.1, 0.3]).unwrap();
        assert!((l - (-0.1)).abs() < 1e-15);
        assert!((g - 0.9).abs() < 1e-15);
    }

    #[test]
    fn non_finite_state_rejected() {
        let (env, m) = double_integrator(&Default::default());
        assert_eq!(env.step(&[f64::NAN, 0.0], &[0.0], &[0.0]), Err(Error::NonFiniteState));
        assert_eq!(m.margins(&[f64::INFINITY, 0.0]), Err(Error::NonFiniteState));
    }

    #[test]
    fn degenerate_deploy_box() {
        let (mut env, _) = double_integrator(&Default::default());
        env.deploy_box = vec![Interval::new(0.0, 0.0), Interval::new(0.0, 0.0)];
        let mut rng = Rng::seed_from_u64(0);
        assert_eq!(env.sample_initial(&mut rng), vec![0.0, 0.0]);
    }

    #[test]
    fn sample_initial_deterministic() {
        let (env, _) = double_integrator(&Default::default());
        let a = env.sample_initial(&mut Rng::seed_from_u64(5));
        let b = env.sample_initial(&mut Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }

    #[test]
    fn sample_initial_mean() {
        let (env, _) = double_integrator(&Default::default());
        let mut rng = Rng::seed_from_u64(9);
        let n = 10_000;
        let mut mean = [0.0, 0.0];
        for _ in 0..n {
            let x = env.sample_initial(&mut rng);
            mean[0] += x[0];
            mean[1] += x[1];
        }
        assert!((mean[0] / n as f64).abs() < 0.01);
        assert!((mean[1] / n as f64).abs() < 0.01);
    }

    #[test]
    fn clamping_idempotent() {
        let (env, _) = double_integrator(&Default::default());
        let u = env.clamp_ctrl(&[7.0]);
        assert_eq!(u, vec![1.0]);
        assert_eq!(env.clamp_ctrl(&u), u);
        let a = env.step(&[0.1, 0.2], &[7.0], &[-9.0]).unwrap();
        let b = env.step(&[0.1, 0.2], &[1.0], &[-0.3]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn margins_disjoint_on_grid() {
        // No point may be in T and F simultaneously.
        for cfg in [
            EnvConfig::by_name("double_integrator").unwrap(),
            EnvConfig::by_name("pendulum").unwrap(),
        ] {
            let (_, m) = cfg.build();
            let dom = cfg.default_domain();
            let n = 101;
            for i in 0..n {
                for j in 0..n {
                    let x = [
                        dom[0].lo + dom[0].width() * i as f64 / (n - 1) as f64,
                        dom[1].lo + dom[1].width() * j as f64 / (n - 1) as f64,
                    ];
                    let (g, l) = m.margins(&x).unwrap();
                    assert!(l < 0.0 || g >= 0.0, "T and F overlap at {x:?}: g={g} l={l}");
                }
            }
        }
    }
}
