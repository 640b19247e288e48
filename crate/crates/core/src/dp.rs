//! Exact tabular solver for reach-avoid games on gridded low-dimensional
//! environments. Serves as the ground-truth oracle for the learned components.
//!
//! Two backup modes are provided and kept deliberately distinct:
//!
//! * `finite`: the undiscounted finite-horizon backup, margins evaluated at
//!   the *current* state:
//!   `V_k(x) = max_u min_d min{ g(x), max{ l(x), V_{k+1}(f(x,u,d)) } }`
//!   with terminal layer `V_H = min(l, g)`.
//! * `discounted`: the contraction used as the learning target, margins
//!   evaluated at the *successor* state:
//!   `V(x) = max_u min_d [ gamma * min{ g', max{ l', V(x') } } + (1 - gamma) * min{ l', g' } ]`.
//!
//! Off-grid successors are handled by multilinear interpolation with
//! componentwise clamping to the grid box; successors leaving an inflated box
//! by more than one cell are counted and reported, not treated as fatal.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::env::{EnvSpec, Interval, MarginSpec};
use crate::error::Error;
use crate::policy::Policy;
use crate::rng::Rng;

pub const MAX_DIMS: usize = 8;

/// Regular lattice over a state-space box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateGrid {
    pub bounds: Vec<Interval>,
    pub points: Vec<usize>,
    strides: Vec<usize>,
}

impl StateGrid {
    pub fn new(bounds: Vec<Interval>, points: Vec<usize>) -> Result<Self, Error> {
        if bounds.is_empty() || bounds.len() != points.len() {
            return Err(Error::BadGrid(String::from("bounds/points length mismatch")));
        }
        if bounds.len() > MAX_DIMS {
            return Err(Error::BadGrid(format!("at most {MAX_DIMS} dimensions supported")));
        }
        if points.iter().any(|&n| n < 2) {
            return Err(Error::BadGrid(String::from("need at least 2 points per dimension")));
        }
        if bounds.iter().any(|iv| !(iv.hi > iv.lo)) {
            return Err(Error::BadGrid(String::from("bounds must have positive width")));
        }
        let mut strides = vec![1usize; points.len()];
        for i in (0..points.len() - 1).rev() {
            strides[i] = strides[i + 1] * points[i + 1];
        }
        Ok(StateGrid { bounds, points, strides })
    }

    pub fn dim(&self) -> usize {
        self.points.len()
    }

    pub fn node_count(&self) -> usize {
        self.points.iter().product()
    }

    /// Grid spacing along each dimension.
    pub fn spacing(&self, dim: usize) -> f64 {
        self.bounds[dim].width() / (self.points[dim] - 1) as f64
    }

    pub fn cell_diagonal(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim() {
            let h = self.spacing(i);
            s += h * h;
        }
        libm::sqrt(s)
    }

    pub fn coords(&self, node: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.fill_coords(node, &mut out);
        out
    }

    pub fn fill_coords(&self, node: usize, out: &mut [f64]) {
        let mut rem = node;
        for i in 0..self.dim() {
            let mi = rem / self.strides[i];
            rem %= self.strides[i];
            out[i] = self.bounds[i].lo + self.spacing(i) * mi as f64;
        }
    }

    /// Index of the grid node nearest to `x` (clamped to the box).
    pub fn nearest_node(&self, x: &[f64]) -> usize {
        let mut idx = 0;
        for i in 0..self.dim() {
            let t = (self.bounds[i].clamp(x[i]) - self.bounds[i].lo) / self.spacing(i);
            let mi = (libm::round(t) as usize).min(self.points[i] - 1);
            idx += mi * self.strides[i];
        }
        idx
    }

    /// Multilinear interpolation of nodewise `values` at `x`, clamping each
    /// coordinate to the grid box. The flag reports whether `x` lay outside an
    /// inflated box of one cell around the grid.
    pub fn interpolate_flagged(&self, values: &[f64], x: &[f64]) -> (f64, bool) {
        debug_assert_eq!(values.len(), self.node_count());
        let dim = self.dim();
        let mut base = [0usize; MAX_DIMS];
        let mut frac = [0.0f64; MAX_DIMS];
        let mut far_outside = false;
        for i in 0..dim {
            let h = self.spacing(i);
            if x[i] < self.bounds[i].lo - h || x[i] > self.bounds[i].hi + h {
                far_outside = true;
            }
            let t = ((x[i] - self.bounds[i].lo) / h).max(0.0).min((self.points[i] - 1) as f64);
            let mut i0 = t as usize;
            if i0 >= self.points[i] - 1 {
                i0 = self.points[i] - 2;
            }
            base[i] = i0;
            frac[i] = t - i0 as f64;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << dim) {
            let mut w = 1.0;
            let mut idx = 0;
            for i in 0..dim {
                if corner & (1 << i) != 0 {
                    w *= frac[i];
                    idx += (base[i] + 1) * self.strides[i];
                } else {
                    w *= 1.0 - frac[i];
                    idx += base[i] * self.strides[i];
                }
            }
            if w != 0.0 {
                acc += w * values[idx];
            }
        }
        (acc, far_outside)
    }

    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> f64 {
        self.interpolate_flagged(values, x).0
    }
}

/// Discrete control and disturbance sets used inside backups.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionLattice {
    pub ctrl: Vec<Vec<f64>>,
    pub dstb: Vec<Vec<f64>>,
}

/// Uniform lattice over a box, always including the endpoints of each
/// interval (the extreme points matter for minimax).
pub fn uniform_lattice(bounds: &[Interval], points_per_dim: usize) -> Vec<Vec<f64>> {
    let axes: Vec<Vec<f64>> = bounds
        .iter()
        .map(|iv| {
            if iv.width() == 0.0 || points_per_dim == 1 {
                vec![iv.midpoint()]
            } else {
                (0..points_per_dim)
                    .map(|i| iv.lo + iv.width() * i as f64 / (points_per_dim - 1) as f64)
                    .collect()
            }
        })
        .collect();
    let mut out = vec![Vec::new()];
    for axis in &axes {
        let mut next = Vec::with_capacity(out.len() * axis.len());
        for prefix in &out {
            for &v in axis {
                let mut p = prefix.clone();
                p.push(v);
                next.push(p);
            }
        }
        out = next;
    }
    out
}

impl ActionLattice {
    pub fn from_env(env: &EnvSpec, ctrl_points: usize, dstb_points: usize) -> Self {
        ActionLattice {
            ctrl: uniform_lattice(&env.ctrl_bounds, ctrl_points),
            dstb: uniform_lattice(&env.dstb_bounds, dstb_points),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum SolveMode {
    Finite { horizon: usize },
    Discounted { gamma: f64, tol: f64, max_iters: usize },
}

/// Metadata recorded with a solved grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SolveInfo {
    Finite { horizon: usize },
    Discounted { gamma: f64, tol: f64, iterations: usize, residual: f64 },
}

/// Solved value function, one layer per time index (finite) or a single fixed
/// point (discounted), plus extracted minimax policies as lattice indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueGrid {
    pub grid: StateGrid,
    pub lattice: ActionLattice,
    /// `layers[k]` is `V_k`; discounted solves have a single layer.
    pub layers: Vec<Vec<f64>>,
    /// `ctrl_policy[k][node]` indexes `lattice.ctrl`; one layer per backup.
    pub ctrl_policy: Vec<Vec<u32>>,
    pub dstb_policy: Vec<Vec<u32>>,
    pub info: SolveInfo,
    /// Successors that left the inflated grid box by more than one cell.
    pub oob_successors: u64,
}

/// Terminal layer `V_H(x) = min{ l(x), g(x) }` at every node.
pub fn terminal_values(grid: &StateGrid, margins: &MarginSpec) -> Vec<f64> {
    let mut x = vec![0.0; grid.dim()];
    (0..grid.node_count())
        .map(|n| {
            grid.fill_coords(n, &mut x);
            margins.target(&x).min(margins.failure(&x))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BackupMode {
    Finite,
    Discounted { gamma: f64 },
}

pub struct BackupResult {
    pub values: Vec<f64>,
    pub ctrl: Vec<u32>,
    pub dstb: Vec<u32>,
    pub oob: u64,
}

/// One backup of a single node; exposed so callers can partition nodes across
/// workers (each node reads only the previous layer).
pub fn backup_node(
    node: usize,
    v_next: &[f64],
    grid: &StateGrid,
    lattice: &ActionLattice,
    env: &EnvSpec,
    margins: &MarginSpec,
    mode: BackupMode,
) -> (f64, u32, u32, u64) {
    let mut x = [0.0f64; MAX_DIMS];
    let x = &mut x[..grid.dim()];
    grid.fill_coords(node, x);
    let (g_here, l_here) = (margins.failure(x), margins.target(x));
    let mut best_v = f64::NEG_INFINITY;
    let mut best_u = 0u32;
    let mut best_d = 0u32;
    let mut oob = 0u64;
    for (ui, u) in lattice.ctrl.iter().enumerate() {
        let mut worst_v = f64::INFINITY;
        let mut worst_d = 0u32;
        for (di, d) in lattice.dstb.iter().enumerate() {
            let x_next = (env.step(x, u, d)).expect("grid nodes are finite");
            let (v_interp, far) = grid.interpolate_flagged(v_next, &x_next);
            if far {
                oob += 1;
            }
            let candidate = match mode {
                BackupMode::Finite => g_here.min(l_here.max(v_interp)),
                BackupMode::Discounted { gamma } => {
                    let g_next = margins.failure(&x_next);
                    let l_next = margins.target(&x_next);
                    gamma * g_next.min(l_next.max(v_interp))
                        + (1.0 - gamma) * l_next.min(g_next)
                }
            };
            if candidate < worst_v {
                worst_v = candidate;
                worst_d = di as u32;
            }
        }
        if worst_v > best_v {
            best_v = worst_v;
            best_u = ui as u32;
            best_d = worst_d;
        }
    }
    (best_v, best_u, best_d, oob)
}

/// Full-layer backup: `max_u min_d` over the lattice at every node.
pub fn backup(
    v_next: &[f64],
    grid: &StateGrid,
    lattice: &ActionLattice,
    env: &EnvSpec,
    margins: &MarginSpec,
    mode: BackupMode,
) -> BackupResult {
    let n = grid.node_count();
    let mut values = vec![0.0; n];
    let mut ctrl = vec![0u32; n];
    let mut dstb = vec![0u32; n];
    let mut oob = 0u64;
    for node in 0..n {
        let (v, u, d, o) = backup_node(node, v_next, grid, lattice, env, margins, mode);
        values[node] = v;
        ctrl[node] = u;
        dstb[node] = d;
        oob += o;
    }
    BackupResult { values, ctrl, dstb, oob }
}

/// Solve the gridded game in the requested mode.
pub fn solve(
    env: &EnvSpec,
    margins: &MarginSpec,
    grid: &StateGrid,
    lattice: &ActionLattice,
    mode: SolveMode,
) -> Result<ValueGrid, Error> {
    let terminal = terminal_values(grid, margins);
    match mode {
        SolveMode::Finite { horizon } => {
            let mut layers = vec![terminal];
            let mut ctrl_policy = Vec::new();
            let mut dstb_policy = Vec::new();
            let mut oob = 0u64;
            for _ in 0..horizon {
                let r = backup(&layers[0], grid, lattice, env, margins, BackupMode::Finite);
                layers.insert(0, r.values);
                ctrl_policy.insert(0, r.ctrl);
                dstb_policy.insert(0, r.dstb);
                oob += r.oob;
            }
            Ok(ValueGrid {
                grid: grid.clone(),
                lattice: lattice.clone(),
                layers,
                ctrl_policy,
                dstb_policy,
                info: SolveInfo::Finite { horizon },
                oob_successors: oob,
            })
        }
        SolveMode::Discounted { gamma, tol, max_iters } => {
            if !(0.0 < gamma && gamma <= 1.0) {
                return Err(Error::BadConfig(String::from("discount must be in (0, 1]")));
            }
            let mut v = terminal;
            let mut last = None;
            let mut iterations = 0;
            let mut residual = f64::INFINITY;
            while iterations < max_iters {
                let r = backup(&v, grid, lattice, env, margins, BackupMode::Discounted { gamma });
                residual = r
                    .values
                    .iter()
                    .zip(&v)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max);
                v = r.values.clone();
                iterations += 1;
                let done = residual < tol;
                last = Some(r);
                if done {
                    break;
                }
            }
            if residual >= tol {
                return Err(Error::NoConvergence { iterations, residual });
            }
            let r = last.expect("at least one iteration ran");
            Ok(ValueGrid {
                grid: grid.clone(),
                lattice: lattice.clone(),
                layers: vec![v],
                ctrl_policy: vec![r.ctrl],
                dstb_policy: vec![r.dstb],
                info: SolveInfo::Discounted { gamma, tol, iterations, residual },
                oob_successors: r.oob,
            })
        }
    }
}

impl ValueGrid {
    /// Interpolated value of the first layer (V_0 for finite solves).
    pub fn value_at(&self, x: &[f64]) -> f64 {
        self.grid.interpolate(&self.layers[0], x)
    }

    /// Nearest-node policy pair at layer `k` (clamped to the last layer).
    pub fn policy_at_layer(&self, k: usize, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let k = k.min(self.ctrl_policy.len() - 1);
        let node = self.grid.nearest_node(x);
        (
            self.lattice.ctrl[self.ctrl_policy[k][node] as usize].clone(),
            self.lattice.dstb[self.dstb_policy[k][node] as usize].clone(),
        )
    }

    /// Nearest-node policy pair from the first layer.
    pub fn policy_at(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        self.policy_at_layer(0, x)
    }

    /// Empirical Lipschitz constant of the first layer: the largest absolute
    /// slope between adjacent nodes.
    pub fn lipschitz_estimate(&self) -> f64 {
        let grid = &self.grid;
        let v = &self.layers[0];
        let mut best = 0.0f64;
        for dim in 0..grid.dim() {
            let h = grid.spacing(dim);
            let stride = grid.strides[dim];
            let n_dim = grid.points[dim];
            for node in 0..grid.node_count() {
                let mi = node / stride % n_dim;
                if mi + 1 < n_dim {
                    best = best.max((v[node + stride] - v[node]).abs() / h);
                }
            }
        }
        best
    }

    /// One-cell Lipschitz slack: shrinking the certified set by this margin
    /// absorbs the discretization error of the grid.
    pub fn safe_slack(&self) -> f64 {
        self.lipschitz_estimate() * self.grid.cell_diagonal()
    }

    /// Nodes of the first layer with value at least `threshold`.
    pub fn nodes_above(&self, threshold: f64) -> Vec<usize> {
        self.layers[0]
            .iter()
            .enumerate()
            .filter(|(_, &v)| v >= threshold)
            .map(|(n, _)| n)
            .collect()
    }
}

/// Which side of the game a [`DpPolicy`] plays.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Ctrl,
    Dstb,
}

/// Plays a solved grid's extracted policy by nearest-node lookup.
///
/// For finite solves the policy is time-varying: step `k` reads layer `k`
/// (clamped to the last backup layer). `stationary` pins layer 0, which is the
/// natural choice when the solve has effectively converged.
pub struct DpPolicy {
    vg: Arc<ValueGrid>,
    side: Side,
    stationary: bool,
    step: usize,
}

impl DpPolicy {
    pub fn new(vg: Arc<ValueGrid>, side: Side, stationary: bool) -> Self {
        DpPolicy { vg, side, stationary, step: 0 }
    }
}

impl Policy for DpPolicy {
    fn act(&mut self, x: &[f64], _rng: &mut Rng) -> Vec<f64> {
        let k = if self.stationary { 0 } else { self.step };
        self.step += 1;
        let (u, d) = self.vg.policy_at_layer(k, x);
        match self.side {
            Side::Ctrl => u,
            Side::Dstb => d,
        }
    }

    fn reset(&mut self) {
        self.step = 0;
    }
}
