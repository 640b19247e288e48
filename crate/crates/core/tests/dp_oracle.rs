//! Independent minimax game-tree oracle for the finite-horizon grid solver.
//!
//! The oracle recomputes node values by raw recursion over (control,
//! disturbance) choices, interpolating successor values over the next layer's
//! recursively computed node values with its own multilinear weights. It
//! shares no code path with the layer-sweeping solver.

use std::collections::HashMap;

use reachguard_core::dp::{
    solve, ActionLattice, DpPolicy, Side, SolveMode, StateGrid,
};
use reachguard_core::env::{double_integrator, EnvSpec, Interval, MarginSpec};
use reachguard_core::outcome::{rollout, StopRule, Verdict};
use reachguard_core::rng::Rng;

struct Oracle<'a> {
    env: &'a EnvSpec,
    margins: &'a MarginSpec,
    grid: &'a StateGrid,
    lattice: &'a ActionLattice,
    horizon: usize,
    memo: HashMap<(usize, usize), f64>,
}

impl<'a> Oracle<'a> {
    fn node_value(&mut self, node: usize, k: usize) -> f64 {
        if let Some(&v) = self.memo.get(&(node, k)) {
            return v;
        }
        let x = self.grid.coords(node);
        let (g, l) = self.margins.margins(&x).unwrap();
        let v = if k == self.horizon {
            l.min(g)
        } else {
            let mut best = f64::NEG_INFINITY;
            for u in &self.lattice.ctrl {
                let mut worst = f64::INFINITY;
                for d in &self.lattice.dstb {
                    let x_next = self.env.step(&x, u, d).unwrap();
                    let v_next = self.interp_value(&x_next, k + 1);
                    worst = worst.min(g.min(l.max(v_next)));
                }
                best = best.max(worst);
            }
            best
        };
        self.memo.insert((node, k), v);
        v
    }

    /// Multilinear interpolation with clamping, written out from scratch.
    fn interp_value(&mut self, x: &[f64], k: usize) -> f64 {
        let dim = self.grid.dim();
        let mut base = vec![0usize; dim];
        let mut frac = vec![0.0; dim];
        for i in 0..dim {
            let lo = self.grid.bounds[i].lo;
            let h = self.grid.spacing(i);
            let n = self.grid.points[i];
            let t = ((x[i] - lo) / h).clamp(0.0, (n - 1) as f64);
            let i0 = (t as usize).min(n - 2);
            base[i] = i0;
            frac[i] = t - i0 as f64;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << dim) {
            let mut w = 1.0;
            let mut multi = base.clone();
            for i in 0..dim {
                if corner & (1 << i) != 0 {
                    w *= frac[i];
                    multi[i] += 1;
                } else {
                    w *= 1.0 - frac[i];
                }
            }
            if w != 0.0 {
                // Row-major node index.
                let mut idx = 0;
                for i in 0..dim {
                    idx = idx * self.grid.points[i] + multi[i];
                }
                acc += w * self.node_value(idx, k);
            }
        }
        acc
    }
}

#[test]
fn finite_solve_matches_game_tree_search() {
    let (env, margins) = double_integrator(&Default::default());
    let grid = StateGrid::new(
        vec![Interval::symmetric(1.2), Interval::symmetric(1.2)],
        vec![5, 5],
    )
    .unwrap();
    let lattice = ActionLattice::from_env(&env, 3, 3);
    let horizon = 3;
    let vg = solve(&env, &margins, &grid, &lattice, SolveMode::Finite { horizon }).unwrap();
    let mut oracle = Oracle {
        env: &env,
        margins: &margins,
        grid: &grid,
        lattice: &lattice,
        horizon,
        memo: HashMap::new(),
    };
    for node in 0..grid.node_count() {
        for k in 0..=horizon {
            let expect = oracle.node_value(node, k);
            let got = vg.layers[k][node];
            assert!(
                (expect - got).abs() < 1e-12,
                "node {node} layer {k}: oracle {expect} vs solve {got}"
            );
        }
    }
}

#[test]
fn tiny_grid_two_actions_horizon_two() {
    let (env, margins) = double_integrator(&Default::default());
    let grid = StateGrid::new(
        vec![Interval::symmetric(1.0), Interval::symmetric(1.0)],
        vec![3, 3],
    )
    .unwrap();
    let lattice = ActionLattice::from_env(&env, 2, 2);
    let horizon = 2;
    let vg = solve(&env, &margins, &grid, &lattice, SolveMode::Finite { horizon }).unwrap();
    let mut oracle = Oracle {
        env: &env,
        margins: &margins,
        grid: &grid,
        lattice: &lattice,
        horizon,
        memo: HashMap::new(),
    };
    for node in 0..grid.node_count() {
        let expect = oracle.node_value(node, 0);
        assert!((expect - vg.layers[0][node]).abs() < 1e-12);
    }
}

#[test]
fn extracted_policies_win_from_certified_nodes() {
    // Policy soundness at reduced scale: simulate the extracted minimax pair
    // from every node certified by the Lipschitz slack; all must win.
    let (env, margins) = double_integrator(&Default::default());
    let grid = StateGrid::new(
        vec![Interval::symmetric(1.2), Interval::symmetric(1.2)],
        vec![41, 41],
    )
    .unwrap();
    let lattice = ActionLattice::from_env(&env, 5, 5);
    let horizon = 80;
    let vg = std::sync::Arc::new(
        solve(&env, &margins, &grid, &lattice, SolveMode::Finite { horizon }).unwrap(),
    );
    let eta = vg.safe_slack();
    assert!(eta > 0.0 && eta < 0.5, "slack {eta} out of expected range");
    let nodes = vg.nodes_above(eta);
    assert!(!nodes.is_empty());
    let mut rng = Rng::seed_from_u64(0);
    let mut losses = 0usize;
    for &node in &nodes {
        let x0 = grid.coords(node);
        let mut ctrl = DpPolicy::new(vg.clone(), Side::Ctrl, false);
        let mut dstb = DpPolicy::new(vg.clone(), Side::Dstb, false);
        let traj = rollout(
            &env,
            &margins,
            &x0,
            &mut ctrl,
            &mut dstb,
            horizon,
            &mut rng,
            StopRule::ReachAvoid,
        )
        .unwrap();
        if traj.result().unwrap().verdict != Verdict::Win {
            losses += 1;
        }
    }
    assert_eq!(losses, 0, "{losses}/{} certified nodes failed", nodes.len());
}
