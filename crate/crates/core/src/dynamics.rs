//! Implicit product-Euler solver for controlled motions.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::game::GameSpec;
use crate::numerics::gronwall_bound;
use crate::position::{Position, Vector};

#[derive(Debug, Clone)]
pub struct Motion {
    pub start: Position,
    /// Node samples on `[0, T]`.
    pub x: Vec<Vector>,
    /// Generator per cell on `[0, T)`.
    pub ell: Vec<Vector>,
    /// Control indices per cell on `[t, T)`.
    pub u_rec: Vec<usize>,
    pub v_rec: Vec<usize>,
}

impl Motion {
    /// The position `(tau_j, x_{tau_j})` reached by the motion.
    pub fn position_at(&self, j: usize) -> Position {
        Position::from_parts(
            self.start.system().clone(),
            self.ell[..j].to_vec(),
            self.x[..=j].to_vec(),
        )
    }

    pub fn terminal(&self) -> Position {
        self.position_at(self.ell.len())
    }

    pub fn sup_norm(&self) -> f64 {
        self.x.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// Advances the history by one cell with controls `u`, `v` held on it.
fn step(game: &GameSpec, ell: &mut Vec<Vector>, w: &mut Vec<Vector>, u: &Vector, v: &Vector) -> Result<()> {
    let system = &game.system;
    let j = ell.len() + 1;
    let tau = system.grid().node(j);
    let hist = system.history_sum(j, ell);
    let diag = system.weight(j, j - 1);
    let cfg = game.solver;

    let mut x = w[j - 1].clone();
    let mut converged = false;
    for _ in 0..cfg.picard_max_iter {
        let fx = (game.f)(tau, &x, u, v);
        if !fx.iter().all(|c| c.is_finite()) {
            return Err(Error::NonFinite { node: j, tau });
        }
        let mut next = hist.clone();
        next.gemv(1.0, &diag, &fx, 1.0);
        let delta = (&next - &x).norm();
        x = next;
        if delta <= cfg.picard_tol * (1.0 + x.norm()) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::PicardNonConvergence {
            node: j,
            tau,
            iterations: cfg.picard_max_iter,
        });
    }
    let e = (game.f)(tau, &x, u, v);
    if !e.iter().all(|c| c.is_finite()) {
        return Err(Error::NonFinite { node: j, tau });
    }
    // same summation order as reconstruction, so the history round-trips bitwise
    let mut xj = hist;
    system.accumulate(j, j - 1, &e, &mut xj);
    ell.push(e);
    w.push(xj);
    Ok(())
}

fn check_control(game: &GameSpec, u: usize, v: usize) -> Result<()> {
    if u >= game.p_grid.len() {
        return Err(Error::IndexOutOfRange {
            index: u,
            valid: format!("0..{}", game.p_grid.len()),
        });
    }
    if v >= game.q_grid.len() {
        return Err(Error::IndexOutOfRange {
            index: v,
            valid: format!("0..{}", game.q_grid.len()),
        });
    }
    Ok(())
}

/// Position after `cells` master cells with constant controls.
pub fn advance(game: &GameSpec, pos: &Position, u: usize, v: usize, cells: usize) -> Result<Position> {
    check_control(game, u, v)?;
    let end = pos.t_index() + cells;
    if end > game.system.grid().cells() {
        return Err(Error::IndexOutOfRange {
            index: end,
            valid: format!("0..={}", game.system.grid().cells()),
        });
    }
    let mut ell = pos.ell().to_vec();
    let mut w = pos.w().to_vec();
    for _ in 0..cells {
        step(game, &mut ell, &mut w, &game.p_grid[u], &game.q_grid[v])?;
    }
    Ok(Position::from_parts(game.system.clone(), ell, w))
}

/// Motion from `pos` with control indices given per master cell on `[t, T)`.
pub fn solve_motion(game: &GameSpec, pos: &Position, u_seq: &[usize], v_seq: &[usize]) -> Result<Motion> {
    if !std::sync::Arc::ptr_eq(pos.system(), &game.system) {
        return Err(Error::GridMismatch);
    }
    let remaining = game.system.grid().cells() - pos.t_index();
    if u_seq.len() != remaining || v_seq.len() != remaining {
        return Err(crate::error::invalid(
            "controls",
            format!(
                "{} and {} cell controls for {remaining} remaining cells",
                u_seq.len(),
                v_seq.len()
            ),
        ));
    }
    let mut ell = pos.ell().to_vec();
    let mut w = pos.w().to_vec();
    for (&u, &v) in u_seq.iter().zip(v_seq) {
        check_control(game, u, v)?;
        step(game, &mut ell, &mut w, &game.p_grid[u], &game.q_grid[v])?;
    }
    Ok(Motion {
        start: pos.clone(),
        x: w,
        ell,
        u_rec: u_seq.to_vec(),
        v_rec: v_seq.to_vec(),
    })
}

/// Largest node deviation between a single solve and a solve split at `split_index`.
pub fn check_semigroup(
    game: &GameSpec,
    pos: &Position,
    u_seq: &[usize],
    v_seq: &[usize],
    split_index: usize,
) -> Result<f64> {
    let t = pos.t_index();
    let cells = game.system.grid().cells();
    if split_index < t || split_index > cells {
        return Err(Error::IndexOutOfRange {
            index: split_index,
            valid: format!("{t}..={cells}"),
        });
    }
    let whole = solve_motion(game, pos, u_seq, v_seq)?;
    let k = split_index - t;
    let mut ell = pos.ell().to_vec();
    let mut w = pos.w().to_vec();
    for (&u, &v) in u_seq[..k].iter().zip(&v_seq[..k]) {
        check_control(game, u, v)?;
        step(game, &mut ell, &mut w, &game.p_grid[u], &game.q_grid[v])?;
    }
    let mid = Position::from_generator(game.system.clone(), ell)?;
    let rest = solve_motion(game, &mid, &u_seq[k..], &v_seq[k..])?;
    Ok(whole
        .x
        .iter()
        .zip(&rest.x)
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AprioriReport {
    pub sup_norm: f64,
    pub bound: f64,
    pub ok: bool,
}

pub const APRIORI_SLACK: f64 = 1e-6;

/// Compares `sup ||x||` with the Mittag-Leffler bound built from the declared growth constant.
pub fn check_apriori_bound(motion: &Motion, game: &GameSpec) -> Result<AprioriReport> {
    let kernel = game.system.kernel();
    let y_sup = game.system.y().iter().map(|v| v.norm()).fold(0.0, f64::max);
    let bound = gronwall_bound(y_sup, kernel.kappa_star, game.c, kernel.alpha, game.horizon())?;
    let sup_norm = motion.sup_norm();
    Ok(AprioriReport {
        sup_norm,
        bound,
        ok: sup_norm <= bound + APRIORI_SLACK,
    })
}

/// A position at `t_index` reached from `pos` by random piecewise-constant
/// controls with random switching nodes.
pub fn sample_position<R: rand::Rng>(game: &GameSpec, pos: &Position, t_index: usize, rng: &mut R) -> Result<Position> {
    if t_index < pos.t_index() || t_index > game.system.grid().cells() {
        return Err(Error::IndexOutOfRange {
            index: t_index,
            valid: format!("{}..={}", pos.t_index(), game.system.grid().cells()),
        });
    }
    let mut p = pos.clone();
    while p.t_index() < t_index {
        let len = rng.gen_range(1..=(t_index - p.t_index()));
        let u = rng.gen_range(0..game.p_grid.len());
        let v = rng.gen_range(0..game.q_grid.len());
        p = advance(game, &p, u, v, len)?;
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{fractional_linear, linear_pursuit, scalar_grid, BuiltinCosts, GameSpec};
    use crate::kernel::{make_counterexample_kernel, make_fractional_kernel, make_ode_kernel};
    use crate::numerics::mittag_leffler;
    use crate::position::{in_gk, GkParams, MasterGrid, VolterraSystem};
    use std::sync::Arc;

    fn s(v: f64) -> Vector {
        Vector::from_element(1, v)
    }

    fn frac_game(alpha: f64, lambda: f64, cells: usize) -> GameSpec {
        let grid = MasterGrid::uniform(1.0, cells).unwrap();
        let sys = VolterraSystem::with_free_term(grid, make_fractional_kernel(&[alpha], 1.0).unwrap(), |_| s(1.0))
            .unwrap();
        fractional_linear(sys, lambda, scalar_grid(&[0.0]), scalar_grid(&[0.0]), &BuiltinCosts::default()).unwrap()
    }

    fn pursuit(cells: usize) -> GameSpec {
        let grid = MasterGrid::uniform(1.0, cells).unwrap();
        let sys = VolterraSystem::with_free_term(grid, make_ode_kernel(1, 0.5, 1.0).unwrap(), |_| s(1.0)).unwrap();
        linear_pursuit(sys, scalar_grid(&[-1.0, 0.0, 1.0]), scalar_grid(&[-0.5, 0.0, 0.5]), &BuiltinCosts::default())
            .unwrap()
    }

    #[test]
    fn zero_dynamics_follow_extension() {
        let g = frac_game(0.6, 0.0, 20);
        let start = Position::from_generator(g.system.clone(), vec![s(0.4); 7]).unwrap();
        let m = solve_motion(&g, &start, &[0; 13], &[0; 13]).unwrap();
        assert_eq!(m.x, start.extend_a());
    }

    #[test]
    fn ode_constant_controls_are_exact_lines() {
        let g = pursuit(16);
        let start = advance(&g, &Position::initial(g.system.clone()), 2, 0, 4).unwrap();
        let x0 = start.current()[0];
        let m = solve_motion(&g, &start, &[0; 12], &[2; 12]).unwrap();
        for j in 4..=16 {
            let tau = j as f64 / 16.0;
            assert!((m.x[j][0] - (x0 - 0.5 * (tau - 0.25))).abs() < 1e-12);
        }
        assert_eq!(&m.x[..=4], start.w());
    }

    #[test]
    fn fractional_relaxation_matches_mittag_leffler() {
        let exact = mittag_leffler(0.5, -1.0).unwrap();
        let mut last = f64::INFINITY;
        for cells in [64, 128, 256, 512] {
            let g = frac_game(0.5, -1.0, cells);
            let m = solve_motion(&g, &Position::initial(g.system.clone()), &vec![0; cells], &vec![0; cells]).unwrap();
            let err = (m.x[cells][0] - exact).abs() / exact;
            assert!(err < last, "cells {cells}: {err} !< {last}");
            last = err;
        }
        assert!(last < 1e-3);
    }

    #[test]
    fn motion_reconstructs_from_its_generator() {
        let g = frac_game(0.7, -0.8, 32);
        let m = solve_motion(&g, &Position::initial(g.system.clone()), &[0; 32], &[0; 32]).unwrap();
        let p = Position::from_generator(g.system.clone(), m.ell.clone()).unwrap();
        assert_eq!(p.w(), m.x.as_slice());
        for (c, e) in m.ell.iter().enumerate() {
            let fx = (g.f)(g.system.grid().node(c + 1), &m.x[c + 1], &g.p_grid[0], &g.q_grid[0]);
            assert!((e - fx).norm() < 1e-11);
        }
    }

    #[test]
    fn semigroup_edges_and_interior() {
        let grid = MasterGrid::uniform(1.5, 24).unwrap();
        let sys = VolterraSystem::with_free_term(grid, make_fractional_kernel(&[0.4], 1.5).unwrap(), |t| s(1.0 + t))
            .unwrap();
        let mut g = fractional_linear(sys, -0.5, scalar_grid(&[-1.0, 1.0]), scalar_grid(&[-0.5, 0.5]), &BuiltinCosts::default())
            .unwrap();
        g.f = Arc::new(|tau, x, u, v| Vector::from_element(1, 0.5 * (x[0] * tau).sin() + 0.3 * u[0] * x[0].cos() + v[0]));
        let start = advance(&g, &Position::initial(g.system.clone()), 1, 0, 3).unwrap();
        let us: Vec<usize> = (0..21).map(|k| k % 2).collect();
        let vs: Vec<usize> = (0..21).map(|k| (k / 3) % 2).collect();
        assert_eq!(check_semigroup(&g, &start, &us, &vs, 3).unwrap(), 0.0);
        assert_eq!(check_semigroup(&g, &start, &us, &vs, 24).unwrap(), 0.0);
        assert!(check_semigroup(&g, &start, &us, &vs, 11).unwrap() <= 1e-9);
        assert!(check_semigroup(&g, &start, &us, &vs, 2).is_err());
    }

    #[test]
    fn picard_failures_are_reported() {
        let mut g = frac_game(0.5, -1.0, 8);
        g.f = Arc::new(|_, x, _, _| x * -5.0);
        let err = solve_motion(&g, &Position::initial(g.system.clone()), &[0; 8], &[0; 8]).unwrap_err();
        assert!(matches!(err, Error::PicardNonConvergence { node: 1, .. }), "{err:?}");
        g.f = Arc::new(|_, _, _, _| s(f64::NAN));
        let err = solve_motion(&g, &Position::initial(g.system.clone()), &[0; 8], &[0; 8]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { node: 1, .. }));
    }

    #[test]
    fn apriori_bound_holds_for_honest_growth() {
        let grid = MasterGrid::uniform(1.0, 64).unwrap();
        let sys = VolterraSystem::with_free_term(grid, make_fractional_kernel(&[0.6], 1.0).unwrap(), |_| s(0.5))
            .unwrap();
        let mut g = fractional_linear(sys, 1.0, scalar_grid(&[0.0]), scalar_grid(&[0.0]), &BuiltinCosts::default()).unwrap();
        g.f = Arc::new(|_, x, _, _| x * (1.0 / (1.0 + x.norm())) + x);
        g.c = 2.0;
        let m = solve_motion(&g, &Position::initial(g.system.clone()), &[0; 64], &[0; 64]).unwrap();
        let r = check_apriori_bound(&m, &g).unwrap();
        assert!(r.ok, "{r:?}");

        let quiet = frac_game(0.5, 0.0, 16);
        let m = solve_motion(&quiet, &Position::initial(quiet.system.clone()), &[0; 16], &[0; 16]).unwrap();
        assert!(check_apriori_bound(&m, &quiet).unwrap().ok);
    }

    #[test]
    fn understated_growth_is_reported() {
        let mut g = frac_game(0.5, 3.0, 64);
        g.c = 1e-3;
        let m = solve_motion(&g, &Position::initial(g.system.clone()), &[0; 64], &[0; 64]).unwrap();
        assert!(!check_apriori_bound(&m, &g).unwrap().ok);
    }

    #[test]
    fn motions_stay_in_g1() {
        let g = pursuit(16);
        let params = GkParams::new(1, g.c).unwrap();
        let m = solve_motion(
            &g,
            &Position::initial(g.system.clone()),
            &[0, 1, 2, 0, 0, 0, 2, 2, 1, 1, 0, 2, 0, 1, 2, 0],
            &[2, 2, 0, 1, 0, 2, 0, 0, 1, 2, 2, 0, 1, 1, 0, 2],
        )
        .unwrap();
        for j in 0..=16 {
            assert!(in_gk(&m.position_at(j), params));
        }
    }

    #[test]
    fn counterexample_motion_runs() {
        let grid = MasterGrid::uniform(2.0, 16).unwrap();
        let sys = VolterraSystem::with_free_term(grid, make_counterexample_kernel(1.0, 2.0).unwrap(), |_| s(0.0))
            .unwrap();
        let g = linear_pursuit(sys, scalar_grid(&[1.0]), scalar_grid(&[0.0]), &BuiltinCosts::default()).unwrap();
        let m = solve_motion(&g, &Position::initial(g.system.clone()), &[0; 16], &[0; 16]).unwrap();
        assert!(m.x[..=8].iter().all(|v| v[0] == 0.0));
        // x(2) = ∫_0^2 (2 - 1) dxi
        assert!((m.x[16][0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn determinism() {
        let g = frac_game(0.5, -1.0, 50);
        let a = solve_motion(&g, &Position::initial(g.system.clone()), &[0; 50], &[0; 50]).unwrap();
        let b = solve_motion(&g, &Position::initial(g.system.clone()), &[0; 50], &[0; 50]).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.ell, b.ell);
    }
}
