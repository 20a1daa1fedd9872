//! Game data, the cost functional and the Hamiltonians.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dynamics::Motion;
use crate::error::{invalid, Result};
use crate::position::{Vector, VolterraSystem};

pub type DynamicsFn = Arc<dyn Fn(f64, &Vector, &Vector, &Vector) -> Vector + Send + Sync>;
pub type RunningCostFn = Arc<dyn Fn(f64, &Vector, &Vector, &Vector) -> f64 + Send + Sync>;
/// Terminal functional of the trajectory node samples on `[0, T]`.
pub type TerminalFn = Arc<dyn Fn(&[Vector]) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub picard_tol: f64,
    pub picard_max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            picard_tol: 1e-12,
            picard_max_iter: 100,
        }
    }
}

#[derive(Clone)]
pub struct GameSpec {
    pub name: String,
    pub system: Arc<VolterraSystem>,
    pub f: DynamicsFn,
    pub chi: RunningCostFn,
    pub sigma: TerminalFn,
    pub p_grid: Vec<Vector>,
    pub q_grid: Vec<Vector>,
    /// Growth constant: `||f(tau, x, u, v)|| <= c (1 + ||x||)`.
    pub c: f64,
    pub u_star: Vector,
    pub v_star: Vector,
    pub solver: SolverConfig,
}

impl fmt::Debug for GameSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GameSpec")
            .field("name", &self.name)
            .field("n", &self.n())
            .field("cells", &self.system.grid().cells())
            .field("p_grid", &self.p_grid.len())
            .field("q_grid", &self.q_grid.len())
            .field("c", &self.c)
            .finish()
    }
}

impl GameSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        system: Arc<VolterraSystem>,
        f: DynamicsFn,
        chi: RunningCostFn,
        sigma: TerminalFn,
        p_grid: Vec<Vector>,
        q_grid: Vec<Vector>,
        c: f64,
    ) -> Result<Self> {
        if p_grid.is_empty() {
            return Err(invalid("p_grid", "first player's control grid is empty"));
        }
        if q_grid.is_empty() {
            return Err(invalid("q_grid", "second player's control grid is empty"));
        }
        if p_grid.iter().any(|u| u.len() != p_grid[0].len()) {
            return Err(invalid("p_grid", "controls have mixed dimensions"));
        }
        if q_grid.iter().any(|v| v.len() != q_grid[0].len()) {
            return Err(invalid("q_grid", "controls have mixed dimensions"));
        }
        if !(c > 0.0 && c.is_finite()) {
            return Err(invalid("c", format!("{c} must be positive")));
        }
        let probe = f(0.0, &system.y()[0], &p_grid[0], &q_grid[0]);
        if probe.len() != system.n() {
            return Err(invalid(
                "f",
                format!("returned dimension {} for n = {}", probe.len(), system.n()),
            ));
        }
        let u_star = p_grid[0].clone();
        let v_star = q_grid[0].clone();
        Ok(Self {
            name: name.into(),
            system,
            f,
            chi,
            sigma,
            p_grid,
            q_grid,
            c,
            u_star,
            v_star,
            solver: SolverConfig::default(),
        })
    }

    pub fn with_terminal_controls(mut self, u_star: Vector, v_star: Vector) -> Self {
        self.u_star = u_star;
        self.v_star = v_star;
        self
    }

    pub fn with_solver(mut self, solver: SolverConfig) -> Self {
        self.solver = solver;
        self
    }

    pub fn n(&self) -> usize {
        self.system.n()
    }

    pub fn horizon(&self) -> f64 {
        self.system.grid().horizon()
    }

    /// Largest sampled `||f|| / (1 + ||x||)`; at most `c` when the declared
    /// growth constant is honest on the samples.
    pub fn probe_growth(&self, samples: &[(f64, Vector)]) -> f64 {
        let mut best = 0.0_f64;
        for (tau, x) in samples {
            for u in &self.p_grid {
                for v in &self.q_grid {
                    best = best.max((self.f)(*tau, x, u, v).norm() / (1.0 + x.norm()));
                }
            }
        }
        best
    }
}

/// `sigma(x) + Σ chi(tau_c, x_c, u_c, v_c) |cell c|` over the cells after the start.
pub fn cost_j(game: &GameSpec, motion: &Motion) -> f64 {
    let grid = game.system.grid();
    let start = motion.start.t_index();
    let mut running = 0.0;
    for (k, (ui, vi)) in motion.u_rec.iter().zip(&motion.v_rec).enumerate() {
        let c = start + k;
        running += (game.chi)(grid.node(c), &motion.x[c], &game.p_grid[*ui], &game.q_grid[*vi]) * grid.width(c);
    }
    (game.sigma)(&motion.x) + running
}

/// `h = <s, f(tau, x, u, v)> + chi(tau, x, u, v)`.
pub fn hamiltonian_h(game: &GameSpec, tau: f64, x: &Vector, u: &Vector, v: &Vector, s: &Vector) -> f64 {
    s.dot(&(game.f)(tau, x, u, v)) + (game.chi)(tau, x, u, v)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HamiltonianValue {
    pub lower: f64,
    pub upper: f64,
    pub gap: f64,
}

fn h_table(game: &GameSpec, tau: f64, x: &Vector, s: &Vector) -> Vec<Vec<f64>> {
    game.p_grid
        .iter()
        .map(|u| game.q_grid.iter().map(|v| hamiltonian_h(game, tau, x, u, v, s)).collect())
        .collect()
}

/// Lower `max_v min_u h` and upper `min_u max_v h` over the control grids.
pub fn hamiltonians(game: &GameSpec, tau: f64, x: &Vector, s: &Vector) -> HamiltonianValue {
    let table = h_table(game, tau, x, s);
    let nq = game.q_grid.len();
    let lower = (0..nq)
        .map(|j| table.iter().map(|row| row[j]).fold(f64::INFINITY, f64::min))
        .fold(f64::NEG_INFINITY, f64::max);
    let upper = table
        .iter()
        .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .fold(f64::INFINITY, f64::min);
    HamiltonianValue {
        lower,
        upper,
        gap: upper - lower,
    }
}

/// Index of the first `u` attaining `min_u max_v h`.
pub fn argmin_max(game: &GameSpec, tau: f64, x: &Vector, s: &Vector) -> usize {
    let table = h_table(game, tau, x, s);
    let mut best = (0, f64::INFINITY);
    for (i, row) in table.iter().enumerate() {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if m < best.1 {
            best = (i, m);
        }
    }
    best.0
}

/// Index of the first `v` attaining `max_v min_u h`.
pub fn argmax_min(game: &GameSpec, tau: f64, x: &Vector, s: &Vector) -> usize {
    let table = h_table(game, tau, x, s);
    let mut best = (0, f64::NEG_INFINITY);
    for j in 0..game.q_grid.len() {
        let m = table.iter().map(|row| row[j]).fold(f64::INFINITY, f64::min);
        if m > best.1 {
            best = (j, m);
        }
    }
    best.0
}

pub const DEFAULT_ISAACS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IsaacsReport {
    pub samples: usize,
    pub max_gap: f64,
    pub worst_sample: usize,
    /// Smallest `upper - lower`; negative only through a bug.
    pub min_gap: f64,
    pub tol: f64,
    pub pass: bool,
}

pub fn check_isaacs(game: &GameSpec, samples: &[(f64, Vector, Vector)], tol: f64) -> Result<IsaacsReport> {
    if samples.is_empty() {
        return Err(invalid("samples", "need at least one sample"));
    }
    let mut max_gap = f64::NEG_INFINITY;
    let mut min_gap = f64::INFINITY;
    let mut worst = 0;
    for (k, (tau, x, s)) in samples.iter().enumerate() {
        let hv = hamiltonians(game, *tau, x, s);
        if hv.gap > max_gap {
            max_gap = hv.gap;
            worst = k;
        }
        min_gap = min_gap.min(hv.gap);
    }
    Ok(IsaacsReport {
        samples: samples.len(),
        max_gap,
        worst_sample: worst,
        min_gap,
        tol,
        pass: max_gap <= tol,
    })
}

/// Separable costs shared by the builtin games:
/// `chi = state_weight ||x||^2 + u_weight ||u||^2 - v_weight ||v||^2` and
/// `sigma = ||x(T) - target||` (or its square).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuiltinCosts {
    pub state_weight: f64,
    pub u_weight: f64,
    pub v_weight: f64,
    pub target: Option<Vec<f64>>,
    pub squared_terminal: bool,
}

impl Default for BuiltinCosts {
    fn default() -> Self {
        Self {
            state_weight: 0.0,
            u_weight: 0.0,
            v_weight: 0.0,
            target: None,
            squared_terminal: false,
        }
    }
}

impl BuiltinCosts {
    fn running(&self) -> RunningCostFn {
        let (a, b, c) = (self.state_weight, self.u_weight, self.v_weight);
        Arc::new(move |_, x, u, v| a * x.norm_squared() + b * u.norm_squared() - c * v.norm_squared())
    }

    fn terminal(&self, n: usize) -> Result<TerminalFn> {
        let target = match &self.target {
            Some(t) if t.len() != n => {
                return Err(invalid("target", format!("has dimension {} for n = {n}", t.len())))
            }
            Some(t) => Vector::from_vec(t.clone()),
            None => Vector::zeros(n),
        };
        let squared = self.squared_terminal;
        Ok(Arc::new(move |x: &[Vector]| {
            let d = (&x[x.len() - 1] - &target).norm();
            if squared {
                d * d
            } else {
                d
            }
        }))
    }
}

fn max_sum_norm(p: &[Vector], q: &[Vector]) -> Result<f64> {
    let mut best = 0.0_f64;
    for u in p {
        for v in q {
            if u.len() != v.len() {
                return Err(invalid("controls", "u and v must share the state dimension"));
            }
            best = best.max((u + v).norm());
        }
    }
    Ok(best)
}

/// `f = u + v`: pursuit on the state space.
pub fn linear_pursuit(
    system: Arc<VolterraSystem>,
    p_grid: Vec<Vector>,
    q_grid: Vec<Vector>,
    costs: &BuiltinCosts,
) -> Result<GameSpec> {
    fractional_linear(system, 0.0, p_grid, q_grid, costs).map(|mut g| {
        g.name = "linear_pursuit".into();
        g
    })
}

/// Scalar `f = u v`; fails the Isaacs condition on symmetric grids.
pub fn bilinear(
    system: Arc<VolterraSystem>,
    p_grid: Vec<f64>,
    q_grid: Vec<f64>,
    costs: &BuiltinCosts,
) -> Result<GameSpec> {
    if system.n() != 1 {
        return Err(invalid("n", "the bilinear game is scalar"));
    }
    let c = p_grid
        .iter()
        .flat_map(|u| q_grid.iter().map(move |v| (u * v).abs()))
        .fold(0.0_f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let sigma = costs.terminal(1)?;
    GameSpec::new(
        "bilinear",
        system,
        Arc::new(|_, _, u, v| Vector::from_element(1, u[0] * v[0])),
        costs.running(),
        sigma,
        p_grid.into_iter().map(|u| Vector::from_element(1, u)).collect(),
        q_grid.into_iter().map(|v| Vector::from_element(1, v)).collect(),
        c,
    )
}

/// `f = lambda x + u + v`.
pub fn fractional_linear(
    system: Arc<VolterraSystem>,
    lambda: f64,
    p_grid: Vec<Vector>,
    q_grid: Vec<Vector>,
    costs: &BuiltinCosts,
) -> Result<GameSpec> {
    let n = system.n();
    if p_grid.iter().chain(&q_grid).any(|c| c.len() != n) {
        return Err(invalid("controls", format!("controls must have dimension n = {n}")));
    }
    let c = lambda.abs().max(max_sum_norm(&p_grid, &q_grid)?).max(f64::MIN_POSITIVE);
    let sigma = costs.terminal(n)?;
    GameSpec::new(
        "fractional_linear",
        system,
        Arc::new(move |_, x, u, v| x * lambda + u + v),
        costs.running(),
        sigma,
        p_grid,
        q_grid,
        c,
    )
}

/// Scalar controls as one-element vectors.
pub fn scalar_grid(values: &[f64]) -> Vec<Vector> {
    values.iter().map(|v| Vector::from_element(1, *v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::solve_motion;
    use crate::kernel::make_ode_kernel;
    use crate::position::{MasterGrid, Position};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn s(v: f64) -> Vector {
        Vector::from_element(1, v)
    }

    fn ode_system(cells: usize, horizon: f64, x0: f64) -> Arc<VolterraSystem> {
        let grid = MasterGrid::uniform(horizon, cells).unwrap();
        VolterraSystem::with_free_term(grid, make_ode_kernel(1, 0.5, horizon).unwrap(), |_| s(x0)).unwrap()
    }

    fn pursuit(cells: usize) -> GameSpec {
        linear_pursuit(
            ode_system(cells, 1.0, 1.0),
            scalar_grid(&[-1.0, 0.0, 1.0]),
            scalar_grid(&[-0.5, 0.0, 0.5]),
            &BuiltinCosts::default(),
        )
        .unwrap()
    }

    fn bilinear_game() -> GameSpec {
        bilinear(ode_system(4, 1.0, 0.0), vec![-1.0, 1.0], vec![-1.0, 1.0], &BuiltinCosts::default()).unwrap()
    }

    #[test]
    fn h_examples() {
        let g = pursuit(4);
        assert_eq!(hamiltonian_h(&g, 0.0, &s(3.0), &s(1.0), &s(0.5), &s(0.0)), 0.0);
        assert_eq!(hamiltonian_h(&g, 0.0, &s(3.0), &s(1.0), &s(0.5), &s(2.0)), 3.0);
        let b = bilinear_game();
        assert_eq!(hamiltonian_h(&b, 0.0, &s(0.0), &s(3.0), &s(-1.0), &s(2.0)), -6.0);
    }

    #[test]
    fn bilinear_gap_is_two_s() {
        let b = bilinear_game();
        for sv in [1.0, -0.3, 2.5, 0.0] {
            let hv = hamiltonians(&b, 0.2, &s(0.7), &s(sv));
            assert_eq!(hv.lower, -sv.abs());
            assert_eq!(hv.upper, sv.abs());
            assert_eq!(hv.gap, 2.0 * sv.abs());
        }
        let r = check_isaacs(&b, &[(0.0, s(0.0), s(1.0))], DEFAULT_ISAACS_TOL).unwrap();
        assert!(!r.pass);
    }

    #[test]
    fn separable_game_passes_isaacs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let costs = BuiltinCosts {
            state_weight: 0.3,
            u_weight: 1.0,
            v_weight: 0.5,
            ..Default::default()
        };
        let g = fractional_linear(
            ode_system(4, 1.0, 0.0),
            -0.7,
            scalar_grid(&[-1.0, -0.2, 0.4, 1.0]),
            scalar_grid(&[-0.5, 0.1, 0.5]),
            &costs,
        )
        .unwrap();
        let samples: Vec<_> = (0..100)
            .map(|_| (rng.gen_range(0.0..1.0), s(rng.gen_range(-2.0..2.0)), s(rng.gen_range(-3.0..3.0))))
            .collect();
        let r = check_isaacs(&g, &samples, DEFAULT_ISAACS_TOL).unwrap();
        assert!(r.pass && r.max_gap <= 1e-12 && r.min_gap >= 0.0, "{r:?}");
        assert!(check_isaacs(&g, &[], 1e-9).is_err());
    }

    #[test]
    fn singleton_grids_collapse() {
        let g = linear_pursuit(ode_system(2, 1.0, 0.0), scalar_grid(&[0.3]), scalar_grid(&[0.1]), &BuiltinCosts::default())
            .unwrap();
        let hv = hamiltonians(&g, 0.0, &s(1.0), &s(2.0));
        assert_eq!(hv.lower, hv.upper);
        assert!((hv.lower - 0.8).abs() < 1e-15);
    }

    #[test]
    fn permutation_invariance() {
        let b = bilinear(ode_system(2, 1.0, 0.0), vec![1.0, -1.0, 0.3], vec![0.2, -1.0, 1.0], &BuiltinCosts::default())
            .unwrap();
        let b2 = bilinear(ode_system(2, 1.0, 0.0), vec![-1.0, 0.3, 1.0], vec![1.0, 0.2, -1.0], &BuiltinCosts::default())
            .unwrap();
        for sv in [-1.0, 0.5, 2.0] {
            assert_eq!(hamiltonians(&b, 0.0, &s(0.0), &s(sv)), hamiltonians(&b2, 0.0, &s(0.0), &s(sv)));
        }
    }

    #[test]
    fn argopt_oracles() {
        let g = pursuit(4);
        assert_eq!(argmin_max(&g, 0.0, &s(1.0), &s(1.0)), 0);
        assert_eq!(argmin_max(&g, 0.0, &s(1.0), &s(-1.0)), 2);
        assert_eq!(argmax_min(&g, 0.0, &s(1.0), &s(-1.0)), 0);
        assert_eq!(argmax_min(&g, 0.0, &s(1.0), &s(1.0)), 2);
        // all tie at s = 0: lowest index
        assert_eq!(argmin_max(&g, 0.0, &s(1.0), &s(0.0)), 0);
    }

    #[test]
    fn cost_examples() {
        let g = pursuit(8);
        let m = solve_motion(&g, &Position::initial(g.system.clone()), &[0; 8], &[2; 8]).unwrap();
        assert!((cost_j(&g, &m) - 0.5).abs() < 1e-14);

        let ones = GameSpec {
            chi: Arc::new(|_, _, _, _| 1.0),
            sigma: Arc::new(|_| 0.0),
            ..g.clone()
        };
        let start = Position::initial(g.system.clone());
        let m = solve_motion(&ones, &start, &[1; 8], &[1; 8]).unwrap();
        let p = crate::dynamics::advance(&ones, &start, 1, 1, 3).unwrap();
        let m2 = solve_motion(&ones, &p, &[1; 5], &[1; 5]).unwrap();
        assert!((cost_j(&ones, &m) - 1.0).abs() < 1e-15);
        assert!((cost_j(&ones, &m2) - 0.625).abs() < 1e-15);
    }

    #[test]
    fn running_cost_against_midpoint_oracle() {
        let cells = 256;
        let costs = BuiltinCosts {
            state_weight: 1.0,
            ..Default::default()
        };
        let g = linear_pursuit(ode_system(cells, 1.0, 1.0), scalar_grid(&[1.0]), scalar_grid(&[-0.5]), &costs).unwrap();
        let m = solve_motion(&g, &Position::initial(g.system.clone()), &vec![0; cells], &vec![0; cells]).unwrap();
        // x = 1 + tau/2, sigma = |x(1)| = 1.5
        let panels = 1_000_000;
        let h = 1.0 / panels as f64;
        let oracle: f64 = (0..panels)
            .map(|k| {
                let t = (k as f64 + 0.5) * h;
                (1.0 + 0.5 * t).powi(2) * h
            })
            .sum::<f64>()
            + 1.5;
        let got = cost_j(&g, &m);
        assert!((got - oracle).abs() / oracle < 1e-3, "{got} vs {oracle}");
    }

    #[test]
    fn cost_additive_across_split() {
        let costs = BuiltinCosts {
            state_weight: 1.0,
            u_weight: 0.5,
            squared_terminal: true,
            ..Default::default()
        };
        let g = linear_pursuit(ode_system(12, 1.0, 0.3), scalar_grid(&[-1.0, 1.0]), scalar_grid(&[-0.5, 0.5]), &costs)
            .unwrap();
        let us = [0, 1, 1, 0, 0, 1, 0, 1, 1, 1, 0, 0];
        let vs = [1, 1, 0, 0, 1, 0, 1, 1, 0, 0, 0, 1];
        let start = Position::initial(g.system.clone());
        let full = solve_motion(&g, &start, &us, &vs).unwrap();
        let split = 5;
        let mid = full.position_at(split);
        let tail = solve_motion(&g, &mid, &us[split..], &vs[split..]).unwrap();
        let grid = g.system.grid();
        let stage: f64 = (0..split)
            .map(|c| (g.chi)(grid.node(c), &full.x[c], &g.p_grid[us[c]], &g.q_grid[vs[c]]) * grid.width(c))
            .sum();
        assert!((cost_j(&g, &full) - (stage + cost_j(&g, &tail))).abs() < 1e-14);
    }

    #[test]
    fn growth_probe_respects_declared_c() {
        let g = fractional_linear(
            ode_system(4, 1.0, 0.0),
            -1.5,
            scalar_grid(&[-1.0, 1.0]),
            scalar_grid(&[-0.5, 0.5]),
            &BuiltinCosts::default(),
        )
        .unwrap();
        let samples: Vec<_> = (-20..=20).map(|k| (0.0, s(k as f64 * 0.5))).collect();
        assert!(g.probe_growth(&samples) <= g.c);
    }
}
