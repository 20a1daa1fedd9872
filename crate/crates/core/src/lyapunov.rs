//! The Lyapunov–Krasovskii functional `ν_ε` and the gradient of `μ_ε`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::sample_position;
use crate::error::{invalid, Error, Result};
use crate::game::GameSpec;
use crate::kernel::Matrix;
use crate::numerics::tail_integral;
use crate::position::{Position, Vector, VolterraSystem};

/// `min(1 - alpha, alpha / 2) / 2`.
pub fn default_alpha_prime(alpha: f64) -> f64 {
    (1.0 - alpha).min(alpha / 2.0) / 2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NuParams {
    pub epsilon: f64,
    pub alpha: f64,
    pub q: f64,
    pub alpha_prime: f64,
    /// `(1 - alpha - alpha') q`.
    pub tail_exponent: f64,
    pub c1: f64,
    pub horizon: f64,
}

impl NuParams {
    pub fn new(epsilon: f64, alpha: f64, horizon: f64, alpha_prime: Option<f64>) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(invalid("epsilon", format!("{epsilon} is outside (0, 1]")));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(invalid("alpha", format!("{alpha} is outside (0, 1)")));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(invalid("horizon", "must be positive"));
        }
        let upper = (1.0 - alpha).min(alpha / 2.0);
        let alpha_prime = alpha_prime.unwrap_or_else(|| default_alpha_prime(alpha));
        if !(alpha_prime > 0.0 && alpha_prime < upper) {
            return Err(invalid("alpha_prime", format!("{alpha_prime} is outside (0, {upper})")));
        }
        let q = 2.0 / (2.0 - alpha);
        let tail_exponent = (1.0 - alpha - alpha_prime) * q;
        let c1 = 1.0 + horizon.powf(1.0 - tail_exponent) / (1.0 - tail_exponent);
        Ok(Self {
            epsilon,
            alpha,
            q,
            alpha_prime,
            tail_exponent,
            c1,
            horizon,
        })
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        Self::new(epsilon, self.alpha, self.horizon, Some(self.alpha_prime))
    }

    /// `ε^(2/(q-1))`.
    pub fn floor(&self) -> f64 {
        self.epsilon.powf(2.0 / (self.q - 1.0))
    }

    /// `C1 ε^(q/(q-1))`.
    pub fn offset(&self) -> f64 {
        self.c1 * self.epsilon.powf(self.q / (self.q - 1.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradMu {
    pub vector: Vec<f64>,
    /// The coinvariant time derivative, identically zero.
    pub t_derivative: f64,
}

/// `ν_ε` bound to one system, with its tail weights precomputed.
#[derive(Debug, Clone)]
pub struct NuFunctional {
    system: Arc<VolterraSystem>,
    params: NuParams,
    tail_weights: Vec<f64>,
    tail_total: f64,
}

impl NuFunctional {
    pub fn new(system: Arc<VolterraSystem>, params: NuParams) -> Result<Self> {
        let grid = system.grid();
        if (grid.horizon() - params.horizon).abs() > 1e-12 * params.horizon {
            return Err(invalid("horizon", "parameters and grid disagree"));
        }
        if (system.kernel().alpha - params.alpha).abs() > 0.0 {
            return Err(invalid("alpha", "parameters must use the kernel's singularity order"));
        }
        let horizon = grid.horizon();
        let tail_weights: Vec<f64> = grid
            .nodes()
            .windows(2)
            .map(|c| tail_integral(horizon, c[0], c[1], params.tail_exponent))
            .collect();
        let tail_total = horizon.powf(1.0 - params.tail_exponent) / (1.0 - params.tail_exponent);
        Ok(Self {
            system,
            params,
            tail_weights,
            tail_total,
        })
    }

    pub fn for_system(system: Arc<VolterraSystem>, epsilon: f64, alpha_prime: Option<f64>) -> Result<Self> {
        let params = NuParams::new(epsilon, system.kernel().alpha, system.grid().horizon(), alpha_prime)?;
        Self::new(system, params)
    }

    pub fn params(&self) -> &NuParams {
        &self.params
    }

    pub fn system(&self) -> &Arc<VolterraSystem> {
        &self.system
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        Self::new(self.system.clone(), self.params.with_epsilon(epsilon)?)
    }

    fn check(&self, p: &Position) -> Result<()> {
        if !Arc::ptr_eq(p.system(), &self.system) {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }

    pub fn nu(&self, p1: &Position, p2: &Position) -> Result<f64> {
        self.check(p1)?;
        self.check(p2)?;
        Ok(self.nu_extensions(&p1.extend_a(), &p2.extend_a()))
    }

    /// `ν_ε` from precomputed extensions.
    ///
    /// Written as a sum of nonnegative excesses over the floor `ε^(2/(q-1))` plus a
    /// roundoff-sized telescoping remainder, which keeps the diagonal at zero.
    pub fn nu_extensions(&self, a1: &[Vector], a2: &[Vector]) -> f64 {
        let e = self.params.floor();
        let half_q = self.params.q / 2.0;
        let excess = |d2: f64| e.powf(half_q) * (half_q * (d2 / e).ln_1p()).exp_m1();
        let ex: Vec<f64> = a1.iter().zip(a2).map(|(x, y)| excess((x - y).norm_squared())).collect();
        let last = ex.len() - 1;
        let mut integral = 0.0;
        for (c, w) in self.tail_weights.iter().enumerate() {
            let g = if c + 1 == last { ex[c] } else { 0.5 * (ex[c] + ex[c + 1]) };
            integral += w * g;
        }
        let weight_sum: f64 = self.tail_weights.iter().sum();
        let base = e.powf(half_q);
        ex[last] + integral + base * (weight_sum - self.tail_total) + base * (1.0 + self.tail_total)
            - self.params.offset()
    }

    /// `∇μ_ε^{(τ, r)}(t, w)` for `target = (t, w)`, `reference = (τ, r)`, `t < T`.
    pub fn grad_mu(&self, target: &Position, reference: &Position) -> Result<GradMu> {
        self.check(target)?;
        self.check(reference)?;
        self.grad_mu_extensions(target.t_index(), &target.extend_a(), &reference.extend_a())
    }

    pub fn grad_mu_extensions(&self, t_index: usize, a: &[Vector], b: &[Vector]) -> Result<GradMu> {
        let grid = self.system.grid();
        let cells = grid.cells();
        if t_index >= cells {
            return Err(invalid("target", "gradient is defined for t < T only"));
        }
        let kernel = self.system.kernel();
        let (q, e) = (self.params.q, self.params.floor());
        let t = grid.node(t_index);
        let horizon = grid.horizon();
        let g: Vec<Vector> = a[t_index..]
            .iter()
            .zip(&b[t_index..])
            .map(|(x, y)| {
                let d = x - y;
                let scale = q / (e + d.norm_squared()).powf(1.0 - q / 2.0);
                d * scale
            })
            .collect();
        let last = g.len() - 1;
        let mut out = kernel.eval(horizon, t).transpose() * &g[last];
        for k in 0..last {
            let c = t_index + k;
            let w: Matrix = kernel.tail_cell_weight(t, grid.node(c), grid.node(c + 1), self.params.tail_exponent);
            let integrand = if k + 1 == last { g[k].clone() } else { (&g[k] + &g[k + 1]) * 0.5 };
            out.gemv_tr(1.0, &w, &integrand, 1.0);
        }
        Ok(GradMu {
            vector: out.as_slice().to_vec(),
            t_derivative: 0.0,
        })
    }

    /// `||a1(T) - a2(T)|| + ∫ ||a1 - a2|| (T - ξ)^(α - 1) dξ`, the left side of the growth bound.
    pub fn distance_functional(&self, a1: &[Vector], a2: &[Vector]) -> f64 {
        let grid = self.system.grid();
        let horizon = grid.horizon();
        let d: Vec<f64> = a1.iter().zip(a2).map(|(x, y)| (x - y).norm()).collect();
        let last = d.len() - 1;
        let mut integral = 0.0;
        for c in 0..last {
            let w = tail_integral(horizon, grid.node(c), grid.node(c + 1), 1.0 - self.params.alpha);
            let g = if c + 1 == last { d[c] } else { 0.5 * (d[c] + d[c + 1]) };
            integral += w * g;
        }
        d[last] + integral
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientRow {
    pub dt: f64,
    pub difference_quotient: f64,
    pub predicted: f64,
    pub abs_error: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientCheck {
    pub rows: Vec<GradientRow>,
    /// `error[k + 1] / error[k]` for successive rows.
    pub ratios: Vec<f64>,
    /// Mean of `log2(error[k] / error[k + 1]) / log2(dt[k] / dt[k + 1])`.
    pub order: f64,
}

/// Compares difference quotients of `μ = ν_ε(·, reference)` along the constant
/// generator `probe_ell` with `<∇μ, probe_ell>`.
pub fn check_ci_gradient(
    nu: &NuFunctional,
    target: &Position,
    reference: &Position,
    probe_ell: &Vector,
    dt_list: &[f64],
) -> Result<GradientCheck> {
    let grid = nu.system().grid();
    let t = target.t_index();
    let b = reference.extend_a();
    let a = target.extend_a();
    let base = nu.nu_extensions(&a, &b);
    let grad = nu.grad_mu_extensions(t, &a, &b)?;
    let predicted = Vector::from_vec(grad.vector).dot(probe_ell);
    let mut rows = Vec::new();
    for &dt in dt_list {
        let end = grid
            .nodes()
            .iter()
            .position(|&s| (s - (grid.node(t) + dt)).abs() <= 1e-9 * dt)
            .ok_or_else(|| invalid("dt_list", format!("t + {dt} is not a master node")))?;
        let mut ell = target.ell().to_vec();
        ell.resize(end, probe_ell.clone());
        let moved = Position::from_generator(nu.system().clone(), ell)?;
        let step = grid.node(end) - grid.node(t);
        let dq = (nu.nu_extensions(&moved.extend_a(), &b) - base) / step;
        let abs_error = (dq - predicted).abs();
        rows.push(GradientRow {
            dt: step,
            difference_quotient: dq,
            predicted,
            abs_error,
            rel_error: abs_error / predicted.abs().max(f64::MIN_POSITIVE),
        });
    }
    let ratios: Vec<f64> = rows.windows(2).map(|w| w[1].abs_error / w[0].abs_error).collect();
    let orders: Vec<f64> = rows
        .windows(2)
        .map(|w| (w[0].abs_error / w[1].abs_error).log2() / (w[0].dt / w[1].dt).log2())
        .collect();
    let order = if orders.is_empty() {
        f64::NAN
    } else {
        orders.iter().sum::<f64>() / orders.len() as f64
    };
    Ok(GradientCheck { rows, ratios, order })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientStudy {
    pub dt: Vec<f64>,
    /// `‖error(dt)‖₂` over the sample.
    pub errors: Vec<f64>,
    /// `‖error(dt)‖₂ / ‖⟨∇μ, ℓ⟩‖₂` over the sample.
    pub rel_errors: Vec<f64>,
    pub ratios: Vec<f64>,
    pub checks: Vec<GradientCheck>,
    /// Largest per-pair relative error at the smallest `dt`.
    pub worst_pair_rel: f64,
    pub worst_pair_ratio: f64,
}

/// Runs [`check_ci_gradient`] on each `(target, reference, probe)` case and
/// aggregates errors over the sample.
pub fn gradient_study(
    nu: &NuFunctional,
    cases: &[(Position, Position, Vector)],
    dt_list: &[f64],
) -> Result<GradientStudy> {
    if cases.is_empty() {
        return Err(invalid("cases", "must be nonempty"));
    }
    let checks = cases
        .par_iter()
        .map(|(p, r, l)| check_ci_gradient(nu, p, r, l, dt_list))
        .collect::<Result<Vec<_>>>()?;
    let dt: Vec<f64> = checks[0].rows.iter().map(|r| r.dt).collect();
    let pred = checks.iter().map(|c| c.rows[0].predicted.powi(2)).sum::<f64>().sqrt();
    let errors: Vec<f64> = (0..dt.len())
        .map(|k| checks.iter().map(|c| c.rows[k].abs_error.powi(2)).sum::<f64>().sqrt())
        .collect();
    let rel_errors = errors.iter().map(|e| e / pred.max(f64::MIN_POSITIVE)).collect();
    let ratios = errors.windows(2).map(|w| w[1] / w[0]).collect();
    let worst_pair_rel = checks
        .iter()
        .filter_map(|c| c.rows.last().map(|r| r.rel_error))
        .fold(0.0, f64::max);
    let worst_pair_ratio = checks.iter().flat_map(|c| c.ratios.iter().copied()).fold(0.0, f64::max);
    Ok(GradientStudy {
        dt,
        errors,
        rel_errors,
        ratios,
        checks,
        worst_pair_rel,
        worst_pair_ratio,
    })
}

/// `count` cases `(target, reference, probe)` for [`gradient_study`]: target and
/// reference reached by independent random-control motions at a common time
/// `t ∈ [1, cells - widest]` (at `t = 0` the two coincide), probe uniform in `[-1, 1]^n`.
pub fn sample_gradient_cases<R: rand::Rng>(
    game: &GameSpec,
    count: usize,
    widest: usize,
    rng: &mut R,
) -> Result<Vec<(Position, Position, Vector)>> {
    let cells = game.system.grid().cells();
    if widest == 0 || widest >= cells {
        return Err(invalid("widest", format!("must lie in 1..{cells}")));
    }
    let root = Position::initial(game.system.clone());
    let mut cases = Vec::with_capacity(count);
    for _ in 0..count {
        let t = rng.gen_range(1..=cells - widest);
        let p = sample_position(game, &root, t, rng)?;
        let r = sample_position(game, &root, t, rng)?;
        let probe = Vector::from_fn(game.n(), |_, _| rng.gen_range(-1.0..1.0));
        cases.push((p, r, probe));
    }
    Ok(cases)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NuIdentityReport {
    pub epsilon: f64,
    pub pairs: usize,
    /// `max |ν(p, p)|`.
    pub max_diagonal: f64,
    pub symmetric: bool,
    /// `max |ν(a_{t′}(p1), p2) − ν(p1, p2)|` over midpoint and terminal extensions.
    pub max_extension_defect: f64,
    pub min_nu: f64,
    pub pass: bool,
}

pub const NU_IDENTITY_TOL: f64 = 1e-10;
pub const NU_NONNEG_TOL: f64 = 1e-9;

/// Zero diagonal, exact symmetry, extension invariance and non-negativity.
pub fn check_nu_identities(nu: &NuFunctional, pairs: &[(Position, Position)]) -> Result<NuIdentityReport> {
    let cells = nu.system().grid().cells();
    let mut rep = NuIdentityReport {
        epsilon: nu.params().epsilon,
        pairs: pairs.len(),
        max_diagonal: 0.0,
        symmetric: true,
        max_extension_defect: 0.0,
        min_nu: f64::INFINITY,
        pass: false,
    };
    for (p1, p2) in pairs {
        rep.max_diagonal = rep.max_diagonal.max(nu.nu(p1, p1)?.abs()).max(nu.nu(p2, p2)?.abs());
        let v = nu.nu(p1, p2)?;
        rep.symmetric &= v == nu.nu(p2, p1)?;
        rep.min_nu = rep.min_nu.min(v);
        for t in [(p1.t_index() + cells) / 2, cells] {
            let e = p1.extended_to(t)?;
            rep.max_extension_defect = rep.max_extension_defect.max((nu.nu(&e, p2)? - v).abs());
        }
    }
    rep.pass = rep.max_diagonal <= NU_IDENTITY_TOL
        && rep.symmetric
        && rep.max_extension_defect <= NU_IDENTITY_TOL
        && rep.min_nu >= -NU_NONNEG_TOL;
    Ok(rep)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpsilonBounds {
    pub epsilon: f64,
    pub c2: f64,
    pub c3_gradient: f64,
    pub c3_antisymmetry: f64,
    pub min_nu: f64,
    /// Smallest `ν + C1 ε^(q/(q-1))`; strictly positive.
    pub min_shifted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NuBoundsReport {
    pub c2_hat: f64,
    pub c3_hat: f64,
    pub per_epsilon: Vec<EpsilonBounds>,
    /// `(max - min) / max` of the per-ε `Ĉ2`.
    pub c2_spread: f64,
    pub finite: bool,
}

/// Empirical constants of the growth and gradient bounds over sampled pairs.
pub fn check_nu_bounds(
    nu: &NuFunctional,
    samples: &[(Position, Position)],
    eps_list: &[f64],
    theta: f64,
) -> Result<NuBoundsReport> {
    if samples.is_empty() {
        return Err(invalid("samples", "need at least one pair"));
    }
    let kernel = nu.system().kernel();
    let hoelder = kernel.alpha.min(kernel.beta);
    let ext: Vec<(Vec<Vector>, Vec<Vector>)> = samples.iter().map(|(p, q)| (p.extend_a(), q.extend_a())).collect();
    let mut per_epsilon = Vec::new();
    for &eps in eps_list {
        let f = nu.with_epsilon(eps)?;
        let q = f.params.q;
        let mut row = EpsilonBounds {
            epsilon: eps,
            c2: 0.0,
            c3_gradient: 0.0,
            c3_antisymmetry: 0.0,
            min_nu: f64::INFINITY,
            min_shifted: f64::INFINITY,
        };
        for ((p1, p2), (a1, a2)) in samples.iter().zip(&ext) {
            let v = f.nu_extensions(a1, a2);
            let shifted = v + f.params.offset();
            row.min_nu = row.min_nu.min(v);
            row.min_shifted = row.min_shifted.min(shifted);
            row.c2 = row.c2.max(f.distance_functional(a1, a2) / shifted.powf(1.0 / q));
            if p1.t() <= theta && p2.t() <= theta {
                let g12 = Vector::from_vec(f.grad_mu_extensions(p1.t_index(), a1, a2)?.vector);
                row.c3_gradient = row.c3_gradient.max(g12.norm() / shifted.powf((q - 1.0) / q));
                if p1.t_index() != p2.t_index() {
                    let g21 = Vector::from_vec(f.grad_mu_extensions(p2.t_index(), a2, a1)?.vector);
                    let gap = (p1.t() - p2.t()).abs().powf(hoelder);
                    row.c3_antisymmetry = row.c3_antisymmetry.max((g12 + g21).norm() / gap);
                }
            }
        }
        per_epsilon.push(row);
    }
    let c2_hat = per_epsilon.iter().map(|r| r.c2).fold(0.0, f64::max);
    let c3_hat = per_epsilon
        .iter()
        .map(|r| r.c3_gradient.max(r.c3_antisymmetry))
        .fold(0.0, f64::max);
    let c2_min = per_epsilon.iter().map(|r| r.c2).fold(f64::INFINITY, f64::min);
    let c2_spread = if c2_hat > 0.0 { (c2_hat - c2_min) / c2_hat } else { 0.0 };
    Ok(NuBoundsReport {
        c2_hat,
        c3_hat,
        per_epsilon,
        c2_spread,
        finite: c2_hat.is_finite() && c3_hat.is_finite(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::advance;
    use crate::game::{fractional_linear, scalar_grid, BuiltinCosts, GameSpec};
    use crate::kernel::{make_fractional_kernel, make_ode_kernel};
    use crate::position::MasterGrid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn s(v: f64) -> Vector {
        Vector::from_element(1, v)
    }

    fn game(kernel: &str, cells: usize) -> GameSpec {
        let grid = MasterGrid::uniform(1.0, cells).unwrap();
        let k = match kernel {
            "ode" => make_ode_kernel(1, 0.5, 1.0).unwrap(),
            _ => make_fractional_kernel(&[0.5], 1.0).unwrap(),
        };
        let sys = VolterraSystem::with_free_term(grid, k, |t| s(1.0 - 0.5 * t)).unwrap();
        fractional_linear(sys, -0.5, scalar_grid(&[-1.0, 0.0, 1.0]), scalar_grid(&[-0.5, 0.5]), &BuiltinCosts::default())
            .unwrap()
    }

    fn random_position(g: &GameSpec, rng: &mut ChaCha8Rng, max_t: usize) -> Position {
        let mut p = Position::initial(g.system.clone());
        let t = rng.gen_range(0..=max_t);
        while p.t_index() < t {
            let len = rng.gen_range(1..=(t - p.t_index()));
            p = advance(g, &p, rng.gen_range(0..3), rng.gen_range(0..2), len).unwrap();
        }
        p
    }

    #[test]
    fn default_alpha_prime_examples() {
        assert_eq!(default_alpha_prime(0.5), 0.125);
        assert!((default_alpha_prime(0.9) - 0.05).abs() < 1e-15);
        for a in [0.01, 0.3, 0.66, 0.99] {
            let ap = default_alpha_prime(a);
            assert!(ap > 0.0 && ap < (1.0 - a).min(a / 2.0));
        }
    }

    #[test]
    fn params_invariants() {
        for a in [0.1, 0.5, 0.9] {
            let p = NuParams::new(0.3, a, 2.0, None).unwrap();
            assert!(p.q > 1.0 && p.q < 2.0);
            assert!(p.tail_exponent < 1.0);
            assert!(p.c1 > 1.0);
            assert!((p.floor().powf(p.q / 2.0) - p.epsilon.powf(p.q / (p.q - 1.0))).abs() < 1e-14);
        }
        assert!(NuParams::new(0.0, 0.5, 1.0, None).is_err());
        assert!(NuParams::new(0.5, 0.5, 1.0, Some(0.25)).is_err());
    }

    #[test]
    fn nu_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for kernel in ["ode", "frac"] {
            let g = game(kernel, 32);
            for eps in [1.0, 0.1, 0.01] {
                let f = NuFunctional::for_system(g.system.clone(), eps, None).unwrap();
                for _ in 0..20 {
                    let p1 = random_position(&g, &mut rng, 32);
                    let p2 = random_position(&g, &mut rng, 32);
                    assert!(f.nu(&p1, &p1).unwrap().abs() <= 1e-10);
                    let v = f.nu(&p1, &p2).unwrap();
                    assert_eq!(v, f.nu(&p2, &p1).unwrap());
                    assert!(v >= -1e-9);
                    assert!(v + f.params().offset() > 0.0);
                    let t2 = rng.gen_range(p1.t_index()..=32);
                    let e = p1.extended_to(t2).unwrap();
                    assert!((f.nu(&e, &p2).unwrap() - v).abs() <= 1e-10);
                }
            }
        }
    }

    #[test]
    fn grad_zero_for_identical_extensions() {
        let g = game("frac", 16);
        let f = NuFunctional::for_system(g.system.clone(), 0.1, None).unwrap();
        let p = Position::from_generator(g.system.clone(), vec![s(0.5); 5]).unwrap();
        let r = p.extended_to(9).unwrap();
        let gm = f.grad_mu(&p, &r).unwrap();
        assert_eq!(gm.vector, vec![0.0]);
        assert_eq!(gm.t_derivative, 0.0);
        assert!(f.grad_mu(&p.extended_to(16).unwrap(), &r).is_err());
    }

    #[test]
    fn grad_antisymmetric_at_equal_times() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = game("frac", 32);
        let f = NuFunctional::for_system(g.system.clone(), 0.5, None).unwrap();
        for _ in 0..10 {
            let p = random_position(&g, &mut rng, 20);
            let mut q = random_position(&g, &mut rng, p.t_index());
            q = q.extended_to(p.t_index()).unwrap();
            let a = f.grad_mu(&p, &q).unwrap().vector[0];
            let b = f.grad_mu(&q, &p).unwrap().vector[0];
            assert!((a + b).abs() <= 1e-14 * a.abs().max(1.0));
        }
    }

    #[test]
    fn zero_probe_gives_zero_quotient() {
        let g = game("frac", 64);
        let f = NuFunctional::for_system(g.system.clone(), 0.5, None).unwrap();
        let p = Position::from_generator(g.system.clone(), vec![s(0.7); 16]).unwrap();
        let r = Position::from_generator(g.system.clone(), vec![s(-0.2); 24]).unwrap();
        let chk = check_ci_gradient(&f, &p, &r, &s(0.0), &[0.125, 0.0625]).unwrap();
        for row in &chk.rows {
            assert!(row.difference_quotient.abs() < 1e-12);
            assert_eq!(row.predicted, 0.0);
        }
    }

    #[test]
    fn gradient_matches_difference_quotients() {
        for kernel in ["ode", "frac"] {
            let g = game(kernel, 1024);
            let f = NuFunctional::for_system(g.system.clone(), 0.5, None).unwrap();
            let p = Position::from_generator(g.system.clone(), vec![s(0.8); 256]).unwrap();
            let r = Position::from_generator(g.system.clone(), vec![s(-0.4); 256]).unwrap();
            let chk = check_ci_gradient(&f, &p, &r, &s(1.0), &[1.0 / 64.0, 1.0 / 128.0, 1.0 / 256.0]).unwrap();
            assert!(chk.rows[2].rel_error < 2e-2, "{kernel}: {chk:?}");
            assert!(chk.ratios.iter().all(|r| *r < 1.0), "{kernel}: {chk:?}");
        }
    }

    #[test]
    fn bounds_report_is_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = game("frac", 32);
        let f = NuFunctional::for_system(g.system.clone(), 1.0, None).unwrap();
        let pairs: Vec<_> = (0..30)
            .map(|_| (random_position(&g, &mut rng, 24), random_position(&g, &mut rng, 24)))
            .collect();
        let rep = check_nu_bounds(&f, &pairs, &[1.0, 0.1, 0.01], 0.75).unwrap();
        assert!(rep.finite);
        assert!(rep.per_epsilon.iter().all(|r| r.min_shifted > 0.0 && r.min_nu >= -1e-9));
        let identical: Vec<_> = pairs.iter().map(|(p, _)| (p.clone(), p.clone())).collect();
        let rep = check_nu_bounds(&f, &identical, &[0.5], 0.75).unwrap();
        assert_eq!(rep.c2_hat, 0.0);
    }
}
