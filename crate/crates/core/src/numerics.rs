//! Special functions and singularity-exact product-integration weights.
//!
//! Every integral in the crate that carries a power-law singularity goes
//! through the weights built here: the singular factor is integrated in
//! closed form over each grid cell while the remaining (continuous) factor
//! is frozen per cell.

use crate::error::{invalid, Error, Result};
use statrs::function::beta as sbeta;
use statrs::function::gamma as sgamma;

/// Euler gamma function.
pub fn gamma(x: f64) -> f64 {
    sgamma::gamma(x)
}

pub fn ln_gamma(x: f64) -> f64 {
    sgamma::ln_gamma(x)
}

/// Euler beta function `B(a, b)`.
pub fn beta(a: f64, b: f64) -> f64 {
    sbeta::beta(a, b)
}

/// Controls the Mittag-Leffler series summation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpecialFnConfig {
    /// Relative size of the last accepted term.
    pub series_tol: f64,
    pub max_terms: usize,
    /// Largest tolerated relative rounding error of the final sum; beyond it the
    /// summation is reported as a cancellation failure.
    pub precision_floor: f64,
}

impl Default for SpecialFnConfig {
    fn default() -> Self {
        Self {
            series_tol: 1e-16,
            max_terms: 10_000,
            precision_floor: 1e-10,
        }
    }
}

impl SpecialFnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.series_tol > 0.0) {
            return Err(invalid("series_tol", "must be positive"));
        }
        if self.max_terms < 50 {
            return Err(invalid("max_terms", "must be at least 50"));
        }
        if !(self.precision_floor > 0.0) {
            return Err(invalid("precision_floor", "must be positive"));
        }
        Ok(())
    }
}

/// Unevaluated sum `hi + lo` with `|lo| <= ulp(hi)/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct DoubleDouble {
    hi: f64,
    lo: f64,
}

impl DoubleDouble {
    const ZERO: Self = Self { hi: 0.0, lo: 0.0 };

    fn from_f64(x: f64) -> Self {
        Self { hi: x, lo: 0.0 }
    }

    fn two_sum(a: f64, b: f64) -> Self {
        let s = a + b;
        let bb = s - a;
        let err = (a - (s - bb)) + (b - bb);
        Self { hi: s, lo: err }
    }

    fn quick_two_sum(a: f64, b: f64) -> Self {
        let s = a + b;
        Self {
            hi: s,
            lo: b - (s - a),
        }
    }

    fn add(self, other: Self) -> Self {
        let s = Self::two_sum(self.hi, other.hi);
        let t = Self::two_sum(self.lo, other.lo);
        let hi = s.hi;
        let lo = s.lo + t.hi;
        let r = Self::quick_two_sum(hi, lo);
        Self::quick_two_sum(r.hi, r.lo + t.lo)
    }

    fn mul(self, other: Self) -> Self {
        let p = self.hi * other.hi;
        let err = self.hi.mul_add(other.hi, -p);
        let lo = err + (self.hi * other.lo + self.lo * other.hi);
        Self::quick_two_sum(p, lo)
    }

    fn div(self, other: Self) -> Self {
        let q1 = self.hi / other.hi;
        let r = self.add(other.mul(Self::from_f64(-q1)));
        let q2 = r.hi / other.hi;
        let r = r.add(other.mul(Self::from_f64(-q2)));
        let q3 = r.hi / other.hi;
        Self::quick_two_sum(q1, q2).add(Self::from_f64(q3))
    }

    fn to_f64(self) -> f64 {
        self.hi + self.lo
    }
}

/// Relative accuracy assumed for `gamma` on `[1, 2)`.
const GAMMA_REL_ERR: f64 = 4e-15;

/// `E_alpha(z)` with the default [`SpecialFnConfig`].
pub fn mittag_leffler(alpha: f64, z: f64) -> Result<f64> {
    mittag_leffler_with(alpha, z, &SpecialFnConfig::default())
}

/// One-parameter Mittag-Leffler function `sum_k z^k / Gamma(alpha k + 1)`.
///
/// Terms are formed and accumulated in double-double arithmetic. `Gamma(alpha k + 1)`
/// is reduced to `Gamma(r) * prod (r + j)` with `r` in `[1, 2)`, so the only
/// double-precision inputs are `z` and `Gamma(r)`. A running bound on the rounding
/// error is kept; if it exceeds `precision_floor` relative to the sum the call
/// fails instead of returning a polluted value.
pub fn mittag_leffler_with(alpha: f64, z: f64, cfg: &SpecialFnConfig) -> Result<f64> {
    cfg.validate()?;
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(invalid("alpha", format!("{alpha} is outside (0, 1]")));
    }
    if !z.is_finite() {
        return Err(invalid("z", "must be finite"));
    }
    if z == 0.0 {
        return Ok(1.0);
    }

    let zdd = DoubleDouble::from_f64(z);
    let mut power = DoubleDouble::from_f64(1.0);
    let mut sum = DoubleDouble::ZERO;
    let mut err_bound = 0.0_f64;
    let mut largest = 0.0_f64;
    let mut prev_abs = f64::INFINITY;
    let ln_abs_z = z.abs().ln();

    for k in 0..cfg.max_terms {
        if k > 0 {
            power = power.mul(zdd);
        }
        let arg = alpha * k as f64 + 1.0;
        let log_mag = k as f64 * ln_abs_z - ln_gamma(arg);
        if log_mag > 700.0 {
            return Err(Error::SeriesNonConvergence {
                alpha,
                z,
                terms: k,
            });
        }

        let (term, term_err) = if arg < 170.0 && power.hi.abs() < 1e300 {
            let whole = (arg - 1.0).floor();
            let r = arg - whole;
            let mut g = DoubleDouble::from_f64(gamma(r));
            let mut j = 0.0;
            while j < whole {
                g = g.mul(DoubleDouble::from_f64(r + j));
                j += 1.0;
            }
            let t = power.div(g);
            let e = if r == 1.0 { 0.0 } else { GAMMA_REL_ERR * t.hi.abs() };
            (t, e)
        } else {
            // far tail: magnitude from logs, sign from z^k
            let sign = if z < 0.0 && k % 2 == 1 { -1.0 } else { 1.0 };
            let t = sign * log_mag.exp();
            (
                DoubleDouble::from_f64(t),
                t.abs() * (log_mag.abs() + 1.0) * 4.0 * f64::EPSILON,
            )
        };

        sum = sum.add(term);
        err_bound += term_err;
        let abs_term = term.hi.abs();
        largest = largest.max(abs_term);

        let s = sum.to_f64().abs();
        let decreasing = abs_term <= prev_abs;
        prev_abs = abs_term;
        if k > 0 && decreasing && abs_term <= cfg.series_tol * s {
            let value = sum.to_f64();
            let total_err = err_bound + 1e-30 * largest;
            if total_err > cfg.precision_floor * value.abs() {
                return Err(Error::SeriesCancellation {
                    alpha,
                    z,
                    largest,
                    sum: value,
                });
            }
            return Ok(value);
        }
    }
    Err(Error::SeriesNonConvergence {
        alpha,
        z,
        terms: cfg.max_terms,
    })
}

/// A priori sup-norm bound `N = (1 + y_sup) E_alpha(Gamma(alpha) kappa c T^alpha) - 1`
/// for motions whose right-hand side grows at most like `c (1 + |x|)`.
pub fn gronwall_bound(y_sup: f64, kappa_star: f64, c: f64, alpha: f64, horizon: f64) -> Result<f64> {
    for (name, v) in [
        ("y_sup", y_sup),
        ("kappa_star", kappa_star),
        ("c", c),
        ("horizon", horizon),
    ] {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(invalid(name, format!("{v} must be finite and nonnegative")));
        }
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid("alpha", format!("{alpha} is outside (0, 1)")));
    }
    let arg = gamma(alpha) * kappa_star * c * horizon.powf(alpha);
    Ok((1.0 + y_sup) * mittag_leffler(alpha, arg)? - 1.0)
}

/// Exact cell integrals of `(tau - xi)^(alpha - 1)` for every cell left of `tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct SingularWeights {
    pub grid: Vec<f64>,
    pub target_index: usize,
    pub exponent: f64,
    pub weights: Vec<f64>,
}

impl SingularWeights {
    pub fn target(&self) -> f64 {
        self.grid[self.target_index]
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return Err(invalid("grid", "needs at least two nodes"));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(invalid("grid", "nodes must be strictly ascending"));
    }
    Ok(())
}

/// `∫_{a}^{b} (tau - xi)^(alpha - 1) dxi` for `a <= b <= tau`.
#[inline]
pub fn left_singular_integral(tau: f64, a: f64, b: f64, alpha: f64) -> f64 {
    if alpha == 1.0 {
        b - a
    } else {
        ((tau - a).powf(alpha) - (tau - b).powf(alpha)) / alpha
    }
}

pub fn singular_weights(grid: &[f64], target_index: usize, alpha: f64) -> Result<SingularWeights> {
    check_grid(grid)?;
    if target_index == 0 || target_index >= grid.len() {
        return Err(Error::IndexOutOfRange {
            index: target_index,
            valid: format!("1..{}", grid.len()),
        });
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(invalid("alpha", format!("{alpha} is outside (0, 1]")));
    }
    let tau = grid[target_index];
    let weights = grid[..=target_index]
        .windows(2)
        .map(|c| left_singular_integral(tau, c[0], c[1], alpha))
        .collect();
    Ok(SingularWeights {
        grid: grid.to_vec(),
        target_index,
        exponent: alpha,
        weights,
    })
}

/// Cell integrals of `(xi - t)^(alpha - 1) (T - xi)^(-tail_exponent)` over the
/// cells of `grid` between `t = grid[left_index]` and `T = grid.last()`.
///
/// Each weight is the exact integral of the two-sided weight over its cell,
/// obtained from differences of the incomplete beta function, so a
/// piecewise-constant integrand never has either singular factor sampled at
/// its blow-up point. The weights sum to `B(alpha, 1 - tail) (T - t)^(alpha - tail)`.
pub fn double_singular_weights(
    grid: &[f64],
    left_index: usize,
    alpha: f64,
    tail_exponent: f64,
) -> Result<Vec<f64>> {
    check_grid(grid)?;
    let last = grid.len() - 1;
    if left_index >= last {
        return Err(Error::IndexOutOfRange {
            index: left_index,
            valid: format!("0..{last}"),
        });
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(invalid("alpha", format!("{alpha} is outside (0, 1]")));
    }
    if !(tail_exponent < 1.0) {
        return Err(invalid(
            "tail_exponent",
            format!("{tail_exponent} >= 1 makes the right-end weight non-integrable"),
        ));
    }
    let t = grid[left_index];
    let horizon = grid[last];
    Ok(grid[left_index..]
        .windows(2)
        .map(|c| double_singular_cell(t, horizon, c[0], c[1], alpha, tail_exponent))
        .collect())
}

/// Exact `∫_{a}^{b} (xi - t)^(alpha - 1) (T - xi)^(-tail) dxi` for `t <= a < b <= T`.
///
/// Uses the incomplete beta function in the reduced variable `s = (xi - t)/(T - t)`;
/// cells in the right half are measured from the right end so neither endpoint
/// loses precision to cancellation.
pub fn double_singular_cell(t: f64, horizon: f64, a: f64, b: f64, alpha: f64, tail: f64) -> f64 {
    if tail == 0.0 {
        return right_singular_integral(t, a, b, alpha);
    }
    if alpha == 1.0 {
        return tail_integral(horizon, a, b, tail);
    }
    let len = horizon - t;
    let (pa, pb) = (alpha, 1.0 - tail);
    let full = beta(pa, pb);
    let lower = |s: f64| -> f64 {
        if s <= 0.0 {
            0.0
        } else if s >= 1.0 {
            full
        } else {
            full * sbeta::beta_reg(pa, pb, s)
        }
    };
    let upper = |s: f64| -> f64 {
        if s >= 1.0 {
            0.0
        } else if s <= 0.0 {
            full
        } else {
            full * sbeta::beta_reg(pb, pa, 1.0 - s)
        }
    };
    let sa = (a - t) / len;
    let sb = (b - t) / len;
    let w = if sa >= 0.5 {
        upper(sa) - upper(sb)
    } else {
        lower(sb) - lower(sa)
    };
    len.powf(alpha - tail) * w.max(0.0)
}

/// `∫_{a}^{b} (xi - t)^(alpha - 1) dxi` for `t <= a <= b`.
#[inline]
pub fn right_singular_integral(t: f64, a: f64, b: f64, alpha: f64) -> f64 {
    if alpha == 1.0 {
        b - a
    } else {
        ((b - t).powf(alpha) - (a - t).powf(alpha)) / alpha
    }
}

/// `∫_{a}^{b} (T - xi)^(-gamma) dxi` for `a <= b <= T`.
#[inline]
pub fn tail_integral(horizon: f64, a: f64, b: f64, gamma: f64) -> f64 {
    if gamma == 0.0 {
        b - a
    } else {
        let p = 1.0 - gamma;
        ((horizon - a).powf(p) - (horizon - b).powf(p)) / p
    }
}

/// Induced 2-norm (largest singular value) of a matrix.
pub fn spectral_norm(m: &nalgebra::DMatrix<f64>) -> f64 {
    if m.nrows() == 1 && m.ncols() == 1 {
        return m[(0, 0)].abs();
    }
    if m.iter().all(|v| *v == 0.0) {
        return 0.0;
    }
    m.clone().singular_values().max()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// erfc from the Maclaurin series of erf, summed with compensation; valid for |x| <= 3.
    fn erfc(x: f64) -> f64 {
        let (mut sum, mut comp) = (0.0_f64, 0.0_f64);
        let mut power = x;
        let mut fact = 1.0;
        for n in 0..80 {
            let term = if n % 2 == 0 { 1.0 } else { -1.0 } * power / (fact * (2 * n + 1) as f64);
            let y = term - comp;
            let t = sum + y;
            comp = (t - sum) - y;
            sum = t;
            power *= x * x;
            fact *= (n + 1) as f64;
        }
        1.0 - 2.0 / std::f64::consts::PI.sqrt() * sum
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn mittag_leffler_order_one_is_exp() {
        assert!(rel(mittag_leffler(1.0, 1.0).unwrap(), std::f64::consts::E) < 1e-14);
        for i in -20..=20 {
            let z = i as f64 * 0.5;
            let v = mittag_leffler(1.0, z).unwrap();
            assert!(rel(v, z.exp()) < 1e-10, "z={z}: {v} vs {}", z.exp());
        }
    }

    #[test]
    fn mittag_leffler_at_zero() {
        assert_eq!(mittag_leffler(0.5, 0.0).unwrap(), 1.0);
        assert_eq!(mittag_leffler(0.3, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn mittag_leffler_half_matches_erfc_closed_form() {
        // E_{1/2}(z) = exp(z^2) erfc(-z)
        for z in [1.0_f64, -1.0, 0.5, -0.5, 2.0, -2.0] {
            let expect = (z * z).exp() * erfc(-z);
            let got = mittag_leffler(0.5, z).unwrap();
            assert!(rel(got, expect) < 1e-12, "z={z}: {got} vs {expect}");
        }
    }

    #[test]
    fn mittag_leffler_reports_cancellation_instead_of_garbage() {
        let err = mittag_leffler(0.5, -8.0).unwrap_err();
        assert!(matches!(err, Error::SeriesCancellation { .. }), "{err:?}");
    }

    #[test]
    fn mittag_leffler_reports_overflow() {
        assert!(mittag_leffler(0.5, 50.0).is_err());
    }

    #[test]
    fn mittag_leffler_honours_term_cap() {
        let cfg = SpecialFnConfig {
            max_terms: 50,
            ..Default::default()
        };
        let err = mittag_leffler_with(1.0, 40.0, &cfg).unwrap_err();
        assert!(matches!(err, Error::SeriesNonConvergence { terms: 50, .. }));
        assert!(mittag_leffler_with(
            1.0,
            1.0,
            &SpecialFnConfig {
                max_terms: 10,
                ..Default::default()
            }
        )
        .is_err());
    }

    #[test]
    fn gronwall_trivial_and_derived() {
        assert_eq!(gronwall_bound(0.0, 3.0, 0.0, 0.4, 2.0).unwrap(), 0.0);
        let n = gronwall_bound(1.0, 1.0, 1.0, 0.5, 1.0).unwrap();
        let g = gamma(0.5);
        let expect = 2.0 * (g * g).exp() * erfc(-g) - 1.0;
        assert!(rel(n, expect) < 1e-12);
    }

    #[test]
    fn gronwall_is_monotone() {
        let base = gronwall_bound(0.5, 1.0, 1.0, 0.5, 1.0).unwrap();
        assert!(gronwall_bound(0.6, 1.0, 1.0, 0.5, 1.0).unwrap() >= base);
        assert!(gronwall_bound(0.5, 1.1, 1.0, 0.5, 1.0).unwrap() >= base);
        assert!(gronwall_bound(0.5, 1.0, 1.1, 0.5, 1.0).unwrap() >= base);
        assert!(gronwall_bound(0.5, 1.0, 1.0, 0.5, 1.1).unwrap() >= base);
    }

    #[test]
    fn singular_weights_uniform_last_cell() {
        let h = 0.125;
        let grid: Vec<f64> = (0..=8).map(|i| i as f64 * h).collect();
        let sw = singular_weights(&grid, 8, 0.3).unwrap();
        assert!(rel(*sw.weights.last().unwrap(), h.powf(0.3) / 0.3) < 1e-14);
        assert!(rel(sw.sum(), 1.0_f64.powf(0.3) / 0.3) < 1e-12);
    }

    #[test]
    fn singular_weights_alpha_one_are_widths() {
        let grid = [0.0, 0.1, 0.35, 0.4, 1.0];
        let sw = singular_weights(&grid, 4, 1.0).unwrap();
        for (w, c) in sw.weights.iter().zip(grid.windows(2)) {
            assert!((w - (c[1] - c[0])).abs() < 1e-15);
        }
    }

    #[test]
    fn singular_weights_rejects_bad_index() {
        let grid = [0.0, 1.0, 2.0];
        assert!(singular_weights(&grid, 0, 0.5).is_err());
        assert!(singular_weights(&grid, 3, 0.5).is_err());
        assert!(singular_weights(&[0.0, 0.0, 1.0], 2, 0.5).is_err());
    }

    #[test]
    fn double_weights_zero_tail_mirrors_left_weights() {
        let grid: Vec<f64> = (0..=10).map(|i| i as f64 * 0.1).collect();
        let w = double_singular_weights(&grid, 3, 0.4, 0.0).unwrap();
        let t = grid[3];
        for (wi, c) in w.iter().zip(grid[3..].windows(2)) {
            let expect = ((c[1] - t).powf(0.4) - (c[0] - t).powf(0.4)) / 0.4;
            assert!(rel(*wi, expect) < 1e-14);
        }
    }

    #[test]
    fn double_weights_sum_to_beta_closed_form() {
        let grid: Vec<f64> = (0..=64).map(|i| i as f64 / 64.0).collect();
        for &(alpha, tail) in &[(0.5, 0.5), (0.3, 0.7), (0.8, 0.1), (0.5, -0.2)] {
            for left in [0usize, 7, 40, 63] {
                let w = double_singular_weights(&grid, left, alpha, tail).unwrap();
                let t = grid[left];
                let expect = beta(alpha, 1.0 - tail) * (1.0 - t).powf(alpha - tail);
                let sum: f64 = w.iter().sum();
                assert!(rel(sum, expect) < 1e-8, "alpha={alpha} tail={tail} left={left}");
            }
        }
    }

    #[test]
    fn double_weights_reject_non_integrable_tail() {
        let grid = [0.0, 0.5, 1.0];
        assert!(double_singular_weights(&grid, 0, 0.5, 1.0).is_err());
        assert!(double_singular_weights(&grid, 2, 0.5, 0.5).is_err());
    }

    #[test]
    fn double_weights_interior_cells_match_midpoint_oracle() {
        let grid: Vec<f64> = (0..=16).map(|i| i as f64 / 16.0).collect();
        let (alpha, tail) = (0.4, 0.6);
        let w = double_singular_weights(&grid, 0, alpha, tail).unwrap();
        for cell in 2..14 {
            let (a, b) = (grid[cell], grid[cell + 1]);
            let panels = 100_000;
            let h = (b - a) / panels as f64;
            let oracle: f64 = (0..panels)
                .map(|k| {
                    let xi = a + (k as f64 + 0.5) * h;
                    xi.powf(alpha - 1.0) * (1.0 - xi).powf(-tail) * h
                })
                .sum();
            assert!(rel(w[cell], oracle) < 1e-8, "cell {cell}");
        }
    }

    #[test]
    fn double_weights_refinement_reduces_error() {
        // integrate g(xi) = xi^2 against the two-sided weight; exact: B(alpha+2, 1-tail)
        let (alpha, tail) = (0.4, 0.3);
        let exact = beta(alpha + 2.0, 1.0 - tail);
        let mut last = f64::INFINITY;
        for cells in [8usize, 16, 32, 64, 128] {
            let grid: Vec<f64> = (0..=cells).map(|i| i as f64 / cells as f64).collect();
            let w = double_singular_weights(&grid, 0, alpha, tail).unwrap();
            let approx: f64 = w
                .iter()
                .zip(grid.windows(2))
                .map(|(wi, c)| wi * (0.5 * (c[0] + c[1])).powi(2))
                .sum();
            let err = (approx - exact).abs();
            assert!(err < last, "cells={cells}: {err} !< {last}");
            last = err;
        }
    }
}
