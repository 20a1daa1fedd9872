//! Weakly-singular kernels `K(tau, xi) = K*(tau, xi) / (tau - xi)^(1 - alpha)`.

use std::fmt;
use std::io::Read;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::numerics::{self, gamma, spectral_norm};

pub type Matrix = DMatrix<f64>;

/// Evaluator for the regular part `K*` of a user-supplied kernel.
pub type KstarFn = Arc<dyn Fn(f64, f64) -> Matrix + Send + Sync>;

/// `K*` sampled on a square lattice of times, interpolated bilinearly.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedKstar {
    n: usize,
    nodes: Vec<f64>,
    /// `values[k][l]` for `l <= k`, each an `n x n` matrix in row-major order.
    values: Vec<Vec<Vec<f64>>>,
}

impl TabulatedKstar {
    /// Parses rows `tau,xi,k_11,k_12,...,k_nn` (row-major entries) with a header line.
    ///
    /// The distinct `tau` values and the distinct `xi` values must coincide, and every
    /// lattice pair with `xi <= tau` must be present.
    pub fn from_csv<R: Read>(reader: R, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(invalid("n", "state dimension must be positive"));
        }
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| invalid("kernel_csv", e.to_string()))?
            .clone();
        if headers.len() != 2 + n * n
            || headers.get(0) != Some("tau")
            || headers.get(1) != Some("xi")
        {
            return Err(invalid(
                "kernel_csv",
                format!("header must be tau,xi followed by {} entries", n * n),
            ));
        }
        let mut rows: Vec<(f64, f64, Vec<f64>)> = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| invalid("kernel_csv", e.to_string()))?;
            let nums: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
            let nums = nums.map_err(|e| invalid("kernel_csv", format!("row {}: {e}", line + 2)))?;
            if nums.len() != 2 + n * n {
                return Err(invalid("kernel_csv", format!("row {} has {} fields", line + 2, nums.len())));
            }
            if nums[1] > nums[0] {
                return Err(invalid("kernel_csv", format!("row {}: xi > tau", line + 2)));
            }
            rows.push((nums[0], nums[1], nums[2..].to_vec()));
        }
        let mut nodes: Vec<f64> = rows.iter().map(|r| r.0).collect();
        nodes.sort_by(f64::total_cmp);
        nodes.dedup();
        if nodes.len() < 2 {
            return Err(invalid("kernel_csv", "need at least two distinct tau values"));
        }
        let index = |v: f64| nodes.iter().position(|&s| s == v);
        let mut values: Vec<Vec<Option<Vec<f64>>>> =
            (0..nodes.len()).map(|k| vec![None; k + 1]).collect();
        for (tau, xi, entries) in rows {
            let k = index(tau).expect("tau collected above");
            let l = index(xi).ok_or_else(|| {
                invalid("kernel_csv", format!("xi={xi} is not one of the tau lattice values"))
            })?;
            values[k][l] = Some(entries);
        }
        let values = values
            .into_iter()
            .enumerate()
            .map(|(k, row)| {
                row.into_iter()
                    .enumerate()
                    .map(|(l, v)| {
                        v.ok_or_else(|| {
                            invalid("kernel_csv", format!("missing sample tau={}, xi={}", nodes[k], nodes[l]))
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { n, nodes, values })
    }

    fn locate(&self, x: f64) -> (usize, f64) {
        let last = self.nodes.len() - 1;
        let x = x.clamp(self.nodes[0], self.nodes[last]);
        let k = match self.nodes.binary_search_by(|s| s.total_cmp(&x)) {
            Ok(k) => k.min(last - 1),
            Err(k) => k.saturating_sub(1).min(last - 1),
        };
        let frac = (x - self.nodes[k]) / (self.nodes[k + 1] - self.nodes[k]);
        (k, frac)
    }

    fn at(&self, k: usize, l: usize) -> &[f64] {
        &self.values[k][l.min(k)]
    }

    pub fn eval(&self, tau: f64, xi: f64) -> Matrix {
        let (k, fk) = self.locate(tau);
        let (l, fl) = self.locate(xi);
        let mut out = Matrix::zeros(self.n, self.n);
        let corners = [
            ((k, l), (1.0 - fk) * (1.0 - fl)),
            ((k + 1, l), fk * (1.0 - fl)),
            ((k, l + 1), (1.0 - fk) * fl),
            ((k + 1, l + 1), fk * fl),
        ];
        for ((kk, ll), w) in corners {
            if w == 0.0 {
                continue;
            }
            for (idx, v) in self.at(kk, ll).iter().enumerate() {
                out[(idx / self.n, idx % self.n)] += w * v;
            }
        }
        out
    }
}

/// Concrete form of a kernel. Builtin forms carry closed-form cell integrals.
#[derive(Clone)]
pub enum KernelForm {
    /// `K = Id`, written with an artificial singularity order.
    Ode,
    /// Diagonal Riemann-Liouville kernel with per-coordinate orders.
    Fractional { orders: Vec<f64> },
    /// Scalar kernel vanishing up to `t_switch` and equal to `tau - t_switch` after.
    Counterexample { t_switch: f64 },
    Tabulated(TabulatedKstar),
    Custom(KstarFn),
}

impl fmt::Debug for KernelForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Ode => write!(f, "Ode"),
            Self::Fractional { orders } => write!(f, "Fractional {{ orders: {orders:?} }}"),
            Self::Counterexample { t_switch } => write!(f, "Counterexample {{ t_switch: {t_switch} }}"),
            Self::Tabulated(t) => write!(f, "Tabulated({} nodes)", t.nodes.len()),
            Self::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// Structural tag used by the sufficient condition for injectivity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelStructure {
    /// Lower-triangular with diagonal entries of the form `p_i(tau - xi)`.
    TriangularConvolution,
    Unstructured,
}

#[derive(Debug, Clone)]
pub struct KernelSpec {
    pub n: usize,
    pub alpha: f64,
    pub beta: f64,
    pub hoelder_lambda: f64,
    pub kappa_star: f64,
    pub horizon: f64,
    pub structure: KernelStructure,
    /// False when `beta`/`hoelder_lambda` were supplied by the user and only probed.
    pub hoelder_declared: bool,
    pub form: KernelForm,
}

fn check_horizon(horizon: f64) -> Result<()> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(invalid("horizon", format!("{horizon} must be positive and finite")));
    }
    Ok(())
}

/// Kernel of the Cauchy problem for an ODE: `K = Id`, represented with
/// `K*(tau, xi) = (tau - xi)^(1 - alpha') Id`.
pub fn make_ode_kernel(n: usize, alpha_prime: f64, horizon: f64) -> Result<KernelSpec> {
    check_horizon(horizon)?;
    if n == 0 {
        return Err(invalid("n", "state dimension must be positive"));
    }
    if !(alpha_prime > 0.0 && alpha_prime < 1.0) {
        return Err(invalid("alpha_prime", format!("{alpha_prime} is outside (0, 1)")));
    }
    Ok(KernelSpec {
        n,
        alpha: alpha_prime,
        beta: 1.0 - alpha_prime,
        hoelder_lambda: 1.0,
        kappa_star: horizon.powf(1.0 - alpha_prime),
        horizon,
        structure: KernelStructure::TriangularConvolution,
        hoelder_declared: true,
        form: KernelForm::Ode,
    })
}

/// Representation order used when every fractional order equals one.
pub const UNIT_ORDER_REPRESENTATION: f64 = 0.5;

/// Diagonal kernel `k_ii = 1 / (Gamma(alpha_i) (tau - xi)^(1 - alpha_i))`.
pub fn make_fractional_kernel(orders: &[f64], horizon: f64) -> Result<KernelSpec> {
    check_horizon(horizon)?;
    if orders.is_empty() {
        return Err(invalid("orders", "at least one order is required"));
    }
    if let Some(bad) = orders.iter().find(|a| !(**a > 0.0 && **a <= 1.0)) {
        return Err(invalid("orders", format!("{bad} is outside (0, 1]")));
    }
    let min = orders.iter().copied().fold(f64::INFINITY, f64::min);
    let alpha = if min < 1.0 { min } else { UNIT_ORDER_REPRESENTATION };
    let gaps: Vec<f64> = orders.iter().map(|a| a - alpha).collect();
    let beta = gaps
        .iter()
        .copied()
        .filter(|d| *d > 0.0)
        .fold(1.0_f64, f64::min);
    let hoelder_lambda = orders
        .iter()
        .zip(&gaps)
        .filter(|(_, d)| **d > 0.0)
        .map(|(a, d)| horizon.powf(d - beta) / gamma(*a))
        .fold(0.0_f64, f64::max);
    let kappa_star = orders
        .iter()
        .zip(&gaps)
        .map(|(a, d)| horizon.powf(*d) / gamma(*a))
        .fold(0.0_f64, f64::max);
    Ok(KernelSpec {
        n: orders.len(),
        alpha,
        beta,
        hoelder_lambda,
        kappa_star,
        horizon,
        structure: KernelStructure::TriangularConvolution,
        hoelder_declared: true,
        form: KernelForm::Fractional {
            orders: orders.to_vec(),
        },
    })
}

/// Singularity order used to package the counterexample kernel.
pub const COUNTEREXAMPLE_ALPHA: f64 = 0.5;

/// Scalar kernel `K(tau, xi) = 0` for `tau <= t_switch`, `tau - t_switch` afterwards.
pub fn make_counterexample_kernel(t_switch: f64, horizon: f64) -> Result<KernelSpec> {
    check_horizon(horizon)?;
    if !(t_switch > 0.0 && t_switch < horizon) {
        return Err(invalid("t_switch", format!("{t_switch} is outside (0, {horizon})")));
    }
    let alpha = COUNTEREXAMPLE_ALPHA;
    Ok(KernelSpec {
        n: 1,
        alpha,
        beta: 1.0 - alpha,
        hoelder_lambda: horizon - t_switch,
        kappa_star: (horizon - t_switch) * horizon.powf(1.0 - alpha),
        horizon,
        structure: KernelStructure::Unstructured,
        hoelder_declared: true,
        form: KernelForm::Counterexample { t_switch },
    })
}

/// User kernel from a `K*` evaluator. Hoelder data are taken on trust and
/// `kappa_star` is maximised over a sampling lattice.
pub fn make_custom_kernel(
    n: usize,
    alpha: f64,
    beta: f64,
    hoelder_lambda: f64,
    horizon: f64,
    kstar: KstarFn,
) -> Result<KernelSpec> {
    make_sampled_kernel(n, alpha, beta, hoelder_lambda, horizon, KernelForm::Custom(kstar))
}

pub fn make_tabulated_kernel(
    table: TabulatedKstar,
    alpha: f64,
    beta: f64,
    hoelder_lambda: f64,
    horizon: f64,
) -> Result<KernelSpec> {
    let n = table.n;
    make_sampled_kernel(n, alpha, beta, hoelder_lambda, horizon, KernelForm::Tabulated(table))
}

fn make_sampled_kernel(
    n: usize,
    alpha: f64,
    beta: f64,
    hoelder_lambda: f64,
    horizon: f64,
    form: KernelForm,
) -> Result<KernelSpec> {
    check_horizon(horizon)?;
    if n == 0 {
        return Err(invalid("n", "state dimension must be positive"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid("alpha", format!("{alpha} is outside (0, 1)")));
    }
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(invalid("beta", format!("{beta} is outside (0, 1]")));
    }
    if !(hoelder_lambda >= 0.0) {
        return Err(invalid("hoelder_lambda", "must be nonnegative"));
    }
    let mut spec = KernelSpec {
        n,
        alpha,
        beta,
        hoelder_lambda,
        kappa_star: 0.0,
        horizon,
        structure: KernelStructure::Unstructured,
        hoelder_declared: false,
        form,
    };
    let probe = spec.kstar(0.0, 0.0);
    if probe.nrows() != n || probe.ncols() != n {
        return Err(invalid(
            "kstar",
            format!("evaluator returned {}x{}, expected {n}x{n}", probe.nrows(), probe.ncols()),
        ));
    }
    spec.kappa_star = spec.kappa_star_by_grid(64);
    Ok(spec)
}

impl KernelSpec {
    /// Regular part `K*(tau, xi)` on the closed triangle `0 <= xi <= tau <= T`.
    pub fn kstar(&self, tau: f64, xi: f64) -> Matrix {
        let n = self.n;
        match &self.form {
            KernelForm::Ode => Matrix::identity(n, n) * (tau - xi).max(0.0).powf(1.0 - self.alpha),
            KernelForm::Fractional { orders } => {
                let d = (tau - xi).max(0.0);
                Matrix::from_diagonal(&nalgebra::DVector::from_iterator(
                    n,
                    orders.iter().map(|a| {
                        let gap = a - self.alpha;
                        let p = if gap == 0.0 { 1.0 } else { d.powf(gap) };
                        p / gamma(*a)
                    }),
                ))
            }
            KernelForm::Counterexample { t_switch } => {
                let ramp = (tau - t_switch).max(0.0);
                Matrix::from_element(1, 1, ramp * (tau - xi).max(0.0).powf(1.0 - self.alpha))
            }
            KernelForm::Tabulated(t) => t.eval(tau, xi),
            KernelForm::Custom(f) => f(tau, xi),
        }
    }

    /// `K(tau, xi)` for `tau > xi`.
    pub fn eval(&self, tau: f64, xi: f64) -> Matrix {
        let n = self.n;
        match &self.form {
            KernelForm::Ode => Matrix::identity(n, n),
            KernelForm::Fractional { orders } => Matrix::from_diagonal(&nalgebra::DVector::from_iterator(
                n,
                orders
                    .iter()
                    .map(|a| (tau - xi).powf(a - 1.0) / gamma(*a)),
            )),
            KernelForm::Counterexample { t_switch } => {
                Matrix::from_element(1, 1, (tau - t_switch).max(0.0))
            }
            _ => self.kstar(tau, xi) / (tau - xi).powf(1.0 - self.alpha),
        }
    }

    /// `∫_a^b K(tau, xi) dxi` for `a < b <= tau`.
    ///
    /// Builtin kernels integrate exactly; sampled kernels freeze `K*` at the cell
    /// midpoint and integrate the singular factor exactly.
    pub fn cell_weight(&self, tau: f64, a: f64, b: f64) -> Matrix {
        let n = self.n;
        match &self.form {
            KernelForm::Ode => Matrix::identity(n, n) * (b - a),
            KernelForm::Fractional { orders } => Matrix::from_diagonal(&nalgebra::DVector::from_iterator(
                n,
                orders
                    .iter()
                    .map(|al| numerics::left_singular_integral(tau, a, b, *al) / gamma(*al)),
            )),
            KernelForm::Counterexample { t_switch } => {
                Matrix::from_element(1, 1, (tau - t_switch).max(0.0) * (b - a))
            }
            _ => {
                self.kstar(tau, 0.5 * (a + b))
                    * numerics::left_singular_integral(tau, a, b, self.alpha)
            }
        }
    }

    /// `∫_a^b K(xi, t) (T - xi)^(-tail) dxi` for `t <= a < b <= T`.
    pub fn tail_cell_weight(&self, t: f64, a: f64, b: f64, tail: f64) -> Matrix {
        let n = self.n;
        let horizon = self.horizon;
        match &self.form {
            KernelForm::Ode => Matrix::identity(n, n) * numerics::tail_integral(horizon, a, b, tail),
            KernelForm::Fractional { orders } => Matrix::from_diagonal(&nalgebra::DVector::from_iterator(
                n,
                orders.iter().map(|al| {
                    numerics::double_singular_cell(t, horizon, a, b, *al, tail) / gamma(*al)
                }),
            )),
            _ => {
                self.kstar(0.5 * (a + b), t)
                    * numerics::double_singular_cell(t, horizon, a, b, self.alpha, tail)
            }
        }
    }

    /// True when cell weights on a uniform grid depend only on the lag `j - i`.
    pub fn is_translation_invariant(&self) -> bool {
        matches!(self.form, KernelForm::Ode | KernelForm::Fractional { .. })
    }

    /// Maximum of `||K*||` over a `(samples+1)^2/2` lattice of the triangle.
    pub fn kappa_star_by_grid(&self, samples: usize) -> f64 {
        let h = self.horizon / samples as f64;
        let mut best = 0.0_f64;
        for k in 0..=samples {
            for l in 0..=k {
                best = best.max(spectral_norm(&self.kstar(k as f64 * h, l as f64 * h)));
            }
        }
        best
    }

    /// Largest sampled Hoelder quotient `||K*(tau,xi) - K*(tau,xi')|| / |xi - xi'|^beta`.
    pub fn hoelder_probe(&self, pairs: &[(f64, f64, f64)]) -> f64 {
        pairs
            .iter()
            .filter(|(_, xi, xi2)| xi != xi2)
            .map(|&(tau, xi, xi2)| {
                let diff = self.kstar(tau, xi) - self.kstar(tau, xi2);
                spectral_norm(&diff) / (xi - xi2).abs().powf(self.beta)
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionStatus {
    Pass,
    Fail,
    NotApplicable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Satisfied,
    Unknown,
    Violated,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionA {
    pub status: ConditionStatus,
    /// Smallest sampled `|p_i|` per coordinate.
    pub min_abs_diagonal: Vec<f64>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionB {
    pub status: ConditionStatus,
    pub min_abs_det: f64,
    /// Largest finite-difference estimate of `||dK*/dtau||` on the probes.
    pub max_dtau: f64,
    pub dtau_bounded: bool,
    /// Grid times where `|det K*(tau,tau)|` fell below the floor.
    pub degenerate_times: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NondegeneracyReport {
    pub condition_a: ConditionA,
    pub condition_b: ConditionB,
    pub verdict: Verdict,
    /// "declared" for builtin kernels, "assumed" for user-supplied Hoelder data.
    pub hoelder: &'static str,
}

pub const DEFAULT_DET_FLOOR: f64 = 1e-10;

pub fn check_nondegeneracy(kernel: &KernelSpec, grid: &[f64]) -> Result<NondegeneracyReport> {
    check_nondegeneracy_with(kernel, grid, DEFAULT_DET_FLOOR)
}

/// Best-effort test of the two sufficient conditions for injectivity of the
/// Volterra operator on every `[0, t]`.
pub fn check_nondegeneracy_with(
    kernel: &KernelSpec,
    grid: &[f64],
    det_floor: f64,
) -> Result<NondegeneracyReport> {
    if grid.len() < 2 || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(invalid("grid", "needs at least two strictly ascending nodes"));
    }
    if grid[0] != 0.0 {
        return Err(Error::InvalidArgument {
            name: "grid",
            reason: "must start at 0".into(),
        });
    }
    let n = kernel.n;

    // (a): lower-triangular convolution with a.e. nonzero diagonal
    let condition_a = match kernel.structure {
        KernelStructure::TriangularConvolution => {
            let mut min_abs = vec![f64::INFINITY; n];
            let mut upper_ok = true;
            for &s in &grid[1..] {
                let k = kernel.eval(s, 0.0);
                for i in 0..n {
                    min_abs[i] = min_abs[i].min(k[(i, i)].abs());
                    for j in (i + 1)..n {
                        if k[(i, j)] != 0.0 {
                            upper_ok = false;
                        }
                    }
                }
            }
            let nonzero = min_abs.iter().all(|m| *m > 0.0);
            ConditionA {
                status: if nonzero && upper_ok {
                    ConditionStatus::Pass
                } else {
                    ConditionStatus::Fail
                },
                detail: if !upper_ok {
                    "nonzero entry above the diagonal".into()
                } else if nonzero {
                    "diagonal p_i nonzero at every sampled lag".into()
                } else {
                    "some diagonal p_i vanishes at a sampled lag".into()
                },
                min_abs_diagonal: min_abs,
            }
        }
        KernelStructure::Unstructured => ConditionA {
            status: ConditionStatus::NotApplicable,
            min_abs_diagonal: Vec::new(),
            detail: "kernel does not declare triangular convolution structure".into(),
        },
    };

    // (b): K*(tau,tau) non-degenerate and dK*/dtau bounded
    let mut min_abs_det = f64::INFINITY;
    let mut degenerate_times = Vec::new();
    for &tau in grid {
        let d = kernel.kstar(tau, tau).determinant().abs();
        if !(d > det_floor) {
            degenerate_times.push(tau);
        }
        min_abs_det = min_abs_det.min(d);
    }
    let horizon = *grid.last().unwrap();
    let dtau_max = |gap: f64| -> f64 {
        let delta = gap * 1e-3;
        let mut best = 0.0_f64;
        for &tau in grid.iter().filter(|t| **t >= gap && **t + delta <= horizon) {
            let xi = tau - gap;
            let d = (kernel.kstar(tau + delta, xi) - kernel.kstar(tau, xi)) / delta;
            best = best.max(spectral_norm(&d));
        }
        best
    };
    let coarse_gap = horizon * 1e-2;
    let fine_gap = horizon * 1e-5;
    let coarse = dtau_max(coarse_gap);
    let fine = dtau_max(fine_gap);
    let max_dtau = coarse.max(fine);
    let dtau_bounded = max_dtau.is_finite() && fine <= 2.0 * coarse + 1.0;
    let condition_b = ConditionB {
        status: if degenerate_times.is_empty() && dtau_bounded {
            ConditionStatus::Pass
        } else {
            ConditionStatus::Fail
        },
        min_abs_det,
        max_dtau,
        dtau_bounded,
        degenerate_times,
    };

    let satisfied = condition_a.status == ConditionStatus::Pass
        || condition_b.status == ConditionStatus::Pass;
    let verdict = if satisfied {
        Verdict::Satisfied
    } else if vanishes_on_initial_slab(kernel, grid[1]) {
        // any generator supported on the slab is invisible in the history
        Verdict::Violated
    } else {
        Verdict::Unknown
    };

    Ok(NondegeneracyReport {
        condition_a,
        condition_b,
        verdict,
        hoelder: if kernel.hoelder_declared {
            "declared"
        } else {
            "assumed"
        },
    })
}

fn vanishes_on_initial_slab(kernel: &KernelSpec, slab: f64) -> bool {
    let samples = 16;
    (0..=samples).all(|k| {
        let tau = slab * k as f64 / samples as f64;
        (0..=k).all(|l| {
            let xi = slab * l as f64 / samples as f64;
            kernel.kstar(tau, xi).iter().all(|v| *v == 0.0)
        })
    })
}
