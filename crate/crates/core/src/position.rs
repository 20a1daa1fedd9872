//! Positions `(t, w)` of the hereditary system, carried by their generator.

use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kernel::{KernelSpec, Matrix};

pub type Vector = DVector<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct MasterGrid {
    nodes: Vec<f64>,
    step: Option<f64>,
}

impl MasterGrid {
    pub fn uniform(horizon: f64, cells: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(invalid("horizon", format!("{horizon} must be positive and finite")));
        }
        if cells == 0 {
            return Err(invalid("cells", "need at least one cell"));
        }
        let h = horizon / cells as f64;
        let mut nodes: Vec<f64> = (0..=cells).map(|i| i as f64 * h).collect();
        nodes[cells] = horizon;
        Ok(Self {
            nodes,
            step: Some(h),
        })
    }

    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(invalid("nodes", "need at least two nodes"));
        }
        if nodes[0] != 0.0 {
            return Err(invalid("nodes", "first node must be 0"));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) || !nodes.iter().all(|t| t.is_finite()) {
            return Err(invalid("nodes", "must be finite and strictly ascending"));
        }
        Ok(Self { nodes, step: None })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn node(&self, j: usize) -> f64 {
        self.nodes[j]
    }

    pub fn cells(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.nodes[self.cells()]
    }

    /// Step of a uniform grid.
    pub fn step(&self) -> Option<f64> {
        self.step
    }

    pub fn width(&self, cell: usize) -> f64 {
        self.nodes[cell + 1] - self.nodes[cell]
    }
}

const FULL_TABLE_LIMIT: usize = 4_000_000;

#[derive(Debug)]
enum WeightTable {
    /// `W(j, i)` depends on `j - i` only; `lag[d - 1]` holds lag `d`.
    Lag(Vec<Matrix>),
    /// Row `j` holds `W(j, i)` for `i < j`.
    Full(Vec<Vec<Matrix>>),
    OnTheFly,
}

/// Grid, kernel and free term shared by every position of one game.
#[derive(Debug)]
pub struct VolterraSystem {
    grid: MasterGrid,
    kernel: KernelSpec,
    y: Vec<Vector>,
    table: WeightTable,
}

impl VolterraSystem {
    /// `y` holds the free term at every master node.
    pub fn new(grid: MasterGrid, kernel: KernelSpec, y: Vec<Vector>) -> Result<Arc<Self>> {
        if y.len() != grid.nodes.len() {
            return Err(invalid(
                "y",
                format!("{} samples for {} nodes", y.len(), grid.nodes.len()),
            ));
        }
        if let Some(bad) = y.iter().find(|v| v.len() != kernel.n) {
            return Err(invalid("y", format!("sample of dimension {} for n = {}", bad.len(), kernel.n)));
        }
        if (grid.horizon() - kernel.horizon).abs() > 1e-12 * kernel.horizon {
            return Err(invalid(
                "horizon",
                format!("grid ends at {} but kernel horizon is {}", grid.horizon(), kernel.horizon),
            ));
        }
        let cells = grid.cells();
        let table = match grid.step {
            Some(h) if kernel.is_translation_invariant() => {
                WeightTable::Lag((1..=cells).map(|d| kernel.cell_weight(d as f64 * h, 0.0, h)).collect())
            }
            _ if cells * (cells + 1) / 2 * kernel.n * kernel.n <= FULL_TABLE_LIMIT => WeightTable::Full(
                (0..=cells)
                    .map(|j| {
                        (0..j)
                            .map(|i| kernel.cell_weight(grid.nodes[j], grid.nodes[i], grid.nodes[i + 1]))
                            .collect()
                    })
                    .collect(),
            ),
            _ => WeightTable::OnTheFly,
        };
        Ok(Arc::new(Self {
            grid,
            kernel,
            y,
            table,
        }))
    }

    /// Free term given as a function of time.
    pub fn with_free_term(
        grid: MasterGrid,
        kernel: KernelSpec,
        y: impl Fn(f64) -> Vector,
    ) -> Result<Arc<Self>> {
        let samples = grid.nodes.iter().map(|&t| y(t)).collect();
        Self::new(grid, kernel, samples)
    }

    pub fn grid(&self) -> &MasterGrid {
        &self.grid
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn n(&self) -> usize {
        self.kernel.n
    }

    pub fn y(&self) -> &[Vector] {
        &self.y
    }

    /// `∫_{cell i} K(tau_j, xi) dxi` for `i < j`.
    pub fn weight(&self, j: usize, i: usize) -> Matrix {
        match &self.table {
            WeightTable::Lag(lag) => lag[j - i - 1].clone(),
            WeightTable::Full(rows) => rows[j][i].clone(),
            WeightTable::OnTheFly => self
                .kernel
                .cell_weight(self.grid.nodes[j], self.grid.nodes[i], self.grid.nodes[i + 1]),
        }
    }

    /// `acc += W(j, i) ell`.
    #[inline]
    pub fn accumulate(&self, j: usize, i: usize, ell: &Vector, acc: &mut Vector) {
        match &self.table {
            WeightTable::Lag(lag) => acc.gemv(1.0, &lag[j - i - 1], ell, 1.0),
            WeightTable::Full(rows) => acc.gemv(1.0, &rows[j][i], ell, 1.0),
            WeightTable::OnTheFly => acc.gemv(1.0, &self.weight(j, i), ell, 1.0),
        }
    }

    /// `y(tau_j) + Σ_{i < min(j, cells)} W(j, i) ell[i]`, summed in ascending `i`.
    pub fn history_sum(&self, j: usize, ell: &[Vector]) -> Vector {
        let mut acc = self.y[j].clone();
        for (i, e) in ell.iter().enumerate().take(j) {
            self.accumulate(j, i, e, &mut acc);
        }
        acc
    }
}

/// Node samples `w[0..=t_index]` reproduced from `ell[0..t_index]`.
pub fn reconstruct_w(system: &VolterraSystem, ell: &[Vector], t_index: usize) -> Result<Vec<Vector>> {
    if ell.len() != t_index {
        return Err(invalid(
            "ell",
            format!("{} cell values for t_index {t_index}", ell.len()),
        ));
    }
    if t_index > system.grid.cells() {
        return Err(Error::IndexOutOfRange {
            index: t_index,
            valid: format!("0..={}", system.grid.cells()),
        });
    }
    if let Some(bad) = ell.iter().find(|e| e.len() != system.n()) {
        return Err(invalid("ell", format!("cell value of dimension {}", bad.len())));
    }
    Ok((0..=t_index).map(|j| system.history_sum(j, ell)).collect())
}

#[derive(Debug, Clone)]
pub struct Position {
    system: Arc<VolterraSystem>,
    t_index: usize,
    ell: Vec<Vector>,
    w: Vec<Vector>,
}

/// Serializable view of a position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionSnapshot {
    pub t_index: usize,
    pub ell: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
}

impl Position {
    /// The position `(0, y(0))`.
    pub fn initial(system: Arc<VolterraSystem>) -> Self {
        let w = vec![system.y[0].clone()];
        Self {
            system,
            t_index: 0,
            ell: Vec::new(),
            w,
        }
    }

    pub fn from_generator(system: Arc<VolterraSystem>, ell: Vec<Vector>) -> Result<Self> {
        let t_index = ell.len();
        let w = reconstruct_w(&system, &ell, t_index)?;
        Ok(Self {
            system,
            t_index,
            ell,
            w,
        })
    }

    /// Trusted constructor for solver output whose `w` was computed alongside `ell`.
    pub(crate) fn from_parts(system: Arc<VolterraSystem>, ell: Vec<Vector>, w: Vec<Vector>) -> Self {
        debug_assert_eq!(ell.len() + 1, w.len());
        Self {
            system,
            t_index: ell.len(),
            ell,
            w,
        }
    }

    pub fn from_snapshot(system: Arc<VolterraSystem>, snap: &PositionSnapshot) -> Result<Self> {
        let ell: Vec<Vector> = snap.ell.iter().map(|v| Vector::from_vec(v.clone())).collect();
        if ell.len() != snap.t_index {
            return Err(invalid("t_index", "does not match the number of cells in ell"));
        }
        Self::from_generator(system, ell)
    }

    pub fn snapshot(&self) -> PositionSnapshot {
        PositionSnapshot {
            t_index: self.t_index,
            ell: self.ell.iter().map(|v| v.as_slice().to_vec()).collect(),
            w: self.w.iter().map(|v| v.as_slice().to_vec()).collect(),
        }
    }

    pub fn system(&self) -> &Arc<VolterraSystem> {
        &self.system
    }

    pub fn t_index(&self) -> usize {
        self.t_index
    }

    pub fn t(&self) -> f64 {
        self.system.grid.nodes[self.t_index]
    }

    pub fn ell(&self) -> &[Vector] {
        &self.ell
    }

    pub fn w(&self) -> &[Vector] {
        &self.w
    }

    /// `w(t)`.
    pub fn current(&self) -> &Vector {
        &self.w[self.t_index]
    }

    pub fn is_terminal(&self) -> bool {
        self.t_index == self.system.grid.cells()
    }

    pub fn same_system(&self, other: &Position) -> bool {
        Arc::ptr_eq(&self.system, &other.system)
    }

    /// The extension `a(·; t, w)` at every master node.
    pub fn extend_a(&self) -> Vec<Vector> {
        let cells = self.system.grid.cells();
        let mut a = self.w.clone();
        a.extend((self.t_index + 1..=cells).map(|j| self.system.history_sum(j, &self.ell)));
        a
    }

    /// The position `(t', a_{t'}(·; t, w))` for `t' >= t`: zero generator after `t`.
    pub fn extended_to(&self, t_index: usize) -> Result<Position> {
        if t_index < self.t_index || t_index > self.system.grid.cells() {
            return Err(Error::IndexOutOfRange {
                index: t_index,
                valid: format!("{}..={}", self.t_index, self.system.grid.cells()),
            });
        }
        let mut ell = self.ell.clone();
        ell.resize(t_index, Vector::zeros(self.system.n()));
        Position::from_generator(self.system.clone(), ell)
    }

    /// Restriction of the history to `[0, t']` for `t' <= t`.
    pub fn truncated_to(&self, t_index: usize) -> Result<Position> {
        if t_index > self.t_index {
            return Err(Error::IndexOutOfRange {
                index: t_index,
                valid: format!("0..={}", self.t_index),
            });
        }
        Ok(Position {
            system: self.system.clone(),
            t_index,
            ell: self.ell[..t_index].to_vec(),
            w: self.w[..=t_index].to_vec(),
        })
    }

    /// Exact bit pattern of the generator; equal keys mean equal positions.
    pub fn key(&self) -> Vec<u64> {
        let mut key = Vec::with_capacity(1 + self.ell.len() * self.system.n());
        key.push(self.t_index as u64);
        key.extend(self.ell.iter().flat_map(|e| e.iter().map(|v| v.to_bits())));
        key
    }
}

/// `|t - t'| + max_j ||w(tau_j ∧ t) - w'(tau_j ∧ t')||` over master nodes.
pub fn dist(p: &Position, q: &Position) -> Result<f64> {
    if !p.same_system(q) {
        return Err(Error::GridMismatch);
    }
    let cells = p.system.grid.cells();
    let mut best = 0.0_f64;
    for j in 0..=cells {
        let a = &p.w[j.min(p.t_index)];
        let b = &q.w[j.min(q.t_index)];
        best = best.max((a - b).norm());
    }
    Ok((p.t() - q.t()).abs() + best)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GkParams {
    pub k: u32,
    pub c: f64,
}

impl GkParams {
    pub fn new(k: u32, c: f64) -> Result<Self> {
        if k == 0 {
            return Err(invalid("k", "must be at least 1"));
        }
        if !(c > 0.0 && c.is_finite()) {
            return Err(invalid("c", "must be positive"));
        }
        Ok(Self { k, c })
    }
}

/// Membership in `G_k`: `||ell[i]|| <= k c (1 + ||w||)` with `w` taken at the
/// right node of cell `i`, where the implicit solver evaluates the dynamics.
pub fn in_gk(pos: &Position, params: GkParams) -> bool {
    let bound = params.k as f64 * params.c;
    pos.ell
        .iter()
        .enumerate()
        .all(|(i, e)| e.norm() <= bound * (1.0 + pos.w[i + 1].norm()))
}
