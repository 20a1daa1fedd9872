//! Lower and upper values on exhaustive control trees.

use std::collections::HashMap;

use serde::Serialize;

use crate::dynamics::advance;
use crate::error::{Error, Result};
use crate::game::{hamiltonians, GameSpec};
use crate::position::{MasterGrid, Position};

/// Partition `Δ` as ascending master-node indices ending at `T`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PartitionSpec {
    indices: Vec<usize>,
}

impl PartitionSpec {
    pub fn from_indices(grid: &MasterGrid, indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidPartition("no nodes".into()));
        }
        if indices.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidPartition("indices must be strictly ascending".into()));
        }
        if *indices.last().unwrap() != grid.cells() {
            return Err(Error::InvalidPartition(format!(
                "last index {} is not the final node {}",
                indices.last().unwrap(),
                grid.cells()
            )));
        }
        Ok(Self { indices })
    }

    /// `steps` steps of equal master-cell counts from `start` to `T`.
    pub fn uniform(grid: &MasterGrid, start: usize, steps: usize) -> Result<Self> {
        let cells = grid
            .cells()
            .checked_sub(start)
            .ok_or_else(|| Error::InvalidPartition(format!("start {start} is past the horizon")))?;
        if steps == 0 {
            return if cells == 0 {
                Self::from_indices(grid, vec![start])
            } else {
                Err(Error::InvalidPartition("zero steps before the horizon".into()))
            };
        }
        if cells % steps != 0 {
            return Err(Error::InvalidPartition(format!(
                "{cells} remaining cells do not split into {steps} equal steps"
            )));
        }
        let per = cells / steps;
        Self::from_indices(grid, (0..=steps).map(|k| start + k * per).collect())
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn start(&self) -> usize {
        self.indices[0]
    }

    pub fn steps(&self) -> usize {
        self.indices.len() - 1
    }

    pub fn diameter(&self, grid: &MasterGrid) -> f64 {
        self.indices
            .windows(2)
            .map(|w| grid.node(w[1]) - grid.node(w[0]))
            .fold(0.0, f64::max)
    }

    /// Position of `t_index` in the partition.
    pub fn level_of(&self, t_index: usize) -> Option<usize> {
        self.indices.iter().position(|&i| i == t_index)
    }

    /// The partition from level `level` on.
    pub fn suffix(&self, level: usize) -> Self {
        Self {
            indices: self.indices[level..].to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    /// `max_v min_u` at every step.
    Lower,
    /// `min_u max_v` at every step.
    Upper,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValueEstimate {
    pub lower: f64,
    pub upper: f64,
    pub partition: PartitionSpec,
    pub diameter: f64,
    pub node_count: usize,
}

pub const DEFAULT_NODE_BUDGET: usize = 2_000_000;

/// Memoized backward induction over the tree of piecewise-constant controls.
///
/// Positions are keyed by their generator, so control paths reaching the same
/// history share one subtree.
pub struct ValueTree<'g> {
    game: &'g GameSpec,
    partition: PartitionSpec,
    budget: usize,
    expanded: usize,
    memo: HashMap<Vec<u64>, (f64, f64)>,
}

impl<'g> ValueTree<'g> {
    pub fn new(game: &'g GameSpec, partition: PartitionSpec, budget: usize) -> Self {
        Self {
            game,
            partition,
            budget,
            expanded: 0,
            memo: HashMap::new(),
        }
    }

    pub fn partition(&self) -> &PartitionSpec {
        &self.partition
    }

    pub fn expanded(&self) -> usize {
        self.expanded
    }

    /// `(lower, upper)` at a position on a partition node.
    pub fn values(&mut self, pos: &Position) -> Result<(f64, f64)> {
        let level = self.partition.level_of(pos.t_index()).ok_or_else(|| {
            Error::InvalidPartition(format!("t_index {} is not a partition node", pos.t_index()))
        })?;
        self.eval(pos, level)
    }

    pub fn value(&mut self, pos: &Position, side: Side) -> Result<f64> {
        let (lo, up) = self.values(pos)?;
        Ok(match side {
            Side::Lower => lo,
            Side::Upper => up,
        })
    }

    /// Successor of `pos` after the step starting at `level`, with the stage cost.
    pub fn child(&mut self, pos: &Position, level: usize, u: usize, v: usize) -> Result<(Position, f64)> {
        if self.expanded >= self.budget {
            return Err(Error::BudgetExceeded {
                budget: self.budget,
                expanded: self.expanded,
            });
        }
        self.expanded += 1;
        let from = self.partition.indices[level];
        let to = self.partition.indices[level + 1];
        let next = advance(self.game, pos, u, v, to - from)?;
        let grid = self.game.system.grid();
        let (pu, qv) = (&self.game.p_grid[u], &self.game.q_grid[v]);
        let mut stage = 0.0;
        for c in from..to {
            stage += (self.game.chi)(grid.node(c), &next.w()[c], pu, qv) * grid.width(c);
        }
        Ok((next, stage))
    }

    fn eval(&mut self, pos: &Position, level: usize) -> Result<(f64, f64)> {
        if level == self.partition.steps() {
            let s = (self.game.sigma)(pos.w());
            return Ok((s, s));
        }
        let key = pos.key();
        if let Some(v) = self.memo.get(&key) {
            return Ok(*v);
        }
        let (np, nq) = (self.game.p_grid.len(), self.game.q_grid.len());
        let mut lo = vec![vec![0.0; nq]; np];
        let mut up = vec![vec![0.0; nq]; np];
        for u in 0..np {
            for v in 0..nq {
                let (next, stage) = self.child(pos, level, u, v)?;
                let (l, h) = self.eval(&next, level + 1)?;
                lo[u][v] = stage + l;
                up[u][v] = stage + h;
            }
        }
        let out = (max_min(&lo), min_max(&up));
        self.memo.insert(key, out);
        Ok(out)
    }

    /// Distinct positions reachable at partition level `level`, in first-visit order
    /// of the control paths `(u, v)` enumerated lexicographically.
    pub fn reachable(&mut self, root: &Position, level: usize) -> Result<Vec<Position>> {
        let mut frontier = vec![root.clone()];
        let start = self
            .partition
            .level_of(root.t_index())
            .ok_or_else(|| Error::InvalidPartition("root is not a partition node".into()))?;
        for lv in start..level {
            let mut seen = std::collections::HashSet::new();
            let mut next = Vec::new();
            for p in &frontier {
                for u in 0..self.game.p_grid.len() {
                    for v in 0..self.game.q_grid.len() {
                        let (child, _) = self.child(p, lv, u, v)?;
                        if seen.insert(child.key()) {
                            next.push(child);
                        }
                    }
                }
            }
            frontier = next;
        }
        Ok(frontier)
    }
}

pub(crate) fn max_min(table: &[Vec<f64>]) -> f64 {
    let nq = table[0].len();
    (0..nq)
        .map(|j| table.iter().map(|row| row[j]).fold(f64::INFINITY, f64::min))
        .fold(f64::NEG_INFINITY, f64::max)
}

pub(crate) fn min_max(table: &[Vec<f64>]) -> f64 {
    table
        .iter()
        .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .fold(f64::INFINITY, f64::min)
}

pub fn tree_value(game: &GameSpec, pos: &Position, partition: &PartitionSpec, side: Side) -> Result<f64> {
    check_start(pos, partition)?;
    ValueTree::new(game, partition.clone(), DEFAULT_NODE_BUDGET).value(pos, side)
}

fn check_start(pos: &Position, partition: &PartitionSpec) -> Result<()> {
    if pos.t_index() != partition.start() {
        return Err(Error::InvalidPartition(format!(
            "partition starts at node {} but the position is at node {}",
            partition.start(),
            pos.t_index()
        )));
    }
    Ok(())
}

pub fn value_estimate(
    game: &GameSpec,
    pos: &Position,
    partition: &PartitionSpec,
    budget: usize,
) -> Result<ValueEstimate> {
    check_start(pos, partition)?;
    let mut tree = ValueTree::new(game, partition.clone(), budget);
    let (lower, upper) = tree.values(pos)?;
    Ok(ValueEstimate {
        lower,
        upper,
        partition: partition.clone(),
        diameter: partition.diameter(game.system.grid()),
        node_count: tree.expanded(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapStudy {
    pub rows: Vec<ValueEstimate>,
    /// Whether the gap is nonincreasing as the diameter decreases.
    pub gap_shrinks: bool,
    pub final_gap: f64,
}

pub fn value_gap_study(game: &GameSpec, pos: &Position, partitions: &[PartitionSpec], budget: usize) -> Result<GapStudy> {
    let mut rows = partitions
        .iter()
        .map(|p| value_estimate(game, pos, p, budget))
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| b.diameter.total_cmp(&a.diameter));
    let gap_shrinks = rows
        .windows(2)
        .all(|w| w[1].upper - w[1].lower <= w[0].upper - w[0].lower + 1e-12);
    let final_gap = rows.last().map_or(0.0, |r| r.upper - r.lower);
    Ok(GapStudy {
        rows,
        gap_shrinks,
        final_gap,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualStats {
    pub probes: usize,
    pub dt: f64,
    pub max_abs: f64,
    pub mean_abs: f64,
    pub residuals: Vec<f64>,
}

/// Finite-difference residual of `∂_t φ + H(t, w(t), ∇φ)` at each probe.
///
/// `∂_t φ` comes from the frozen extension over `dt_cells` master cells; the
/// Hamiltonian uses directional differences along constant-control motions, so
/// no gradient is formed explicitly.
pub fn hj_residual_probe<F>(
    game: &GameSpec,
    mut value_oracle: F,
    probes: &[Position],
    dt_cells: usize,
) -> Result<ResidualStats>
where
    F: FnMut(&Position) -> Result<f64>,
{
    if dt_cells == 0 {
        return Err(crate::error::invalid("dt_cells", "must be positive"));
    }
    let grid = game.system.grid();
    let mut residuals = Vec::with_capacity(probes.len());
    let mut dt_seen = 0.0;
    for p in probes {
        let t = p.t_index();
        let end = t + dt_cells;
        if end > grid.cells() {
            return Err(Error::IndexOutOfRange {
                index: end,
                valid: format!("0..={}", grid.cells()),
            });
        }
        let dt = grid.node(end) - grid.node(t);
        dt_seen = dt;
        let phi = value_oracle(p)?;
        let frozen = p.extended_to(end)?;
        let phi_frozen = value_oracle(&frozen)?;
        let dphi_dt = (phi_frozen - phi) / dt;
        let (np, nq) = (game.p_grid.len(), game.q_grid.len());
        let mut table = vec![vec![0.0; nq]; np];
        for (u, row) in table.iter_mut().enumerate() {
            for (v, cell) in row.iter_mut().enumerate() {
                let moved = advance(game, p, u, v, dt_cells)?;
                let directional = (value_oracle(&moved)? - phi_frozen) / dt;
                *cell = directional + (game.chi)(p.t(), p.current(), &game.p_grid[u], &game.q_grid[v]);
            }
        }
        residuals.push(dphi_dt + max_min(&table));
    }
    let max_abs = residuals.iter().map(|r| r.abs()).fold(0.0, f64::max);
    let mean_abs = if residuals.is_empty() {
        0.0
    } else {
        residuals.iter().map(|r| r.abs()).sum::<f64>() / residuals.len() as f64
    };
    Ok(ResidualStats {
        probes: probes.len(),
        dt: dt_seen,
        max_abs,
        mean_abs,
        residuals,
    })
}

/// One-shot minimax gap of the static game at `pos` with costate `s`.
pub fn static_gap(game: &GameSpec, pos: &Position, s: &crate::position::Vector) -> f64 {
    hamiltonians(game, pos.t(), pos.current(), s).gap
}
