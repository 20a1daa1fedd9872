//! The ε-optimal positional strategies and step-by-step control laws.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::dynamics::{advance, Motion};
use crate::error::{invalid, Error, Result};
use crate::game::{cost_j, hamiltonian_h, GameSpec};
use crate::lyapunov::NuFunctional;
use crate::position::{in_gk, GkParams, Position, Vector};
use crate::value::{PartitionSpec, Side, ValueTree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidatePolicy {
    /// Tree-reachable positions at the query time, strided down to `cap`, plus `w`.
    Reachable { cap: usize },
    /// Only `w` itself.
    SelfOnly,
}

impl Default for CandidatePolicy {
    fn default() -> Self {
        Self::Reachable { cap: 500 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    LowestIndex,
    /// Among exact ties, prefer the control that is best against the value
    /// oracle one partition step ahead; remaining ties go to the lowest index.
    ValueLookahead,
}

impl Default for TieBreak {
    fn default() -> Self {
        Self::ValueLookahead
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    Minus,
    Plus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PlayerSide {
    First,
    Second,
}

#[derive(Debug, Clone)]
pub struct RhoEps {
    pub value: f64,
    pub argopt: Position,
    /// Index in the candidate list; 0 is `w` itself.
    pub index: usize,
    pub candidates: usize,
}

/// Optimizes `ρ̂(t, r) ± ν_ε((t, w), (t, r)) / ε` over an explicit candidate list,
/// with `w` always considered first.
pub fn rho_eps_over(
    nu: &NuFunctional,
    pos: &Position,
    rho_hat_w: f64,
    candidates: &[(Position, f64)],
    sign: Sign,
) -> Result<RhoEps> {
    let eps = nu.params().epsilon;
    let aw = pos.extend_a();
    let mut best = RhoEps {
        value: rho_hat_w,
        argopt: pos.clone(),
        index: 0,
        candidates: candidates.len() + 1,
    };
    for (k, (r, rho)) in candidates.iter().enumerate() {
        if r.t_index() != pos.t_index() {
            return Err(invalid("candidates", "candidates must share the query time"));
        }
        let v = nu.nu_extensions(&aw, &r.extend_a());
        let score = match sign {
            Sign::Minus => rho + v / eps,
            Sign::Plus => rho - v / eps,
        };
        let better = match sign {
            Sign::Minus => score < best.value,
            Sign::Plus => score > best.value,
        };
        if better {
            best.value = score;
            best.argopt = r.clone();
            best.index = k + 1;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone)]
struct Candidate {
    pos: Position,
    ext: Vec<Vector>,
    rho: f64,
}

/// Value oracle, candidate sets and `ν_ε` shared by `U⁰_ε` and `V⁰_ε`.
pub struct StrategyOracle<'g> {
    game: &'g GameSpec,
    nu: NuFunctional,
    tree: ValueTree<'g>,
    root: Position,
    policy: CandidatePolicy,
    tie_break: TieBreak,
    value_side: Side,
    levels: HashMap<usize, Vec<Candidate>>,
    ties: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Decision {
    pub control: usize,
    /// Whether several controls attained the optimum of the Hamiltonian criterion.
    pub tied: bool,
    pub rho_eps: f64,
    pub reference_is_self: bool,
}

impl<'g> StrategyOracle<'g> {
    pub fn new(
        game: &'g GameSpec,
        nu: NuFunctional,
        root: Position,
        value_partition: PartitionSpec,
        budget: usize,
    ) -> Result<Self> {
        if value_partition.start() != root.t_index() {
            return Err(Error::InvalidPartition("value partition must start at the root".into()));
        }
        if !std::sync::Arc::ptr_eq(nu.system(), &game.system) {
            return Err(Error::GridMismatch);
        }
        Ok(Self {
            game,
            nu,
            tree: ValueTree::new(game, value_partition, budget),
            root,
            policy: CandidatePolicy::default(),
            tie_break: TieBreak::default(),
            value_side: Side::Lower,
            levels: HashMap::new(),
            ties: 0,
        })
    }

    pub fn with_policy(mut self, policy: CandidatePolicy) -> Self {
        self.policy = policy;
        self.levels.clear();
        self
    }

    pub fn with_tie_break(mut self, tie_break: TieBreak) -> Self {
        self.tie_break = tie_break;
        self
    }

    pub fn with_value_side(mut self, side: Side) -> Self {
        self.value_side = side;
        self
    }

    /// Switches `ε`; value and candidate caches are kept.
    pub fn set_epsilon(&mut self, epsilon: f64) -> Result<()> {
        self.nu = self.nu.with_epsilon(epsilon)?;
        Ok(())
    }

    pub fn nu(&self) -> &NuFunctional {
        &self.nu
    }

    pub fn ties(&self) -> usize {
        self.ties
    }

    pub fn expanded(&self) -> usize {
        self.tree.expanded()
    }

    /// `ρ̂(t, r)` from the value tree; positions off the value partition get a
    /// fresh tree over the remaining partition nodes.
    pub fn rho_hat(&mut self, pos: &Position) -> Result<f64> {
        if self.tree.partition().level_of(pos.t_index()).is_some() {
            return self.tree.value(pos, self.value_side);
        }
        let mut idx = vec![pos.t_index()];
        idx.extend(self.tree.partition().indices().iter().copied().filter(|&i| i > pos.t_index()));
        let part = PartitionSpec::from_indices(self.game.system.grid(), idx)?;
        ValueTree::new(self.game, part, crate::value::DEFAULT_NODE_BUDGET).value(pos, self.value_side)
    }

    fn candidates(&mut self, t_index: usize) -> Result<Option<&Vec<Candidate>>> {
        let cap = match self.policy {
            CandidatePolicy::SelfOnly => return Ok(None),
            CandidatePolicy::Reachable { cap } => cap,
        };
        let Some(level) = self.tree.partition().level_of(t_index) else {
            return Ok(None);
        };
        if !self.levels.contains_key(&level) {
            let all = self.tree.reachable(&self.root, level)?;
            let g1 = GkParams::new(1, self.game.c)?;
            let admissible: Vec<Position> = all.into_iter().filter(|p| in_gk(p, g1)).collect();
            let picked: Vec<Position> = if admissible.len() > cap {
                (0..cap).map(|k| admissible[k * admissible.len() / cap].clone()).collect()
            } else {
                admissible
            };
            let mut list = Vec::with_capacity(picked.len());
            for p in picked {
                let rho = self.tree.value(&p, self.value_side)?;
                let ext = p.extend_a();
                list.push(Candidate { pos: p, ext, rho });
            }
            self.levels.insert(level, list);
        }
        Ok(self.levels.get(&level))
    }

    /// `ρ_ε^∓(t, w)` and the optimizing reference position.
    pub fn rho_eps(&mut self, pos: &Position, sign: Sign) -> Result<RhoEps> {
        if !in_gk(pos, GkParams::new(1, self.game.c)?) {
            return Err(Error::NotInGk {
                t_index: pos.t_index(),
                k: 1,
            });
        }
        let rho_w = self.rho_hat(pos)?;
        let aw = pos.extend_a();
        let eps = self.nu.params().epsilon;
        let key = pos.key();
        let mut best = (rho_w, 0usize);
        let mut count = 1;
        let mut chosen: Option<Position> = None;
        let nu = self.nu.clone();
        if let Some(list) = self.candidates(pos.t_index())? {
            count += list.len();
            for (k, c) in list.iter().enumerate() {
                if c.pos.key() == key {
                    continue;
                }
                let v = nu.nu_extensions(&aw, &c.ext);
                let score = match sign {
                    Sign::Minus => c.rho + v / eps,
                    Sign::Plus => c.rho - v / eps,
                };
                let better = match sign {
                    Sign::Minus => score < best.0,
                    Sign::Plus => score > best.0,
                };
                if better {
                    best = (score, k + 1);
                    chosen = Some(c.pos.clone());
                }
            }
        }
        Ok(RhoEps {
            value: best.0,
            argopt: chosen.unwrap_or_else(|| pos.clone()),
            index: best.1,
            candidates: count,
        })
    }

    fn lookahead(&mut self, pos: &Position) -> Result<Option<Vec<Vec<f64>>>> {
        let Some(level) = self.tree.partition().level_of(pos.t_index()) else {
            return Ok(None);
        };
        if level == self.tree.partition().steps() {
            return Ok(None);
        }
        let (np, nq) = (self.game.p_grid.len(), self.game.q_grid.len());
        let mut table = vec![vec![0.0; nq]; np];
        for (u, row) in table.iter_mut().enumerate() {
            for (v, cell) in row.iter_mut().enumerate() {
                let (child, stage) = self.tree.child(pos, level, u, v)?;
                *cell = stage + self.tree.value(&child, self.value_side)?;
            }
        }
        Ok(Some(table))
    }

    fn decide(&mut self, pos: &Position, side: PlayerSide) -> Result<Decision> {
        if pos.is_terminal() {
            return Err(invalid("position", "strategies act on t < T"));
        }
        let sign = match side {
            PlayerSide::First => Sign::Minus,
            PlayerSide::Second => Sign::Plus,
        };
        let rho = self.rho_eps(pos, sign)?;
        let eps = self.nu.params().epsilon;
        let grad = Vector::from_vec(self.nu.grad_mu(pos, &rho.argopt)?.vector);
        let s = match side {
            PlayerSide::First => grad / eps,
            PlayerSide::Second => -grad / eps,
        };
        let (t, x) = (pos.t(), pos.current());
        let game = self.game;
        let h: Vec<Vec<f64>> = game
            .p_grid
            .iter()
            .map(|u| game.q_grid.iter().map(|v| hamiltonian_h(game, t, x, u, v, &s)).collect())
            .collect();
        let scores: Vec<f64> = match side {
            PlayerSide::First => h
                .iter()
                .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
                .collect(),
            PlayerSide::Second => (0..game.q_grid.len())
                .map(|j| h.iter().map(|row| row[j]).fold(f64::INFINITY, f64::min))
                .collect(),
        };
        let best = match side {
            PlayerSide::First => scores.iter().copied().fold(f64::INFINITY, f64::min),
            PlayerSide::Second => scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        };
        let tol = 1e-12 * (1.0 + best.abs());
        let tied: Vec<usize> = (0..scores.len()).filter(|&i| (scores[i] - best).abs() <= tol).collect();
        let mut control = tied[0];
        if tied.len() > 1 {
            self.ties += 1;
            if self.tie_break == TieBreak::ValueLookahead {
                if let Some(table) = self.lookahead(pos)? {
                    let look = |i: usize| -> f64 {
                        match side {
                            PlayerSide::First => table[i].iter().copied().fold(f64::NEG_INFINITY, f64::max),
                            PlayerSide::Second => table.iter().map(|row| row[i]).fold(f64::INFINITY, f64::min),
                        }
                    };
                    for &i in &tied[1..] {
                        let better = match side {
                            PlayerSide::First => look(i) < look(control),
                            PlayerSide::Second => look(i) > look(control),
                        };
                        if better {
                            control = i;
                        }
                    }
                }
            }
        }
        Ok(Decision {
            control,
            tied: tied.len() > 1,
            rho_eps: rho.value,
            reference_is_self: rho.index == 0,
        })
    }

    /// `U⁰_ε(t, w)`: index into the first player's grid.
    pub fn u0(&mut self, pos: &Position) -> Result<Decision> {
        self.decide(pos, PlayerSide::First)
    }

    /// `V⁰_ε(t, w)`: index into the second player's grid.
    pub fn v0(&mut self, pos: &Position) -> Result<Decision> {
        self.decide(pos, PlayerSide::Second)
    }
}

/// A positional strategy sees the history `(τ_j, x_{τ_j})` and nothing else.
pub trait PositionalStrategy {
    fn control(&mut self, history: &Position) -> Result<usize>;
    fn label(&self) -> String;
}

pub struct ConstantStrategy(pub usize);

impl PositionalStrategy for ConstantStrategy {
    fn control(&mut self, _: &Position) -> Result<usize> {
        Ok(self.0)
    }

    fn label(&self) -> String {
        format!("constant[{}]", self.0)
    }
}

/// `U⁰_ε` or `V⁰_ε` depending on `side`.
pub struct EpsilonStrategy<'o, 'g> {
    pub oracle: &'o mut StrategyOracle<'g>,
    pub side: PlayerSide,
}

impl PositionalStrategy for EpsilonStrategy<'_, '_> {
    fn control(&mut self, history: &Position) -> Result<usize> {
        let d = match self.side {
            PlayerSide::First => self.oracle.u0(history)?,
            PlayerSide::Second => self.oracle.v0(history)?,
        };
        Ok(d.control)
    }

    fn label(&self) -> String {
        let name = match self.side {
            PlayerSide::First => "U0",
            PlayerSide::Second => "V0",
        };
        format!("{name}[eps={}]", self.oracle.nu().params().epsilon)
    }
}

pub type FeedbackRule<'a> = Box<dyn FnMut(&Position, usize) -> Result<usize> + 'a>;

/// The opponent of the law: per-step controls fixed in advance, or a rule that
/// sees the history and the control just announced.
pub enum Adversary<'a> {
    OpenLoop { label: String, controls: Vec<usize> },
    Feedback { label: String, rule: FeedbackRule<'a> },
}

impl Adversary<'_> {
    pub fn label(&self) -> &str {
        match self {
            Adversary::OpenLoop { label, .. } | Adversary::Feedback { label, .. } => label,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LawRun {
    pub motion: Motion,
    pub cost: f64,
    pub strategy_side: PlayerSide,
    pub partition: PartitionSpec,
    pub adversary_id: String,
}

/// Step-by-step rule: at each `τ_j` the strategy reads the history, its control
/// is held on `[τ_j, τ_{j+1})`, and the adversary picks its own control for the step.
pub fn run_control_law(
    game: &GameSpec,
    start: &Position,
    side: PlayerSide,
    strategy: &mut dyn PositionalStrategy,
    partition: &PartitionSpec,
    adversary: &mut Adversary<'_>,
) -> Result<LawRun> {
    if partition.start() != start.t_index() {
        return Err(Error::InvalidPartition("partition must start at the law's start".into()));
    }
    let mut pos = start.clone();
    let mut u_rec = Vec::new();
    let mut v_rec = Vec::new();
    for (j, w) in partition.indices().windows(2).enumerate() {
        let own = strategy.control(&pos)?;
        let other = match adversary {
            Adversary::OpenLoop { controls, .. } => *controls.get(j).ok_or_else(|| {
                invalid("adversary", format!("open-loop path has {} steps, need {}", controls.len(), partition.steps()))
            })?,
            Adversary::Feedback { rule, .. } => rule(&pos, own)?,
        };
        let (u, v) = match side {
            PlayerSide::First => (own, other),
            PlayerSide::Second => (other, own),
        };
        let cells = w[1] - w[0];
        pos = advance(game, &pos, u, v, cells)?;
        u_rec.extend(std::iter::repeat(u).take(cells));
        v_rec.extend(std::iter::repeat(v).take(cells));
    }
    let motion = Motion {
        start: start.clone(),
        x: pos.w().to_vec(),
        ell: pos.ell().to_vec(),
        u_rec,
        v_rec,
    };
    let cost = cost_j(game, &motion);
    Ok(LawRun {
        motion,
        cost,
        strategy_side: side,
        partition: partition.clone(),
        adversary_id: adversary.label().to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZetaRow {
    pub epsilon: f64,
    pub diam: f64,
    pub side: PlayerSide,
    /// `sup J` for the first player's law, `inf J` for the second's.
    pub guarantee: f64,
    pub rho_hat: f64,
    pub zeta: f64,
    pub pass: bool,
    pub worst_path: Vec<usize>,
    pub ties: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartitionSummary {
    pub diam: f64,
    pub steps: usize,
    pub rho_hat: f64,
    pub value_gap: f64,
    /// Smallest ε passing both sides.
    pub smallest_passing_eps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZetaReport {
    pub rows: Vec<ZetaRow>,
    pub partitions: Vec<PartitionSummary>,
    /// Some `(ε, Δ)` passed on both sides.
    pub any_pass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZetaOptions {
    pub policy: CandidatePolicy,
    pub tie_break: TieBreak,
    pub alpha_prime: Option<f64>,
    pub budget: usize,
}

impl Default for ZetaOptions {
    fn default() -> Self {
        Self {
            policy: CandidatePolicy::default(),
            tie_break: TieBreak::default(),
            alpha_prime: None,
            budget: crate::value::DEFAULT_NODE_BUDGET,
        }
    }
}

fn paths(choices: usize, steps: usize) -> impl Iterator<Item = Vec<usize>> {
    let total = choices.pow(steps as u32);
    (0..total).map(move |mut code| {
        let mut p = vec![0; steps];
        for slot in p.iter_mut().rev() {
            *slot = code % choices;
            code /= choices;
        }
        p
    })
}

/// Worst cases of the `U⁰_ε` and `V⁰_ε` laws over every open-loop adversary path.
pub fn zeta_optimality_experiment(
    game: &GameSpec,
    root: &Position,
    zeta: f64,
    eps_list: &[f64],
    partitions: &[PartitionSpec],
    opts: ZetaOptions,
) -> Result<ZetaReport> {
    if !(zeta >= 0.0) {
        return Err(invalid("zeta", "must be nonnegative"));
    }
    let grid = game.system.grid();
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for part in partitions {
        let steps = part.steps();
        for n in [game.p_grid.len(), game.q_grid.len()] {
            let count = (n as f64).powi(steps as i32);
            if count > opts.budget as f64 {
                return Err(Error::BudgetExceeded {
                    budget: opts.budget,
                    expanded: count as usize,
                });
            }
        }
        let diam = part.diameter(grid);
        let first_eps = *eps_list.first().ok_or_else(|| invalid("eps_list", "is empty"))?;
        let nu = NuFunctional::for_system(game.system.clone(), first_eps, opts.alpha_prime)?;
        let mut oracle = StrategyOracle::new(game, nu, root.clone(), part.clone(), opts.budget)?
            .with_policy(opts.policy)
            .with_tie_break(opts.tie_break);
        let (lower, upper) = ValueTree::new(game, part.clone(), opts.budget).values(root)?;
        let rho_hat = lower;
        let mut smallest: Option<f64> = None;
        for &eps in eps_list {
            oracle.set_epsilon(eps)?;
            let mut both = true;
            for side in [PlayerSide::First, PlayerSide::Second] {
                let choices = match side {
                    PlayerSide::First => game.q_grid.len(),
                    PlayerSide::Second => game.p_grid.len(),
                };
                let ties_before = oracle.ties();
                let mut worst: Option<(f64, Vec<usize>)> = None;
                for path in paths(choices, steps) {
                    let mut adversary = Adversary::OpenLoop {
                        label: format!("{path:?}"),
                        controls: path.clone(),
                    };
                    let mut strat = EpsilonStrategy {
                        oracle: &mut oracle,
                        side,
                    };
                    let run = run_control_law(game, root, side, &mut strat, part, &mut adversary)?;
                    let worse = match (&worst, side) {
                        (None, _) => true,
                        (Some((j, _)), PlayerSide::First) => run.cost > *j,
                        (Some((j, _)), PlayerSide::Second) => run.cost < *j,
                    };
                    if worse {
                        worst = Some((run.cost, path));
                    }
                }
                let (guarantee, worst_path) = worst.expect("at least one path");
                let pass = match side {
                    PlayerSide::First => guarantee <= rho_hat + zeta,
                    PlayerSide::Second => guarantee >= rho_hat - zeta,
                };
                both &= pass;
                rows.push(ZetaRow {
                    epsilon: eps,
                    diam,
                    side,
                    guarantee,
                    rho_hat,
                    zeta,
                    pass,
                    worst_path,
                    ties: oracle.ties() - ties_before,
                });
            }
            if both {
                smallest = Some(smallest.map_or(eps, |s: f64| s.min(eps)));
            }
        }
        summaries.push(PartitionSummary {
            diam,
            steps,
            rho_hat,
            value_gap: upper - lower,
            smallest_passing_eps: smallest,
        });
    }
    let any_pass = summaries.iter().any(|s| s.smallest_passing_eps.is_some());
    Ok(ZetaReport {
        rows,
        partitions: summaries,
        any_pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::solve_motion;
    use crate::game::{linear_pursuit, scalar_grid, BuiltinCosts};
    use crate::kernel::make_ode_kernel;
    use crate::position::{MasterGrid, VolterraSystem};
    use std::sync::Arc;

    fn s(v: f64) -> Vector {
        Vector::from_element(1, v)
    }

    fn pursuit(cells: usize) -> GameSpec {
        let grid = MasterGrid::uniform(1.0, cells).unwrap();
        let sys = VolterraSystem::with_free_term(grid, make_ode_kernel(1, 0.5, 1.0).unwrap(), |_| s(1.0)).unwrap();
        linear_pursuit(sys, scalar_grid(&[-1.0, 0.0, 1.0]), scalar_grid(&[-0.5, 0.0, 0.5]), &BuiltinCosts::default())
            .unwrap()
    }

    fn oracle(g: &GameSpec, eps: f64, steps: usize) -> StrategyOracle<'_> {
        let root = Position::initial(g.system.clone());
        let part = PartitionSpec::uniform(g.system.grid(), 0, steps).unwrap();
        let nu = NuFunctional::for_system(g.system.clone(), eps, None).unwrap();
        StrategyOracle::new(g, nu, root, part, crate::value::DEFAULT_NODE_BUDGET).unwrap()
    }

    #[test]
    fn self_only_candidates_give_rho_hat() {
        let g = pursuit(8);
        let mut o = oracle(&g, 0.5, 4).with_policy(CandidatePolicy::SelfOnly);
        let p = advance(&g, &Position::initial(g.system.clone()), 0, 2, 4).unwrap();
        let rho = o.rho_hat(&p).unwrap();
        for sign in [Sign::Minus, Sign::Plus] {
            let r = o.rho_eps(&p, sign).unwrap();
            assert_eq!(r.value, rho);
            assert_eq!(r.index, 0);
        }
    }

    #[test]
    fn rho_eps_brackets_rho_hat() {
        let g = pursuit(8);
        let mut o = oracle(&g, 1.0, 4);
        let root = Position::initial(g.system.clone());
        for (u, v) in [(0, 0), (1, 2), (2, 2), (0, 2)] {
            let p = advance(&g, &root, u, v, 4).unwrap();
            let rho = o.rho_hat(&p).unwrap();
            assert!(o.rho_eps(&p, Sign::Minus).unwrap().value <= rho);
            assert!(o.rho_eps(&p, Sign::Plus).unwrap().value >= rho);
        }
    }

    #[test]
    fn two_candidate_argmin() {
        let g = pursuit(4);
        let nu = NuFunctional::for_system(g.system.clone(), 1.0, None).unwrap();
        let w = Position::from_generator(g.system.clone(), vec![s(0.0); 2]).unwrap();
        let near = Position::from_generator(g.system.clone(), vec![s(0.0), s(-0.5)]).unwrap();
        let far = Position::from_generator(g.system.clone(), vec![s(-1.5); 2]).unwrap();
        let nu_near = nu.nu(&w, &near).unwrap();
        let nu_far = nu.nu(&w, &far).unwrap();
        let (rho_w, rho_near, rho_far) = (1.0, 0.8, 0.1);
        let r = rho_eps_over(&nu, &w, rho_w, &[(near.clone(), rho_near), (far.clone(), rho_far)], Sign::Minus).unwrap();
        let scores = [rho_w, rho_near + nu_near, rho_far + nu_far];
        let want = (0..3).min_by(|&a, &b| scores[a].total_cmp(&scores[b])).unwrap();
        assert_eq!(r.index, want);
        assert_eq!(r.value, scores[want]);
    }

    #[test]
    fn zero_gradient_reduces_to_running_cost() {
        // at t = 0 every reference equals w, so h = chi = 0 and all controls tie
        let g = pursuit(8);
        let mut o = oracle(&g, 0.5, 4).with_tie_break(TieBreak::LowestIndex);
        let root = Position::initial(g.system.clone());
        let d = o.u0(&root).unwrap();
        assert!(d.tied && d.reference_is_self);
        assert_eq!(d.control, 0);
        assert_eq!(o.v0(&root).unwrap().control, 0);
    }

    #[test]
    fn lookahead_breaks_ties_toward_value() {
        let g = pursuit(8);
        let mut o = oracle(&g, 0.5, 4);
        let root = Position::initial(g.system.clone());
        assert_eq!(o.u0(&root).unwrap().control, 0);
        assert_eq!(o.v0(&root).unwrap().control, 2);
    }

    #[test]
    fn positive_costate_picks_smallest_controls() {
        // reference below w makes the gradient positive
        let g = pursuit(8);
        let nu = NuFunctional::for_system(g.system.clone(), 0.5, None).unwrap();
        let w = Position::from_generator(g.system.clone(), vec![s(0.5); 4]).unwrap();
        let r = Position::from_generator(g.system.clone(), vec![s(-0.5); 4]).unwrap();
        let sv = Vector::from_vec(nu.grad_mu(&w, &r).unwrap().vector) / 0.5;
        assert!(sv[0] > 0.0);
        assert_eq!(crate::game::argmin_max(&g, w.t(), w.current(), &sv), 0);
        assert_eq!(crate::game::argmax_min(&g, w.t(), w.current(), &(-sv)), 0);
    }

    #[test]
    fn constant_law_matches_solver() {
        let g = pursuit(8);
        let root = Position::initial(g.system.clone());
        let part = PartitionSpec::uniform(g.system.grid(), 0, 4).unwrap();
        let mut adv = Adversary::OpenLoop {
            label: "const".into(),
            controls: vec![1; 4],
        };
        let run = run_control_law(&g, &root, PlayerSide::First, &mut ConstantStrategy(2), &part, &mut adv).unwrap();
        let m = solve_motion(&g, &root, &[2; 8], &[1; 8]).unwrap();
        assert_eq!(run.motion.x, m.x);
        assert_eq!(run.cost, cost_j(&g, &m));
    }

    #[test]
    fn frozen_game_every_law_is_exact() {
        let mut g = pursuit(8);
        g.f = Arc::new(|_, _, _, _| s(0.0));
        let root = Position::initial(g.system.clone());
        let part = PartitionSpec::uniform(g.system.grid(), 0, 2).unwrap();
        let report = zeta_optimality_experiment(&g, &root, 0.0, &[1.0, 0.5], &[part], ZetaOptions::default()).unwrap();
        let sigma = (g.sigma)(&root.extend_a());
        for row in &report.rows {
            assert_eq!(row.guarantee, sigma);
            assert!(row.pass);
        }
    }

    #[test]
    fn feedback_adversary_sees_announced_control() {
        let g = pursuit(8);
        let root = Position::initial(g.system.clone());
        let part = PartitionSpec::uniform(g.system.grid(), 0, 4).unwrap();
        let mut seen = Vec::new();
        {
            let mut adv = Adversary::Feedback {
                label: "mirror".into(),
                rule: Box::new(|_, announced| {
                    seen.push(announced);
                    Ok(2 - announced.min(2))
                }),
            };
            let run = run_control_law(&g, &root, PlayerSide::First, &mut ConstantStrategy(0), &part, &mut adv).unwrap();
            for c in 0..8 {
                assert_eq!(run.motion.v_rec[c], 2);
            }
        }
        assert_eq!(seen, vec![0; 4]);
    }

    #[test]
    fn pursuit_zeta_experiment_passes_for_some_eps() {
        let g = pursuit(16);
        let root = Position::initial(g.system.clone());
        let part = PartitionSpec::uniform(g.system.grid(), 0, 4).unwrap();
        let report = zeta_optimality_experiment(&g, &root, 0.1, &[1.0, 0.5, 0.25, 0.1], &[part], ZetaOptions::default())
            .unwrap();
        assert!(report.any_pass, "{report:#?}");
    }
}
