//! Scenario files and the `volterra-games` command line.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::dynamics::{check_apriori_bound, check_semigroup, sample_position, solve_motion};
use crate::error::Error;
use crate::game::{
    bilinear, check_isaacs, cost_j, fractional_linear, linear_pursuit, BuiltinCosts, GameSpec, SolverConfig,
};
use crate::kernel::{
    check_nondegeneracy_with, make_counterexample_kernel, make_fractional_kernel, make_ode_kernel,
    make_tabulated_kernel, KernelSpec, TabulatedKstar, DEFAULT_DET_FLOOR,
};
use crate::lyapunov::{check_nu_bounds, check_nu_identities, gradient_study, sample_gradient_cases, NuFunctional, NuParams};
use crate::position::{MasterGrid, Position, Vector, VolterraSystem};
use crate::strategy::{zeta_optimality_experiment, CandidatePolicy, TieBreak, ZetaOptions};
use crate::value::{value_gap_study, PartitionSpec, DEFAULT_NODE_BUDGET};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid `{field}`: {reason}")]
    Field { field: String, reason: String },
}

fn field(field: impl Into<String>, reason: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        field: field.into(),
        reason: reason.into(),
    }
}

fn from_lib(prefix: &str, e: Error) -> ConfigError {
    match e {
        Error::InvalidArgument { name, reason } => field(format!("{prefix}.{name}"), reason),
        other => field(prefix, other.to_string()),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub cells: usize,
    pub horizon: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelConfig {
    Ode {
        #[serde(default = "default_ode_alpha")]
        alpha: f64,
        #[serde(default = "one")]
        n: usize,
    },
    Fractional {
        orders: Vec<f64>,
    },
    Counterexample {
        t_switch: f64,
    },
    /// Tabulated `K*` from a CSV file, resolved against the scenario's directory.
    Custom {
        path: PathBuf,
        n: usize,
        alpha: f64,
        beta: f64,
        lambda: f64,
    },
}

fn default_ode_alpha() -> f64 {
    0.5
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GameKind {
    LinearPursuit,
    Bilinear,
    FractionalLinear,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ControlGrid {
    Scalar(Vec<f64>),
    Vector(Vec<Vec<f64>>),
}

impl ControlGrid {
    fn vectors(&self) -> Vec<Vector> {
        match self {
            ControlGrid::Scalar(v) => v.iter().map(|x| Vector::from_element(1, *x)).collect(),
            ControlGrid::Vector(v) => v.iter().map(|x| Vector::from_vec(x.clone())).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameConfig {
    #[serde(rename = "type")]
    pub kind: GameKind,
    /// Constant free term `y(τ) = x0`.
    pub x0: Vec<f64>,
    pub p_grid: ControlGrid,
    pub q_grid: ControlGrid,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default)]
    pub costs: BuiltinCosts,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NuConfig {
    pub alpha_prime: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Schedule {
    Constant(usize),
    PerCell(Vec<usize>),
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::Constant(0)
    }
}

impl Schedule {
    fn expand(&self, cells: usize) -> Vec<usize> {
        match self {
            Schedule::Constant(i) => vec![*i; cells],
            Schedule::PerCell(v) => v.clone(),
        }
    }
}

fn default_steps() -> Vec<usize> {
    vec![1, 2, 4]
}
fn default_zeta_steps() -> Vec<usize> {
    vec![4]
}
fn default_cases() -> usize {
    20
}
fn default_samples() -> usize {
    100
}
fn default_tol() -> f64 {
    1e-9
}
fn default_nu_eps() -> Vec<f64> {
    vec![1.0, 0.1, 0.01]
}
fn default_theta() -> f64 {
    0.75
}
fn default_grad_eps() -> f64 {
    1.0
}
fn default_dt() -> Vec<f64> {
    vec![1.0 / 64.0, 1.0 / 128.0, 1.0 / 256.0]
}
fn default_max_ratio() -> f64 {
    0.75
}
fn default_max_rel() -> f64 {
    1e-2
}
fn default_zeta() -> f64 {
    0.1
}
fn default_zeta_eps() -> Vec<f64> {
    vec![1.0, 0.5, 0.25, 0.1]
}
fn default_cap() -> usize {
    500
}
fn default_det_floor() -> f64 {
    DEFAULT_DET_FLOOR
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExperimentConfig {
    /// One motion from the initial position under control-index schedules.
    Solve {
        #[serde(default)]
        u: Schedule,
        #[serde(default)]
        v: Schedule,
    },
    Semigroup {
        #[serde(default = "default_cases")]
        cases: usize,
        #[serde(default = "default_tol")]
        tol: f64,
    },
    ValueGap {
        #[serde(default = "default_steps")]
        steps: Vec<usize>,
    },
    NuChecks {
        #[serde(default = "default_samples")]
        samples: usize,
        #[serde(default = "default_nu_eps")]
        epsilons: Vec<f64>,
        /// Fraction of `T` bounding the sample times of the gradient bound.
        #[serde(default = "default_theta")]
        theta: f64,
    },
    GradientCheck {
        #[serde(default = "default_cases")]
        pairs: usize,
        #[serde(default = "default_grad_eps")]
        epsilon: f64,
        #[serde(default = "default_dt")]
        dt: Vec<f64>,
        #[serde(default = "default_max_ratio")]
        max_ratio: f64,
        #[serde(default = "default_max_rel")]
        max_rel_error: f64,
    },
    ZetaExperiment {
        #[serde(default = "default_zeta_steps")]
        steps: Vec<usize>,
        #[serde(default = "default_zeta")]
        zeta: f64,
        #[serde(default = "default_zeta_eps")]
        epsilons: Vec<f64>,
        #[serde(default)]
        tie_break: TieBreak,
        #[serde(default = "default_cap")]
        candidate_cap: usize,
    },
    Isaacs {
        #[serde(default = "default_samples")]
        samples: usize,
        #[serde(default = "default_tol")]
        tol: f64,
    },
    Nondegeneracy {
        #[serde(default = "default_det_floor")]
        det_floor: f64,
    },
}

impl ExperimentConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            ExperimentConfig::Solve { .. } => "solve",
            ExperimentConfig::Semigroup { .. } => "semigroup",
            ExperimentConfig::ValueGap { .. } => "value_gap",
            ExperimentConfig::NuChecks { .. } => "nu_checks",
            ExperimentConfig::GradientCheck { .. } => "gradient_check",
            ExperimentConfig::ZetaExperiment { .. } => "zeta_experiment",
            ExperimentConfig::Isaacs { .. } => "isaacs",
            ExperimentConfig::Nondegeneracy { .. } => "nondegeneracy",
        }
    }
}

/// The scenario file as written.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: Option<String>,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_budget")]
    pub node_budget: usize,
    pub grid: GridConfig,
    pub kernel: KernelConfig,
    pub game: GameConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub nu: NuConfig,
    #[serde(default)]
    pub experiments: Vec<ExperimentConfig>,
}

fn default_budget() -> usize {
    DEFAULT_NODE_BUDGET
}

/// A validated scenario with its game built.
#[derive(Clone)]
pub struct Scenario {
    pub name: String,
    pub hash: String,
    pub path: PathBuf,
    pub file: ScenarioFile,
    pub game: GameSpec,
}

impl std::fmt::Debug for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Scenario")
            .field("name", &self.name)
            .field("hash", &self.hash)
            .field("file", &self.file)
            .finish_non_exhaustive()
    }
}

pub fn scenario_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ConfigError> {
    let bytes = fs::read(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let text = String::from_utf8(bytes).map_err(|e| ConfigError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let default_name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scenario".into());
    parse_scenario(&text, path, base, default_name)
}

/// Parses scenario text; relative kernel paths resolve against `base`.
pub fn scenario_from_str(text: &str, base: &Path) -> Result<Scenario, ConfigError> {
    parse_scenario(text, Path::new("<string>"), base, "scenario".into())
}

fn parse_scenario(text: &str, path: &Path, base: &Path, default_name: String) -> Result<Scenario, ConfigError> {
    let file: ScenarioFile = toml::from_str(text).map_err(|e| ConfigError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let game = build_game(&file, base)?;
    validate_experiments(&file, &game)?;
    Ok(Scenario {
        name: file.name.clone().unwrap_or(default_name),
        hash: scenario_hash(text.as_bytes()),
        path: path.to_path_buf(),
        file,
        game,
    })
}

fn build_kernel(cfg: &KernelConfig, horizon: f64, base: &Path) -> Result<KernelSpec, ConfigError> {
    match cfg {
        KernelConfig::Ode { alpha, n } => make_ode_kernel(*n, *alpha, horizon).map_err(|e| from_lib("kernel", e)),
        KernelConfig::Fractional { orders } => {
            make_fractional_kernel(orders, horizon).map_err(|e| from_lib("kernel", e))
        }
        KernelConfig::Counterexample { t_switch } => {
            make_counterexample_kernel(*t_switch, horizon).map_err(|e| from_lib("kernel", e))
        }
        KernelConfig::Custom {
            path,
            n,
            alpha,
            beta,
            lambda,
        } => {
            let full = base.join(path);
            let f = fs::File::open(&full).map_err(|e| field("kernel.path", format!("{}: {e}", full.display())))?;
            let table = TabulatedKstar::from_csv(f, *n).map_err(|e| from_lib("kernel.path", e))?;
            make_tabulated_kernel(table, *alpha, *beta, *lambda, horizon).map_err(|e| from_lib("kernel", e))
        }
    }
}

fn build_game(file: &ScenarioFile, base: &Path) -> Result<GameSpec, ConfigError> {
    let g = &file.grid;
    if g.cells == 0 {
        return Err(field("grid.cells", "must be at least 1"));
    }
    if !(g.horizon > 0.0 && g.horizon.is_finite()) {
        return Err(field("grid.horizon", "must be positive and finite"));
    }
    let grid = MasterGrid::uniform(g.horizon, g.cells).map_err(|e| from_lib("grid", e))?;
    let kernel = build_kernel(&file.kernel, g.horizon, base)?;
    let n = kernel.n;
    let gc = &file.game;
    if gc.x0.len() != n {
        return Err(field("game.x0", format!("has {} entries, the kernel has n = {n}", gc.x0.len())));
    }
    let (p, q) = (gc.p_grid.vectors(), gc.q_grid.vectors());
    for (name, grid) in [("game.p_grid", &p), ("game.q_grid", &q)] {
        if grid.is_empty() {
            return Err(field(name, "must list at least one control"));
        }
        if let Some(c) = grid.iter().find(|c| c.len() != n) {
            return Err(field(name, format!("control of dimension {} for n = {n}", c.len())));
        }
    }
    let x0 = Vector::from_vec(gc.x0.clone());
    let system = VolterraSystem::with_free_term(grid, kernel, move |_| x0.clone()).map_err(|e| from_lib("kernel", e))?;
    let game = match gc.kind {
        GameKind::LinearPursuit => linear_pursuit(system, p, q, &gc.costs),
        GameKind::FractionalLinear => fractional_linear(system, gc.lambda, p, q, &gc.costs),
        GameKind::Bilinear => {
            if n != 1 {
                return Err(field("game.type", "bilinear needs a scalar kernel (n = 1)"));
            }
            bilinear(system, p.iter().map(|c| c[0]).collect(), q.iter().map(|c| c[0]).collect(), &gc.costs)
        }
    }
    .map_err(|e| from_lib("game", e))?;
    let s = &file.solver;
    if !(s.picard_tol > 0.0) || s.picard_max_iter == 0 {
        return Err(field("solver", "picard_tol and picard_max_iter must be positive"));
    }
    Ok(game.with_solver(*s))
}

fn check_steps(name: &str, steps: &[usize], cells: usize) -> Result<(), ConfigError> {
    if steps.is_empty() {
        return Err(field(name, "must list at least one step count"));
    }
    for &s in steps {
        if s == 0 || cells % s != 0 || cells / s < 2 {
            return Err(field(
                name,
                format!("{s} steps need at least 2 master cells each and must divide {cells}"),
            ));
        }
    }
    Ok(())
}

fn check_eps(name: &str, eps: &[f64]) -> Result<(), ConfigError> {
    if eps.is_empty() || eps.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) {
        return Err(field(name, "needs values in (0, 1]"));
    }
    Ok(())
}

fn dt_cells(grid: &MasterGrid, dt: f64) -> Option<usize> {
    let origin = grid.node(0);
    grid.nodes()
        .iter()
        .position(|&s| (s - origin - dt).abs() <= 1e-9 * dt)
        .filter(|&k| k >= 1)
}

fn validate_experiments(file: &ScenarioFile, game: &GameSpec) -> Result<(), ConfigError> {
    let grid = game.system.grid();
    let cells = grid.cells();
    let alpha = game.system.kernel().alpha;
    NuParams::new(1.0, alpha, grid.horizon(), file.nu.alpha_prime).map_err(|e| from_lib("nu", e))?;
    for (i, exp) in file.experiments.iter().enumerate() {
        let at = |f: &str| format!("experiments[{i}].{f}");
        match exp {
            ExperimentConfig::Solve { u, v } => {
                for (name, sched, len) in [("u", u, game.p_grid.len()), ("v", v, game.q_grid.len())] {
                    let seq = sched.expand(cells);
                    if seq.len() != cells {
                        return Err(field(at(name), format!("has {} entries for {cells} cells", seq.len())));
                    }
                    if let Some(bad) = seq.iter().find(|&&k| k >= len) {
                        return Err(field(at(name), format!("index {bad} outside a grid of {len} controls")));
                    }
                }
            }
            ExperimentConfig::Semigroup { cases, tol } => {
                if *cases == 0 || !(*tol >= 0.0) || cells < 2 {
                    return Err(field(at("cases"), "needs cases >= 1, tol >= 0 and at least 2 cells"));
                }
            }
            ExperimentConfig::ValueGap { steps } => check_steps(&at("steps"), steps, cells)?,
            ExperimentConfig::NuChecks {
                samples,
                epsilons,
                theta,
            } => {
                if *samples == 0 {
                    return Err(field(at("samples"), "must be positive"));
                }
                check_eps(&at("epsilons"), epsilons)?;
                if !(*theta > 0.0 && *theta < 1.0) {
                    return Err(field(at("theta"), "must lie in (0, 1)"));
                }
            }
            ExperimentConfig::GradientCheck {
                pairs, epsilon, dt, ..
            } => {
                if *pairs == 0 {
                    return Err(field(at("pairs"), "must be positive"));
                }
                check_eps(&at("epsilon"), &[*epsilon])?;
                if dt.is_empty() {
                    return Err(field(at("dt"), "must be nonempty"));
                }
                let mut widest = 0;
                for &d in dt {
                    let k = dt_cells(grid, d)
                        .ok_or_else(|| field(at("dt"), format!("{d} is not a multiple of the cell width")))?;
                    widest = widest.max(k);
                }
                if widest >= cells {
                    return Err(field(at("dt"), "largest dt must be shorter than the horizon"));
                }
            }
            ExperimentConfig::ZetaExperiment {
                steps,
                zeta,
                epsilons,
                candidate_cap,
                ..
            } => {
                check_steps(&at("steps"), steps, cells)?;
                check_eps(&at("epsilons"), epsilons)?;
                if !(*zeta >= 0.0) {
                    return Err(field(at("zeta"), "must be nonnegative"));
                }
                if *candidate_cap == 0 {
                    return Err(field(at("candidate_cap"), "must be positive"));
                }
            }
            ExperimentConfig::Isaacs { samples, tol } => {
                if *samples == 0 || !(*tol >= 0.0) {
                    return Err(field(at("samples"), "needs samples >= 1 and tol >= 0"));
                }
            }
            ExperimentConfig::Nondegeneracy { det_floor } => {
                if !(*det_floor > 0.0) {
                    return Err(field(at("det_floor"), "must be positive"));
                }
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    /// Assertion-class experiment whose checks held.
    Pass,
    Fail,
    /// Report-only experiment that completed.
    Done,
    Error,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentOutcome {
    pub index: usize,
    pub kind: &'static str,
    pub status: Status,
    pub detail: String,
    pub files: Vec<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub output_dir: PathBuf,
    pub outcomes: Vec<ExperimentOutcome>,
}

impl RunReport {
    pub fn exit_code(&self) -> i32 {
        if self.outcomes.iter().any(|o| matches!(o.status, Status::Fail | Status::Error)) {
            1
        } else {
            0
        }
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<4} {:<16} {:<6} detail", "#", "experiment", "status");
        for o in &self.outcomes {
            let status = match o.status {
                Status::Pass => "pass",
                Status::Fail => "FAIL",
                Status::Done => "done",
                Status::Error => "ERROR",
            };
            let _ = writeln!(s, "{:<4} {:<16} {:<6} {}", o.index, o.kind, status, o.detail);
        }
        s
    }
}

struct Sink<'a> {
    dir: &'a Path,
    hash: &'a str,
    stem: String,
    files: Vec<PathBuf>,
}

impl Sink<'_> {
    fn csv(&mut self, suffix: &str, header: &[String], rows: &[Vec<String>]) -> std::io::Result<()> {
        let path = self.dir.join(format!("{}{suffix}.csv", self.stem));
        let mut buf = format!("# scenario_hash={}\n", self.hash).into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(header)?;
            for r in rows {
                w.write_record(r)?;
            }
            w.flush()?;
        }
        fs::write(&path, buf)?;
        self.files.push(path);
        Ok(())
    }

    fn json(&mut self, kind: &str, result: serde_json::Value) -> std::io::Result<()> {
        let path = self.dir.join(format!("{}.json", self.stem));
        let doc = json!({ "scenario_hash": self.hash, "experiment": kind, "result": result });
        let mut text = serde_json::to_string_pretty(&doc).map_err(std::io::Error::other)?;
        text.push('\n');
        fs::write(&path, text)?;
        self.files.push(path);
        Ok(())
    }
}

fn num(x: f64) -> String {
    format!("{x}")
}

#[derive(Debug, thiserror::Error)]
enum RunError {
    #[error(transparent)]
    Lib(#[from] Error),
    #[error("writing output: {0}")]
    Io(#[from] std::io::Error),
}

/// Runs every experiment in order. Experiment `k` draws from the ChaCha8 stream
/// `k` of the generator seeded with the scenario seed.
pub fn run(scenario: &Scenario, out: Option<&Path>) -> Result<RunReport, std::io::Error> {
    let dir = out
        .map(Path::to_path_buf)
        .or_else(|| scenario.file.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(&scenario.name));
    if !scenario.file.experiments.is_empty() {
        fs::create_dir_all(&dir)?;
    }
    let mut outcomes = Vec::new();
    for (index, exp) in scenario.file.experiments.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(scenario.file.seed);
        rng.set_stream(index as u64);
        let mut sink = Sink {
            dir: &dir,
            hash: &scenario.hash,
            stem: format!("{index:02}-{}", exp.kind()),
            files: Vec::new(),
        };
        let (status, detail) = match run_one(scenario, exp, &mut rng, &mut sink) {
            Ok(r) => r,
            Err(e) => (Status::Error, e.to_string()),
        };
        outcomes.push(ExperimentOutcome {
            index,
            kind: exp.kind(),
            status,
            detail,
            files: sink.files,
        });
    }
    Ok(RunReport {
        scenario: scenario.name.clone(),
        output_dir: dir,
        outcomes,
    })
}

fn verdict(ok: bool) -> Status {
    if ok {
        Status::Pass
    } else {
        Status::Fail
    }
}

fn random_probe(n: usize, rng: &mut ChaCha8Rng) -> Vector {
    Vector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0))
}

fn run_one(
    sc: &Scenario,
    exp: &ExperimentConfig,
    rng: &mut ChaCha8Rng,
    sink: &mut Sink<'_>,
) -> Result<(Status, String), RunError> {
    let game = &sc.game;
    let grid = game.system.grid();
    let cells = grid.cells();
    let n = game.n();
    let root = Position::initial(game.system.clone());
    let budget = sc.file.node_budget;
    let alpha_prime = sc.file.nu.alpha_prime;
    match exp {
        ExperimentConfig::Solve { u, v } => {
            let (us, vs) = (u.expand(cells), v.expand(cells));
            let m = solve_motion(game, &root, &us, &vs)?;
            let mut header = vec!["tau".to_string()];
            header.extend((1..=n).map(|i| format!("x_{i}")));
            header.extend((1..=n).map(|i| format!("u_{i}")));
            header.extend((1..=n).map(|i| format!("v_{i}")));
            header.extend((1..=n).map(|i| format!("ell_{i}")));
            let rows: Vec<Vec<String>> = (0..=cells)
                .map(|j| {
                    let mut r = vec![num(grid.node(j))];
                    r.extend(m.x[j].iter().map(|x| num(*x)));
                    if j < cells {
                        r.extend(game.p_grid[m.u_rec[j]].iter().map(|x| num(*x)));
                        r.extend(game.q_grid[m.v_rec[j]].iter().map(|x| num(*x)));
                        r.extend(m.ell[j].iter().map(|x| num(*x)));
                    } else {
                        r.extend(std::iter::repeat(String::new()).take(3 * n));
                    }
                    r
                })
                .collect();
            sink.csv("", &header, &rows)?;
            let cost = cost_j(game, &m);
            let apriori = check_apriori_bound(&m, game)?;
            sink.stem.push_str("-summary");
            sink.json("solve", json!({ "cost": cost, "apriori": apriori }))?;
            Ok((
                verdict(apriori.ok),
                format!("J = {cost}, sup|x| = {:.6} <= N = {:.6}", apriori.sup_norm, apriori.bound),
            ))
        }
        ExperimentConfig::Semigroup { cases, tol } => {
            let mut rows = Vec::new();
            let mut worst = 0.0_f64;
            for case in 0..*cases {
                let mut us = Vec::with_capacity(cells);
                let mut vs = Vec::with_capacity(cells);
                while us.len() < cells {
                    let len = rng.gen_range(1..=cells - us.len());
                    let (u, v) = (rng.gen_range(0..game.p_grid.len()), rng.gen_range(0..game.q_grid.len()));
                    us.extend(std::iter::repeat(u).take(len));
                    vs.extend(std::iter::repeat(v).take(len));
                }
                let split = rng.gen_range(1..cells);
                let dev = check_semigroup(game, &root, &us, &vs, split)?;
                worst = worst.max(dev);
                rows.push(vec![case.to_string(), split.to_string(), num(dev)]);
            }
            sink.csv("", &["case".into(), "split".into(), "deviation".into()], &rows)?;
            Ok((verdict(worst <= *tol), format!("max deviation {worst:e} (tol {tol:e})")))
        }
        ExperimentConfig::ValueGap { steps } => {
            let parts = steps
                .iter()
                .map(|&s| PartitionSpec::uniform(grid, 0, s))
                .collect::<Result<Vec<_>, _>>()?;
            let study = value_gap_study(game, &root, &parts, budget)?;
            let rows: Vec<Vec<String>> = study
                .rows
                .iter()
                .map(|r| {
                    vec![
                        num(r.diameter),
                        num(r.lower),
                        num(r.upper),
                        num(r.upper - r.lower),
                        r.node_count.to_string(),
                    ]
                })
                .collect();
            let header = ["diameter", "lower", "upper", "gap", "nodes"].map(String::from);
            sink.csv("", &header, &rows)?;
            let ok = study.rows.iter().all(|r| r.lower <= r.upper + 1e-9);
            Ok((
                verdict(ok),
                format!("final gap {:e}, gap shrinks: {}", study.final_gap, study.gap_shrinks),
            ))
        }
        ExperimentConfig::NuChecks {
            samples,
            epsilons,
            theta,
        } => {
            let theta_index = ((theta * cells as f64).floor() as usize).min(cells - 1);
            let mut pairs = Vec::with_capacity(*samples);
            for _ in 0..*samples {
                let (t1, t2) = (rng.gen_range(0..=theta_index), rng.gen_range(0..=theta_index));
                pairs.push((sample_position(game, &root, t1, rng)?, sample_position(game, &root, t2, rng)?));
            }
            let nu = NuFunctional::for_system(game.system.clone(), epsilons[0], alpha_prime)?;
            let identities = epsilons
                .iter()
                .map(|&e| check_nu_identities(&nu.with_epsilon(e)?, &pairs))
                .collect::<Result<Vec<_>, _>>()?;
            let bounds = check_nu_bounds(&nu, &pairs, epsilons, grid.node(theta_index))?;
            let ok = identities.iter().all(|r| r.pass) && bounds.finite;
            sink.json("nu_checks", json!({ "identities": identities, "bounds": bounds }))?;
            Ok((
                verdict(ok),
                format!(
                    "identities {}/{} eps, C2_hat {:.4} (spread {:.3}), C3_hat {:.4}",
                    identities.iter().filter(|r| r.pass).count(),
                    identities.len(),
                    bounds.c2_hat,
                    bounds.c2_spread,
                    bounds.c3_hat
                ),
            ))
        }
        ExperimentConfig::GradientCheck {
            pairs,
            epsilon,
            dt,
            max_ratio,
            max_rel_error,
        } => {
            let widest = dt.iter().filter_map(|&d| dt_cells(grid, d)).max().unwrap_or(1);
            let cases = sample_gradient_cases(game, *pairs, widest, rng)?;
            let nu = NuFunctional::for_system(game.system.clone(), *epsilon, alpha_prime)?;
            let study = gradient_study(&nu, &cases, dt)?;
            let mut rows = Vec::new();
            for (i, (c, (p, _, _))) in study.checks.iter().zip(&cases).enumerate() {
                for r in &c.rows {
                    rows.push(vec![
                        i.to_string(),
                        num(p.t()),
                        num(r.dt),
                        num(r.difference_quotient),
                        num(r.predicted),
                        num(r.abs_error),
                        num(r.rel_error),
                    ]);
                }
            }
            let header = ["pair", "t", "dt", "difference_quotient", "predicted", "abs_error", "rel_error"]
                .map(String::from);
            sink.csv("", &header, &rows)?;
            let ratio = study.ratios.iter().copied().fold(0.0, f64::max);
            let rel = *study.rel_errors.last().expect("nonempty dt");
            sink.stem.push_str("-summary");
            sink.json(
                "gradient_check",
                json!({
                    "dt": study.dt,
                    "errors": study.errors,
                    "rel_errors": study.rel_errors,
                    "ratios": study.ratios,
                    "worst_pair_rel": study.worst_pair_rel,
                    "worst_pair_ratio": study.worst_pair_ratio,
                }),
            )?;
            Ok((
                verdict(ratio <= *max_ratio && rel <= *max_rel_error),
                format!(
                    "max ratio {ratio:.3} (<= {max_ratio}), final rel {rel:.2e} (<= {max_rel_error:e}); worst pair rel {:.2e}",
                    study.worst_pair_rel
                ),
            ))
        }
        ExperimentConfig::ZetaExperiment {
            steps,
            zeta,
            epsilons,
            tie_break,
            candidate_cap,
        } => {
            let parts = steps
                .iter()
                .map(|&s| PartitionSpec::uniform(grid, 0, s))
                .collect::<Result<Vec<_>, _>>()?;
            let opts = ZetaOptions {
                policy: CandidatePolicy::Reachable { cap: *candidate_cap },
                tie_break: *tie_break,
                alpha_prime,
                budget,
            };
            let report = zeta_optimality_experiment(game, &root, *zeta, epsilons, &parts, opts)?;
            let header = ["epsilon", "diam", "side", "guarantee", "rho_hat", "zeta", "pass", "ties"].map(String::from);
            let rows: Vec<Vec<String>> = report
                .rows
                .iter()
                .map(|r| {
                    vec![
                        num(r.epsilon),
                        num(r.diam),
                        match r.side {
                            crate::strategy::PlayerSide::First => "first".into(),
                            crate::strategy::PlayerSide::Second => "second".into(),
                        },
                        num(r.guarantee),
                        num(r.rho_hat),
                        num(r.zeta),
                        r.pass.to_string(),
                        r.ties.to_string(),
                    ]
                })
                .collect();
            sink.csv("", &header, &rows)?;
            let smallest: Vec<String> = report
                .partitions
                .iter()
                .map(|p| match p.smallest_passing_eps {
                    Some(e) => format!("diam {}: eps {e}", p.diam),
                    None => format!("diam {}: none", p.diam),
                })
                .collect();
            sink.stem.push_str("-summary");
            sink.json("zeta_experiment", json!({ "partitions": report.partitions, "any_pass": report.any_pass }))?;
            Ok((verdict(report.any_pass), format!("smallest passing {}", smallest.join("; "))))
        }
        ExperimentConfig::Isaacs { samples, tol } => {
            let mut pts = Vec::with_capacity(*samples);
            for _ in 0..*samples {
                let t = rng.gen_range(0..cells);
                let p = sample_position(game, &root, t, rng)?;
                pts.push((p.t(), p.current().clone(), random_probe(n, rng)));
            }
            let rep = check_isaacs(game, &pts, *tol)?;
            let detail = format!("max gap {:e}, Isaacs {}", rep.max_gap, if rep.pass { "holds" } else { "fails" });
            sink.json("isaacs", serde_json::to_value(&rep).map_err(std::io::Error::other)?)?;
            Ok((Status::Done, detail))
        }
        ExperimentConfig::Nondegeneracy { det_floor } => {
            let rep = check_nondegeneracy_with(game.system.kernel(), grid.nodes(), *det_floor)?;
            let detail = format!("verdict {:?}", rep.verdict).to_lowercase();
            sink.json("nondegeneracy", serde_json::to_value(&rep).map_err(std::io::Error::other)?)?;
            Ok((Status::Done, detail))
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "volterra-games", version, about = "Zero-sum games driven by weakly singular Volterra equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every experiment of a scenario and write its artifacts.
    Run {
        scenario: PathBuf,
        /// Output directory; overrides `output_dir` in the scenario.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads for the parallel parts of an experiment.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Load and validate a scenario without running it.
    Validate { scenario: PathBuf },
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

/// Entry point of the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match cli.command {
        Command::Validate { scenario } => match load_scenario(&scenario) {
            Ok(sc) => {
                println!(
                    "{}: ok ({} experiments, n = {}, {} cells)",
                    sc.name,
                    sc.file.experiments.len(),
                    sc.game.n(),
                    sc.game.system.grid().cells()
                );
                EXIT_OK
            }
            Err(e) => {
                eprintln!("error: {e}");
                EXIT_CONFIG
            }
        },
        Command::Run { scenario, out, jobs } => {
            let sc = match load_scenario(&scenario) {
                Ok(sc) => sc,
                Err(e) => {
                    eprintln!("error: {e}");
                    return EXIT_CONFIG;
                }
            };
            if jobs == Some(0) {
                eprintln!("error: invalid `--jobs`: must be positive");
                return EXIT_CONFIG;
            }
            let pool = match rayon::ThreadPoolBuilder::new().num_threads(jobs.unwrap_or(0)).build() {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("error: {e}");
                    return EXIT_FAILURE;
                }
            };
            match pool.install(|| run(&sc, out.as_deref())) {
                Ok(report) => {
                    print!("{}", report.table());
                    println!("artifacts in {}", report.output_dir.display());
                    report.exit_code()
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    EXIT_FAILURE
                }
            }
        }
    }
}
