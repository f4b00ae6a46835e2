//! Batch experiments: JSON configuration, staged execution, CSV/JSON
//! outputs and a manifest that makes every run reproducible.
//!
//! A run executes the stages of its kind in order. Every stage records
//! named checks with the value, the tolerance and the verdict; the run
//! passes when all checks pass.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{default_probes, Domain, Grid};
use crate::killed::{
    assemble_dirichlet_generator_with, green_operator, resolvent_u, ExteriorFn, GridOperator, SmallJumps,
};
use crate::linalg::{max_abs_diff, row_sums};
use crate::pathsim::{
    excursion_statistics, reflection_chain, simulate_ladder_batch, LadderOptions, OccupationSpec, StartLaw,
};
use crate::perturbation::{
    build_excessive, epsilon_bound, full_generator, ladder_kernel, ladder_lift, ladder_supermedian_excess,
    perturbation_matrix, reflected_kernel, semigroup, supermedian_excess, supermedian_v, DuhamelEngine,
    DuhamelSeries, SeriesOptions, ShiftedSolver, SUPERMEDIAN_SLACK,
};
use crate::point::Point;
use crate::reflection::{
    make_constant_kernel, make_dirac_kernel, make_projection_kernel, validate_hypothesis1, EntryLaw, KernelFamily,
    ReflectionKernel,
};
use crate::stable::StableParams;
use crate::stationary::{
    chain_kernel, chain_law_distances, kappa_closed_form, kappa_ergodic, kappa_generator_nullvector, stationary_p,
    triangulate, GridMeasure,
};
use crate::stats::{chi_square, total_variation};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    SemigroupCheck,
    Excessive,
    Simulate,
    Chain,
    Stationary,
    FullTriangulation,
}

impl ExperimentKind {
    pub fn parse(s: &str) -> Result<Self> {
        serde_json::from_value(Value::String(s.to_string())).map_err(|_| Error::Config {
            field: "kind".into(),
            reason: format!(
                "unknown kind `{s}`; expected one of semigroup-check, excessive, simulate, chain, stationary, full-triangulation"
            ),
        })
    }

    fn stages(self) -> &'static [Stage] {
        use Stage::*;
        match self {
            ExperimentKind::SemigroupCheck => &[Operators, Semigroup],
            ExperimentKind::Excessive => &[Operators, Excessive],
            ExperimentKind::Simulate => &[Operators, Simulate],
            ExperimentKind::Chain => &[Operators, Chain],
            ExperimentKind::Stationary => &[Operators, Chain, Stationary],
            ExperimentKind::FullTriangulation => &[Operators, Semigroup, Excessive, Simulate, Chain, Stationary],
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = serde_json::to_value(self).expect("unit enum");
        write!(f, "{}", v.as_str().unwrap_or_default())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Operators,
    Semigroup,
    Excessive,
    Simulate,
    Chain,
    Stationary,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Operators => "operators",
            Stage::Semigroup => "semigroup",
            Stage::Excessive => "excessive",
            Stage::Simulate => "simulate",
            Stage::Chain => "chain",
            Stage::Stationary => "stationary",
        }
    }

    fn summary(self, c: &ExperimentConfig) -> String {
        match self {
            Stage::Operators => format!(
                "assemble the Dirichlet generator, perturbation matrix and Green operator on {} cells; check the reflection kernel's minorization witness",
                c.n_cells
            ),
            Stage::Semigroup => format!(
                "perturbation series at t = {:?} with {} contour nodes; conservation, agreement with exp(tA), level Chapman-Kolmogorov",
                c.times, c.n_time
            ),
            Stage::Excessive => format!(
                "supermedian functions and the boundary-blow-up excessive function (n_max = {}) for lambda = {:?}; ladder lifts",
                c.n_max, c.lambdas
            ),
            Stage::Simulate => format!(
                "{} ladder paths to T = {} with dt = {}; N_t histograms against the ladder kernel",
                c.replicas, c.horizon, c.dt
            ),
            Stage::Chain => format!(
                "reflection chain kernel, Dobrushin coefficient, stationary law p by power iteration; {} exact chain steps",
                c.chain_steps
            ),
            Stage::Stationary => format!(
                "stationary density from c p g_D, the generator null vector and {} ergodic paths (burn-in {}); pairwise TV",
                c.replicas, c.burn_in
            ),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSpec {
    pub d: usize,
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MuSpec {
    Constant { law: EntryLaw },
    Dirac { x0: f64 },
    Projection { depth: f64, width: f64 },
}

impl MuSpec {
    pub fn build(&self, domain: &Domain) -> Result<ReflectionKernel> {
        match self {
            MuSpec::Constant { law } => make_constant_kernel(domain, law.clone()),
            MuSpec::Dirac { x0 } => make_dirac_kernel(domain, Point::scalar(*x0)),
            MuSpec::Projection { depth, width } => make_projection_kernel(domain, *depth, *width),
        }
    }
}

mod defaults {
    use super::*;

    pub fn kind() -> ExperimentKind {
        ExperimentKind::FullTriangulation
    }
    pub fn params() -> ParamsSpec {
        ParamsSpec { d: 1, alpha: 1.0 }
    }
    pub fn domain() -> Domain {
        Domain::Interval { a: -1.0, b: 1.0 }
    }
    pub fn mu() -> MuSpec {
        MuSpec::Constant {
            law: EntryLaw::uniform(-0.5, 0.5),
        }
    }
    pub fn n_cells() -> usize {
        400
    }
    pub fn n_time() -> usize {
        crate::perturbation::DEFAULT_CONTOUR_NODES
    }
    pub fn dt() -> f64 {
        1e-3
    }
    pub fn horizon() -> f64 {
        200.0
    }
    pub fn burn_in() -> f64 {
        10.0
    }
    pub fn replicas() -> usize {
        200
    }
    pub fn lambdas() -> Vec<f64> {
        vec![0.1, 1.0]
    }
    pub fn times() -> Vec<f64> {
        vec![0.1, 0.5, 2.0]
    }
    pub fn n_max() -> usize {
        6
    }
    pub fn chain_steps() -> usize {
        100_000
    }
    pub fn output_dir() -> PathBuf {
        PathBuf::from("out")
    }
}

/// A complete experiment description. Every field but `seed` has a
/// default; `seed` is mandatory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "defaults::kind")]
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "defaults::params")]
    pub params: ParamsSpec,
    #[serde(default = "defaults::domain")]
    pub domain: Domain,
    #[serde(default = "defaults::mu")]
    pub mu: MuSpec,
    #[serde(default = "defaults::n_cells")]
    pub n_cells: usize,
    #[serde(default)]
    pub small_jumps: SmallJumps,
    /// Contour nodes of the series inversion.
    #[serde(default = "defaults::n_time")]
    pub n_time: usize,
    #[serde(default = "defaults::dt")]
    pub dt: f64,
    #[serde(default = "defaults::horizon")]
    pub horizon: f64,
    #[serde(default = "defaults::burn_in")]
    pub burn_in: f64,
    #[serde(default = "defaults::replicas")]
    pub replicas: usize,
    /// Start of simulated paths; the grid node nearest to it is used.
    /// Defaults to the midpoint of the domain.
    #[serde(default)]
    pub start: Option<f64>,
    #[serde(default = "defaults::lambdas")]
    pub lambdas: Vec<f64>,
    #[serde(default = "defaults::times")]
    pub times: Vec<f64>,
    #[serde(default = "defaults::n_max")]
    pub n_max: usize,
    #[serde(default = "defaults::chain_steps")]
    pub chain_steps: usize,
    #[serde(default = "defaults::output_dir")]
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            kind: defaults::kind(),
            seed: Some(1),
            params: defaults::params(),
            domain: defaults::domain(),
            mu: defaults::mu(),
            n_cells: defaults::n_cells(),
            small_jumps: SmallJumps::default(),
            n_time: defaults::n_time(),
            dt: defaults::dt(),
            horizon: defaults::horizon(),
            burn_in: defaults::burn_in(),
            replicas: defaults::replicas(),
            start: None,
            lambdas: defaults::lambdas(),
            times: defaults::times(),
            n_max: defaults::n_max(),
            chain_steps: defaults::chain_steps(),
            output_dir: defaults::output_dir(),
        }
    }
}

const CHAIN_BURN_IN: usize = 100;

fn cfg_err(field: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        field: field.to_string(),
        reason: reason.into(),
    }
}

impl ExperimentConfig {
    /// Parses and validates a JSON document.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| {
            let msg = e.to_string();
            let field = msg
                .split('`')
                .nth(1)
                .filter(|_| msg.starts_with("unknown field") || msg.starts_with("missing field"))
                .unwrap_or("<document>")
                .to_string();
            Error::Config { field, reason: msg }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| cfg_err("--config", format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization. The output directory is
    /// not part of the experiment and is excluded.
    pub fn sha256(&self) -> String {
        hex(&Sha256::digest(serde_json::to_vec(&self.portable()).expect("config serializes")))
    }

    /// The configuration with the output directory reset to its default.
    pub fn portable(&self) -> ExperimentConfig {
        ExperimentConfig {
            output_dir: defaults::output_dir(),
            ..self.clone()
        }
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| cfg_err("seed", "a seed is mandatory"))
    }

    pub fn validate(&self) -> Result<()> {
        self.seed()?;
        let a = self.params.alpha;
        if !(a > 0.0 && a < 2.0) {
            return Err(cfg_err("params.alpha", format!("{a} is out of range: alpha must lie in (0, 2)")));
        }
        if self.params.d != 1 {
            return Err(cfg_err("params.d", "grid experiments are one-dimensional; d must be 1"));
        }
        let domain = self.domain.clone().validated().map_err(|e| cfg_err("domain", e.to_string()))?;
        if domain.dim() != 1 {
            return Err(cfg_err("domain", "must be one-dimensional"));
        }
        self.mu.build(&domain).map_err(|e| cfg_err("mu", e.to_string()))?;
        if !(4..=4000).contains(&self.n_cells) {
            return Err(cfg_err("n_cells", format!("{} is out of range [4, 4000]", self.n_cells)));
        }
        Grid::build(&domain, self.n_cells).map_err(|e| cfg_err("n_cells", e.to_string()))?;
        if self.n_time < 8 || self.n_time % 2 != 0 {
            return Err(cfg_err("n_time", format!("{} must be even and at least 8", self.n_time)));
        }
        if !(self.dt > 0.0 && self.dt <= 0.1) {
            return Err(cfg_err("dt", format!("{} is out of range (0, 0.1]", self.dt)));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(cfg_err("horizon", "must be positive and finite"));
        }
        if !(self.burn_in >= 0.0 && self.burn_in < self.horizon) {
            return Err(cfg_err("burn_in", "must lie in [0, horizon)"));
        }
        if self.replicas == 0 {
            return Err(cfg_err("replicas", "must be positive"));
        }
        if let Some(s) = self.start {
            if !domain.contains(&Point::scalar(s)) {
                return Err(cfg_err("start", format!("{s} is not in D")));
            }
        }
        if self.lambdas.is_empty() || self.lambdas.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(cfg_err("lambdas", "must be a nonempty list of positive numbers"));
        }
        if self.times.is_empty() || self.times.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(cfg_err("times", "must be a nonempty list of positive numbers"));
        }
        if !(1..=30).contains(&self.n_max) {
            return Err(cfg_err("n_max", "must lie in 1..=30"));
        }
        if self.chain_steps <= 2 * CHAIN_BURN_IN {
            return Err(cfg_err("chain_steps", format!("must exceed {}", 2 * CHAIN_BURN_IN)));
        }
        Ok(())
    }

    pub fn stages(&self) -> &'static [Stage] {
        self.kind.stages()
    }
}

/// The resolved plan, one line per stage.
pub fn describe(cfg: &ExperimentConfig) -> Result<Vec<String>> {
    cfg.validate()?;
    let mut out = vec![format!(
        "experiment {} (seed {}, config sha256 {})",
        cfg.kind,
        cfg.seed()?,
        &cfg.sha256()[..16]
    )];
    for (k, s) in cfg.stages().iter().enumerate() {
        out.push(format!("  {}. {}: {}", k + 1, s.name(), s.summary(cfg)));
    }
    out.push(format!("  outputs -> {}", cfg.output_dir.display()));
    Ok(out)
}

/// One named numerical check.
#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub stage: &'static str,
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    /// `"<="`, `"<"`, `">="` or `">"`: how `value` is compared to `tolerance`.
    pub relation: &'static str,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub crate_version: &'static str,
    pub kind: ExperimentKind,
    pub seed: u64,
    pub config_sha256: String,
    pub threads: usize,
    pub wall_time_s: f64,
    pub passed: bool,
    pub files: Vec<FileEntry>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub passed: bool,
    pub checks: Vec<Check>,
    pub manifest: Manifest,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes files under the output directory and remembers them.
struct Writer {
    dir: PathBuf,
    files: Vec<FileEntry>,
}

impl Writer {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Writer {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn bytes(&mut self, name: &str, data: &[u8]) -> Result<()> {
        fs::write(self.dir.join(name), data)?;
        self.files.push(FileEntry {
            path: name.to_string(),
            bytes: data.len() as u64,
            sha256: hex(&Sha256::digest(data)),
        });
        Ok(())
    }

    fn json(&mut self, name: &str, v: &impl Serialize) -> Result<()> {
        let mut s = serde_json::to_vec_pretty(v)?;
        s.push(b'\n');
        self.bytes(name, &s)
    }

    fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.write_record(r.iter().map(|v| v.to_string()))?;
        }
        let data = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        self.bytes(name, &data)
    }
}

/// Operators shared by the stages.
struct Ops {
    params: StableParams,
    mu: ReflectionKernel,
    grid: Arc<Grid>,
    l: GridOperator,
    m: GridOperator,
    a: GridOperator,
    green: GridOperator,
    engine: DuhamelEngine,
    start_node: usize,
}

impl Ops {
    fn build(cfg: &ExperimentConfig) -> Result<Self> {
        let params = StableParams::new(cfg.params.d, cfg.params.alpha)?;
        let domain = cfg.domain.clone().validated()?;
        let mu = cfg.mu.build(&domain)?;
        let grid = Grid::build(&domain, cfg.n_cells)?;
        let l = assemble_dirichlet_generator_with(&grid, &params, cfg.small_jumps)?;
        let m = perturbation_matrix(&grid, &params, &mu)?;
        let a = full_generator(&l, &m)?;
        let green = green_operator(&l)?;
        let engine = DuhamelEngine::new(&l, &m)?;
        let (lo, hi) = domain.bounding_box();
        let start = cfg.start.unwrap_or(0.5 * (lo.x() + hi.x()));
        let start_node = grid.nearest_node(start);
        Ok(Ops {
            params,
            mu,
            grid,
            l,
            m,
            a,
            green,
            engine,
            start_node,
        })
    }

    fn series(&self, cfg: &ExperimentConfig, t: f64) -> Result<DuhamelSeries> {
        let opts = SeriesOptions {
            contour_nodes: cfg.n_time,
            ..Default::default()
        };
        self.engine.series(t, &opts)
    }

    fn start_point(&self) -> Point {
        Point::scalar(self.grid.node(self.start_node))
    }
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    seed: u64,
    ops: Ops,
    writer: Writer,
    checks: Vec<Check>,
    reports: serde_json::Map<String, Value>,
    p: Option<GridMeasure>,
}

impl Context<'_> {
    fn check(&mut self, stage: Stage, name: impl Into<String>, value: f64, relation: &'static str, tolerance: f64) {
        let pass = match relation {
            "<=" => value <= tolerance,
            "<" => value < tolerance,
            ">=" => value >= tolerance,
            _ => value > tolerance,
        };
        self.checks.push(Check {
            stage: stage.name(),
            name: name.into(),
            value,
            tolerance,
            relation,
            pass,
        });
    }
}

/// Runs the experiment in a dedicated pool of `threads` workers (all
/// available cores when `None`).
pub fn run_with_threads(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<RunOutcome> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        b = b.num_threads(n);
    }
    let pool = b.build().map_err(|e| Error::Numerical(format!("thread pool: {e}")))?;
    pool.install(|| run(cfg))
}

pub fn run(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let seed = cfg.seed()?;
    let writer = Writer::new(&cfg.output_dir)?;
    let mut ctx = Context {
        cfg,
        seed,
        ops: Ops::build(cfg)?,
        writer,
        checks: Vec::new(),
        reports: serde_json::Map::new(),
        p: None,
    };
    ctx.writer.bytes("config.json", format!("{}\n", cfg.portable().to_json()).as_bytes())?;
    for stage in cfg.stages() {
        let report = match stage {
            Stage::Operators => stage_operators(&mut ctx)?,
            Stage::Semigroup => stage_semigroup(&mut ctx)?,
            Stage::Excessive => stage_excessive(&mut ctx)?,
            Stage::Simulate => stage_simulate(&mut ctx)?,
            Stage::Chain => stage_chain(&mut ctx)?,
            Stage::Stationary => stage_stationary(&mut ctx)?,
        };
        ctx.reports.insert(stage.name().to_string(), report);
    }
    let passed = ctx.checks.iter().all(|c| c.pass);
    let report = json!({
        "kind": cfg.kind,
        "seed": seed,
        "passed": passed,
        "checks": ctx.checks,
        "stages": Value::Object(ctx.reports.clone()),
    });
    ctx.writer.json("report.json", &report)?;
    let manifest = Manifest {
        crate_version: env!("CARGO_PKG_VERSION"),
        kind: cfg.kind,
        seed,
        config_sha256: cfg.sha256(),
        threads: rayon::current_num_threads(),
        wall_time_s: started.elapsed().as_secs_f64(),
        passed,
        files: ctx.writer.files.clone(),
    };
    let mut m = serde_json::to_vec_pretty(&manifest)?;
    m.push(b'\n');
    fs::write(cfg.output_dir.join("manifest.json"), m)?;
    Ok(RunOutcome {
        passed,
        checks: ctx.checks,
        manifest,
    })
}

fn stage_operators(ctx: &mut Context) -> Result<Value> {
    let probes = default_probes(ctx.ops.grid.domain());
    let hyp = validate_hypothesis1(&ctx.ops.mu, &probes)?;
    let scale = ctx.ops.l.entries().amax();
    let a_rows = ctx.ops.a.row_sums().iter().map(|s| s.abs()).fold(0.0, f64::max);
    ctx.check(Stage::Operators, "full generator |row sum|", a_rows, "<=", 1e-10 * scale.max(1.0));
    let kappa = crate::killed::killing_vector(&ctx.ops.params, &ctx.ops.grid)?;
    let ones = ctx.ops.green.apply(&kappa);
    let gk = ones.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
    ctx.check(Stage::Operators, "|G kappa - 1|", gk, "<=", 1e-8);
    Ok(json!({
        "n_cells": ctx.ops.grid.len(),
        "h": ctx.ops.grid.h(),
        "kernel": ctx.ops.mu.name(),
        "theta_hat": hyp.theta_hat,
        "witness_theta": hyp.witness_theta,
        "perturbation_rank": ctx.ops.engine.rank(),
    }))
}

const CK_PAIRS: [(f64, f64); 3] = [(0.1, 0.1), (0.1, 0.5), (0.5, 0.5)];
const CK_LEVELS: usize = 4;

fn stage_semigroup(ctx: &mut Context) -> Result<Value> {
    let cfg = ctx.cfg;
    let mut series_reports = Vec::new();
    for &t in &cfg.times {
        let s = ctx.ops.series(cfg, t)?;
        let k = reflected_kernel(&s)?;
        let dev = k.row_sums().iter().map(|r| (r - 1.0).abs()).fold(0.0, f64::max);
        ctx.check(Stage::Semigroup, format!("t={t}: max |K(t)1 - 1|"), dev, "<=", 1e-4);
        let e = semigroup(&ctx.ops.a, t)?;
        let diff = max_abs_diff(k.entries(), e.entries());
        ctx.check(Stage::Semigroup, format!("t={t}: |sum K_n - exp(tA)|max"), diff, "<=", 1e-3);
        ctx.check(Stage::Semigroup, format!("t={t}: fitted gamma"), s.gamma(), "<", 1.0);
        let heat_rows = row_sums(&s.terms()[0]);
        let exit_excess = s.terms()[1..]
            .iter()
            .fold(vec![0.0; heat_rows.len()], |mut acc, term| {
                for (a, r) in acc.iter_mut().zip(row_sums(term)) {
                    *a += r;
                }
                acc
            })
            .iter()
            .zip(&heat_rows)
            .map(|(sum, h)| sum - (1.0 - h))
            .fold(f64::NEG_INFINITY, f64::max);
        ctx.check(Stage::Semigroup, format!("t={t}: exit bound excess"), exit_excess, "<=", 1e-6);
        let rows: Vec<Vec<f64>> = ctx
            .ops
            .grid
            .nodes()
            .iter()
            .enumerate()
            .flat_map(|(i, &x)| {
                let k = &k;
                ctx.ops
                    .grid
                    .nodes()
                    .iter()
                    .enumerate()
                    .map(move |(j, &y)| vec![x, y, k.entries()[(i, j)]])
            })
            .collect();
        ctx.writer.csv(&format!("kernel_t{t}.csv"), &["x", "y", "mass"], &rows)?;
        let levels: Vec<Vec<f64>> = s
            .level_mass()
            .iter()
            .enumerate()
            .map(|(n, m)| vec![n as f64, *m])
            .collect();
        ctx.writer.csv(&format!("level_mass_t{t}.csv"), &["n", "max_row_mass"], &levels)?;
        series_reports.push(json!({ "series": s.report(), "conservation": dev, "exp_diff": diff }));
    }
    let mut ck_worst: f64 = 0.0;
    for (s, t) in CK_PAIRS {
        let a = ctx.ops.series(cfg, s)?;
        let b = ctx.ops.series(cfg, t)?;
        let c = ctx.ops.series(cfg, s + t)?;
        for n in 0..=CK_LEVELS {
            let term = |x: &DuhamelSeries, k: usize| x.term(k).cloned();
            let mut acc = nalgebra::DMatrix::<f64>::zeros(ctx.ops.grid.len(), ctx.ops.grid.len());
            for k in 0..=n {
                if let (Some(x), Some(y)) = (term(&a, k), term(&b, n - k)) {
                    acc += x * y;
                }
            }
            let target = term(&c, n).unwrap_or_else(|| acc.clone() * 0.0);
            ck_worst = ck_worst.max(max_abs_diff(&acc, &target));
        }
    }
    ctx.check(Stage::Semigroup, "level Chapman-Kolmogorov residual", ck_worst, "<=", 1e-4);
    Ok(json!({ "series": series_reports, "chapman_kolmogorov": ck_worst }))
}

const SUPERMEDIAN_TIMES: [f64; 3] = [0.1, 1.0, 10.0];

fn stage_excessive(ctx: &mut Context) -> Result<Value> {
    let cfg = ctx.cfg;
    let mut reports = Vec::new();
    let exps: Vec<(f64, GridOperator)> = SUPERMEDIAN_TIMES
        .iter()
        .map(|&t| semigroup(&ctx.ops.a, t).map(|p| (t, p)))
        .collect::<Result<_>>()?;
    let kernels: Vec<(f64, DuhamelSeries)> = cfg
        .times
        .iter()
        .map(|&t| ctx.ops.series(cfg, t).map(|s| (t, s)))
        .collect::<Result<_>>()?;
    for &lambda in &cfg.lambdas {
        let one = ExteriorFn::Constant(1.0);
        let u = resolvent_u(&ctx.ops.l, lambda, &one)?;
        let v = supermedian_v(&ctx.ops.a, lambda, &one)?;
        let umax = u.iter().cloned().fold(0.0, f64::max);
        ctx.check(Stage::Excessive, format!("lambda={lambda}: max u"), umax, "<", 1.0);
        let eps = epsilon_bound(&ctx.ops.mu, &u, &ctx.ops.grid)?;
        let vmax = v.iter().cloned().fold(0.0, f64::max);
        ctx.check(Stage::Excessive, format!("lambda={lambda}: max v - 1/eps"), vmax - 1.0 / eps, "<=", 0.0);
        let mu_u = ctx.ops.m.apply(&u);
        let corr = ShiftedSolver::new(&ctx.ops.a, lambda)?.solve(&mu_u)?;
        let ident = v
            .iter()
            .zip(&u)
            .zip(&corr)
            .map(|((v, u), c)| (v - u - c).abs())
            .fold(0.0, f64::max);
        ctx.check(Stage::Excessive, format!("lambda={lambda}: resolvent identity residual"), ident, "<=", 1e-8);
        let ex = build_excessive(&ctx.ops.a, lambda, cfg.n_max)?;
        let center = ex.values[ctx.ops.grid.nearest_node(ctx.ops.start_point().x())];
        let edge = ex.values[0].max(ex.values[ex.values.len() - 1]);
        ctx.check(Stage::Excessive, format!("lambda={lambda}: boundary/center ratio"), edge / center, ">", 1.0);
        if lambda == 1.0 {
            ctx.check(Stage::Excessive, "lambda=1: boundary dominance", edge / center, ">=", 2.0);
        }
        for (t, p) in &exps {
            for (name, h) in [("u", &u), ("v", &v), ("excessive", &ex.values)] {
                let exc = supermedian_excess(p.entries(), lambda, *t, h);
                ctx.check(
                    Stage::Excessive,
                    format!("lambda={lambda} t={t}: supermedian excess of {name}"),
                    exc,
                    "<=",
                    SUPERMEDIAN_SLACK,
                );
            }
        }
        for (t, s) in &kernels {
            let k = reflected_kernel(s)?;
            let lk = ladder_kernel(s, s.truncation_n() + 1)?;
            let ones = vec![1.0; ctx.ops.grid.len()];
            let hmax = ex.values.iter().cloned().fold(0.0, f64::max);
            for (name, h, a, scale) in [("H[1,0.5]", &ones, 0.5, 1.0), ("H[v,1]", &ex.values, 1.0, hmax)] {
                let hh = ladder_lift(h, a, lambda, &k, lk.levels())?;
                let exc = ladder_supermedian_excess(&lk, lambda, &hh)?;
                let slack = SUPERMEDIAN_SLACK + lk.tail_bound() * scale;
                ctx.check(
                    Stage::Excessive,
                    format!("lambda={lambda} t={t}: ladder excess of {name}"),
                    exc,
                    "<=",
                    slack,
                );
            }
        }
        let header: Vec<String> = ["x", "u", "v_one", "excessive"]
            .iter()
            .map(|s| s.to_string())
            .chain((1..=ex.summands.len()).map(|n| format!("summand_{n}")))
            .collect();
        let header: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
        let rows: Vec<Vec<f64>> = (0..ctx.ops.grid.len())
            .map(|i| {
                let mut r = vec![ctx.ops.grid.node(i), u[i], v[i], ex.values[i]];
                r.extend(ex.summands.iter().map(|s| s[i]));
                r
            })
            .collect();
        ctx.writer.csv(&format!("excessive_lambda{lambda}.csv"), &header, &rows)?;
        reports.push(json!({
            "lambda": lambda,
            "epsilon": eps,
            "max_u": umax,
            "max_v": vmax,
            "radii": ex.radii,
            "boundary_center_ratio": edge / center,
        }));
    }
    Ok(Value::Array(reports))
}

fn stage_simulate(ctx: &mut Context) -> Result<Value> {
    let cfg = ctx.cfg;
    let ops = &ctx.ops;
    let domain = ops.grid.domain().clone();
    let times: Vec<f64> = cfg.times.iter().copied().filter(|t| *t <= cfg.horizon).collect();
    let mut opts = LadderOptions::new(cfg.dt, times.iter().cloned().fold(0.0, f64::max).max(cfg.dt));
    opts.checkpoints = times.clone();
    let paths = simulate_ladder_batch(
        &ops.params,
        &domain,
        &ops.mu,
        &StartLaw::Point(ops.start_point()),
        &opts,
        cfg.replicas,
        ctx.seed,
    )?;
    for p in &paths {
        p.validate(&domain)?;
    }
    let mut reports = Vec::new();
    for (ci, &t) in times.iter().enumerate() {
        let s = ctx.ops.series(cfg, t)?;
        let lk = ladder_kernel(&s, s.truncation_n() + 1)?;
        let probs = lk.level_distribution(ctx.ops.start_node);
        let mut counts = vec![0u64; probs.len()];
        for p in &paths {
            let n = (p.checkpoints[ci].n as usize).min(counts.len() - 1);
            counts[n] += 1;
        }
        let chi = chi_square(&counts, &probs);
        let rows: Vec<Vec<f64>> = counts
            .iter()
            .zip(&probs)
            .enumerate()
            .map(|(n, (c, p))| vec![n as f64, *c as f64, *c as f64 / cfg.replicas as f64, *p])
            .collect();
        ctx.writer.csv(&format!("nt_histogram_t{t}.csv"), &["n", "count", "empirical", "ladder_kernel"], &rows)?;
        match chi {
            Ok(c) => {
                ctx.check(Stage::Simulate, format!("t={t}: N_t chi-square p-value"), c.p_value, ">", 0.01);
                reports.push(json!({ "t": t, "chi_square": c }));
            }
            Err(e) => reports.push(json!({ "t": t, "chi_square": Value::Null, "note": e.to_string() })),
        }
    }
    let mut out = json!({ "paths": paths.len(), "n_t": reports });
    if let KernelFamily::Constant(law) = ctx.ops.mu.family() {
        let mut o = LadderOptions::new(cfg.dt, cfg.horizon.min(20.0));
        o.window = Some((0.0, 0.5));
        let ex = simulate_ladder_batch(
            &ctx.ops.params,
            &domain,
            &ctx.ops.mu,
            &StartLaw::Law(law.clone()),
            &o,
            cfg.replicas,
            ctx.seed ^ 0x5eed,
        )?;
        match excursion_statistics(&ex) {
            Ok(st) => {
                let n = st.lag1_pairs as f64;
                ctx.check(
                    Stage::Simulate,
                    "lag-1 duration autocorrelation |rho| * sqrt(n)",
                    st.lag1_autocorrelation.abs() * n.sqrt(),
                    "<=",
                    4.0,
                );
                ctx.check(
                    Stage::Simulate,
                    "KS(first, fifth excursion) minus 1% critical value",
                    st.ks_first_fifth.statistic - st.ks_first_fifth.critical_1pct,
                    "<",
                    0.0,
                );
                out["excursions"] = serde_json::to_value(&st)?;
            }
            Err(e) => out["excursions"] = json!({ "note": e.to_string() }),
        }
    }
    Ok(out)
}

fn stage_chain(ctx: &mut Context) -> Result<Value> {
    let cfg = ctx.cfg;
    let chain = chain_kernel(&ctx.ops.green, &ctx.ops.m)?;
    let sp = stationary_p(&chain, 1e-12)?;
    ctx.check(Stage::Chain, "two-step Dobrushin beta", sp.two_step.beta_hat, "<", 1.0);
    ctx.check(
        Stage::Chain,
        "empirical rate minus sqrt(beta) + 0.05",
        sp.rate - (sp.two_step.beta_hat.sqrt() + 0.05),
        "<=",
        0.0,
    );
    let dist = chain_law_distances(&chain, &sp.measure, 8);
    for n in [4usize, 6, 8] {
        let bound = dist[2] * sp.two_step.beta_hat.powi(n as i32 / 2 - 1);
        ctx.check(Stage::Chain, format!("TV(R_{n}, p) minus Dobrushin bound"), dist[n] - bound, "<=", 1e-10);
    }
    let domain = ctx.ops.grid.domain().clone();
    let r = reflection_chain(
        &ctx.ops.params,
        &domain,
        &ctx.ops.mu,
        &ctx.ops.start_point(),
        cfg.chain_steps,
        ctx.seed,
        0,
    )?;
    let mut occ = vec![0.0; ctx.ops.grid.len()];
    for x in &r[CHAIN_BURN_IN..] {
        if let Some(j) = ctx.ops.grid.locate(x.x()) {
            occ[j] += 1.0;
        }
    }
    let mc = GridMeasure::from_weights(ctx.ops.grid.clone(), occ, 0.0)?;
    let tv = mc.tv(&sp.measure);
    ctx.check(Stage::Chain, "TV(chain occupation, p)", tv, "<=", 0.05);
    let dens = sp.measure.density();
    let rows: Vec<Vec<f64>> = (0..ctx.ops.grid.len())
        .map(|i| vec![ctx.ops.grid.node(i), sp.measure.masses()[i], dens[i], mc.masses()[i]])
        .collect();
    ctx.writer.csv("stationary_p.csv", &["x", "mass", "density", "chain_mc_mass"], &rows)?;
    let rep = json!({
        "iterations": sp.iterations,
        "rate": sp.rate,
        "beta_hat": sp.two_step.beta_hat,
        "overlap": sp.two_step.overlap,
        "residual": sp.residual,
        "chain_tv": tv,
        "law_distances": dist,
    });
    ctx.p = Some(sp.measure);
    Ok(rep)
}

fn stage_stationary(ctx: &mut Context) -> Result<Value> {
    let cfg = ctx.cfg;
    let p = ctx.p.clone().ok_or_else(|| Error::Assertion("chain stage must run first".into()))?;
    let closed = kappa_closed_form(&p, &ctx.ops.green)?;
    let null = kappa_generator_nullvector(&ctx.ops.a)?;
    let domain = ctx.ops.grid.domain().clone();
    let mut opts = LadderOptions::new(cfg.dt, cfg.horizon);
    opts.occupation = Some(OccupationSpec {
        grid: ctx.ops.grid.clone(),
        burn_in: cfg.burn_in,
    });
    let paths = simulate_ladder_batch(
        &ctx.ops.params,
        &domain,
        &ctx.ops.mu,
        &StartLaw::Point(ctx.ops.start_point()),
        &opts,
        cfg.replicas,
        ctx.seed,
    )?;
    let ergodic = kappa_ergodic(&paths, &ctx.ops.grid)?;
    let tri = triangulate(&[("closed_form", &closed), ("null_vector", &null.measure), ("ergodic", &ergodic)]);
    ctx.check(Stage::Stationary, "max pairwise TV of kappa estimates", tri.max_tv, "<=", 0.06);
    ctx.check(Stage::Stationary, "TV(kappa exp(0.5A), kappa)", null.invariance[0], "<=", 1e-6);
    ctx.check(Stage::Stationary, "TV(kappa exp(2A), kappa)", null.invariance[1], "<=", 1e-6);
    let mut rows = Vec::with_capacity(ctx.ops.grid.len());
    let (dc, dn, de) = (closed.density(), null.measure.density(), ergodic.density());
    for i in 0..ctx.ops.grid.len() {
        rows.push(vec![
            ctx.ops.grid.node(i),
            closed.masses()[i],
            dc[i],
            null.measure.masses()[i],
            dn[i],
            ergodic.masses()[i],
            de[i],
        ]);
    }
    ctx.writer.csv(
        "kappa.csv",
        &[
            "x",
            "closed_form_mass",
            "closed_form_density",
            "null_vector_mass",
            "null_vector_density",
            "ergodic_mass",
            "ergodic_density",
        ],
        &rows,
    )?;
    ctx.writer.json("triangulation.json", &tri)?;
    let series_tv = match cfg.times.first() {
        Some(&t) => {
            let k = reflected_kernel(&ctx.ops.series(cfg, t)?)?;
            let moved = crate::linalg::vec_mat(closed.masses(), k.entries());
            Some(total_variation(&moved, closed.masses()))
        }
        None => None,
    };
    Ok(json!({ "triangulation": tri, "closed_form_series_invariance_tv": series_tv }))
}

/// Exit code for a run result: 0 pass, 1 failed checks or module error,
/// 2 configuration error.
pub fn exit_code(r: &Result<RunOutcome>) -> i32 {
    match r {
        Ok(o) if o.passed => 0,
        Ok(_) => 1,
        Err(Error::Config { .. }) => 2,
        Err(_) => 1,
    }
}

/// Machine-readable error document.
pub fn error_json(e: &Error) -> Value {
    match e {
        Error::Config { field, reason } => json!({ "error": "config", "field": field, "message": reason }),
        other => json!({ "error": error_class(other), "message": other.to_string() }),
    }
}

fn error_class(e: &Error) -> &'static str {
    match e {
        Error::InvalidAlpha(_) | Error::InvalidDimension(_) | Error::InvalidParameter { .. } => "invalid-parameter",
        Error::Singular | Error::Numerical(_) => "numerical",
        Error::OutsideRegion { .. } | Error::Geometry(_) => "geometry",
        Error::Kernel(_) | Error::HypothesisViolated { .. } => "reflection-kernel",
        Error::NonConvergent { .. } => "non-convergent",
        Error::Conservation { .. } => "conservation",
        Error::InsufficientData(_) => "insufficient-data",
        Error::Config { .. } => "config",
        Error::Assertion(_) => "assertion",
        Error::Io(_) | Error::Json(_) | Error::Csv(_) => "io",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips() {
        let c = ExperimentConfig::default();
        let back = ExperimentConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(c, back);
        assert_eq!(c.sha256(), back.sha256());
    }

    #[test]
    fn describe_lists_six_stages() {
        let lines = describe(&ExperimentConfig::default()).unwrap();
        let stages = lines.iter().filter(|l| l.trim_start().starts_with(char::is_numeric)).count();
        assert_eq!(stages, 6);
    }

    #[test]
    fn missing_seed_is_named() {
        let e = ExperimentConfig::from_json(r#"{"kind": "chain"}"#).unwrap_err();
        match e {
            Error::Config { field, .. } => assert_eq!(field, "seed"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn alpha_range_is_cited() {
        let e = ExperimentConfig::from_json(r#"{"seed": 3, "params": {"d": 1, "alpha": 2.0}}"#).unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("params.alpha") && msg.contains("(0, 2)"), "{msg}");
        assert_eq!(exit_code(&Err(e)), 2);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let e = ExperimentConfig::from_json(r#"{"seed": 3, "n_cell": 40}"#).unwrap_err();
        match e {
            Error::Config { field, .. } => assert_eq!(field, "n_cell"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn kind_parsing() {
        assert_eq!(ExperimentKind::parse("semigroup-check").unwrap(), ExperimentKind::SemigroupCheck);
        assert!(ExperimentKind::parse("everything").is_err());
        assert_eq!(ExperimentKind::Stationary.to_string(), "stationary");
    }
}
