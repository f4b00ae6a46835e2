//! Monte Carlo realization of the reflected process.
//!
//! Paths are jump-Euler: positions live on the time lattice `k·dt` and an
//! excursion ends at the first lattice step that lands outside `D`. Step
//! counters are integers, so reflection times are exact multiples of `dt`.
//! Excursion `e` of replica `r` draws all of its randomness, including the
//! re-entry draw at its end, from `stream(seed, r, e)`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{Domain, Grid};
use crate::point::Point;
use crate::reflection::{EntryLaw, ReflectionKernel};
use crate::rng::{stream, StreamRng};
use crate::stable::{exit_from_center, StableParams, MAX_SPHERE_STEPS};
use crate::stats::{ks_two_sample, mean, std_error, KsTest};

/// Stream index used for drawing initial positions.
const START_STREAM: u64 = u64::MAX;

/// Exact exit position from `D` by iterated exits from maximal balls.
/// Returns the exit point and the number of balls used.
pub fn walk_on_spheres_exit(
    params: &StableParams,
    domain: &Domain,
    start: &Point,
    rng: &mut StreamRng,
) -> Result<(Point, usize)> {
    if !domain.contains(start) {
        return Err(Error::OutsideRegion {
            point: start.to_string(),
            what: "D",
        });
    }
    let mut x = *start;
    for k in 1..=MAX_SPHERE_STEPS {
        let rho = domain.boundary_distance(&x);
        let y = exit_from_center(params, &x, rho, rng);
        if !domain.contains(&y) {
            return Ok((y, k));
        }
        x = y;
    }
    Err(Error::Numerical(format!(
        "walk on spheres did not leave D after {MAX_SPHERE_STEPS} balls"
    )))
}

/// Options of a single killed excursion.
#[derive(Clone, Debug)]
pub struct ExcursionOptions {
    pub dt: f64,
    /// Sample only the exit position, exactly, by walk on spheres.
    pub exact: bool,
    pub record_path: bool,
}

/// A killed excursion. In exact mode there is no time information.
#[derive(Clone, Debug, Serialize)]
pub struct Excursion {
    pub start: Point,
    /// Number of lattice steps up to and including the exit step.
    pub steps: Option<u64>,
    pub exit_time: Option<f64>,
    /// Last lattice position in `D`, standing in for `Y_{τ_D−}`.
    pub pre_exit: Option<Point>,
    pub exit: Point,
    /// Positions at steps `0, 1, …` before the exit, when recorded.
    pub path: Vec<Point>,
}

fn check_dt(dt: f64) -> Result<()> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::param("dt", format!("must be positive, got {dt}")));
    }
    Ok(())
}

/// Steps from `start` until the first lattice point outside `D`. `visit` is
/// called with the local step index and the current position before each
/// step, and may stop the walk by returning `false`.
fn walk<F>(params: &StableParams, domain: &Domain, start: Point, scale: f64, rng: &mut StreamRng, mut visit: F) -> WalkEnd
where
    F: FnMut(u64, &Point) -> bool,
{
    let mut x = start;
    let mut k = 0u64;
    loop {
        if !visit(k, &x) {
            return WalkEnd::Stopped;
        }
        let y = x + params.sample_unit(rng) * scale;
        k += 1;
        if !domain.contains(&y) {
            return WalkEnd::Exited { steps: k, pre: x, exit: y };
        }
        x = y;
    }
}

enum WalkEnd {
    Stopped,
    Exited { steps: u64, pre: Point, exit: Point },
}

/// One excursion of the process killed on leaving `D`.
pub fn simulate_killed_excursion(
    params: &StableParams,
    domain: &Domain,
    start: &Point,
    opts: &ExcursionOptions,
    rng: &mut StreamRng,
) -> Result<Excursion> {
    if !domain.contains(start) {
        return Err(Error::OutsideRegion {
            point: start.to_string(),
            what: "D",
        });
    }
    if opts.exact {
        let (exit, _) = walk_on_spheres_exit(params, domain, start, rng)?;
        return Ok(Excursion {
            start: *start,
            steps: None,
            exit_time: None,
            pre_exit: None,
            exit,
            path: Vec::new(),
        });
    }
    check_dt(opts.dt)?;
    let scale = params.step_scale(opts.dt);
    let mut path = Vec::new();
    let end = walk(params, domain, *start, scale, rng, |_, x| {
        if opts.record_path {
            path.push(*x);
        }
        true
    });
    match end {
        WalkEnd::Exited { steps, pre, exit } => Ok(Excursion {
            start: *start,
            steps: Some(steps),
            exit_time: Some(steps as f64 * opts.dt),
            pre_exit: Some(pre),
            exit,
            path,
        }),
        WalkEnd::Stopped => unreachable!("walk without a horizon"),
    }
}

/// `replicas` independent killed excursions from `start`, replica `r` using
/// stream `(seed, r, 0)`.
pub fn killed_batch(
    params: &StableParams,
    domain: &Domain,
    start: &Point,
    opts: &ExcursionOptions,
    replicas: usize,
    seed: u64,
) -> Result<Vec<Excursion>> {
    (0..replicas as u64)
        .into_par_iter()
        .map(|r| simulate_killed_excursion(params, domain, start, opts, &mut stream(seed, r, 0)))
        .collect()
}

/// Time-average cell occupation after `burn_in`.
#[derive(Clone, Debug)]
pub struct OccupationSpec {
    pub grid: Arc<Grid>,
    pub burn_in: f64,
}

#[derive(Clone, Debug)]
pub struct LadderOptions {
    pub dt: f64,
    pub horizon: f64,
    /// Times at which `(N_t, X_t)` is recorded; rounded to the lattice.
    pub checkpoints: Vec<f64>,
    pub occupation: Option<OccupationSpec>,
    /// Per-excursion time spent in this interval is recorded.
    pub window: Option<(f64, f64)>,
    pub record_paths: bool,
}

impl LadderOptions {
    pub fn new(dt: f64, horizon: f64) -> Self {
        LadderOptions {
            dt,
            horizon,
            checkpoints: Vec::new(),
            occupation: None,
            window: None,
            record_paths: false,
        }
    }
}

/// One excursion of a ladder path.
#[derive(Clone, Debug, Serialize)]
pub struct Segment {
    pub start: Point,
    pub start_step: u64,
    /// Lattice steps to the exit, or `None` if the horizon came first.
    pub steps: Option<u64>,
    pub pre_exit: Option<Point>,
    pub exit: Option<Point>,
    /// Entry point drawn from `μ(exit, ·)`.
    pub entry: Option<Point>,
    pub window_time: f64,
    pub path: Vec<Point>,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct Checkpoint {
    pub t: f64,
    pub n: u64,
    pub x: Point,
}

/// A simulated ladder path `(N_t, X_t)` on `[0, T]`.
#[derive(Clone, Debug, Serialize)]
pub struct LadderPath {
    pub dt: f64,
    pub horizon: f64,
    pub segments: Vec<Segment>,
    pub checkpoints: Vec<Checkpoint>,
    /// Time spent in each grid cell after the burn-in.
    pub occupation: Option<Vec<f64>>,
}

impl LadderPath {
    /// Reflection times `τ_1 < τ_2 < …` up to the horizon.
    pub fn tau(&self) -> Vec<f64> {
        self.segments
            .iter()
            .filter_map(|s| s.steps.map(|k| (s.start_step + k) as f64 * self.dt))
            .collect()
    }

    /// Post-reflection positions `R_n = X_{τ_n}`.
    pub fn reflections(&self) -> Vec<Point> {
        self.segments.iter().filter_map(|s| s.entry).collect()
    }

    /// `N_t`, the number of reflections in `[0, t]`.
    pub fn n_at(&self, t: f64) -> u64 {
        let k = (t / self.dt).round() as u64;
        self.segments
            .iter()
            .filter(|s| s.steps.is_some_and(|n| s.start_step + n <= k))
            .count() as u64
    }

    /// Durations `τ_n − τ_{n−1}` of the completed excursions, `τ_0 = 0`.
    pub fn durations(&self) -> Vec<f64> {
        self.segments
            .iter()
            .filter_map(|s| s.steps.map(|k| k as f64 * self.dt))
            .collect()
    }

    /// Checks the path invariants: interior positions and entries in `D`,
    /// exit points in `Dᶜ`, strictly increasing reflection times below the
    /// horizon and a nondecreasing count.
    pub fn validate(&self, domain: &Domain) -> Result<()> {
        let bad = |what: &str| Err(Error::Assertion(format!("ladder path invariant violated: {what}")));
        let mut prev_tau = 0u64;
        for (i, s) in self.segments.iter().enumerate() {
            if !domain.contains(&s.start) || s.path.iter().any(|p| !domain.contains(p)) {
                return bad("interior position outside D");
            }
            if s.pre_exit.is_some_and(|p| !domain.contains(&p)) {
                return bad("pre-exit position outside D");
            }
            if s.exit.is_some_and(|p| domain.contains(&p)) {
                return bad("exit point inside D");
            }
            if s.entry.is_some_and(|p| !domain.contains(&p)) {
                return bad("reflected entry outside D");
            }
            if i > 0 && s.start_step != prev_tau {
                return bad("segment does not start at the previous reflection");
            }
            if let Some(k) = s.steps {
                if k == 0 {
                    return bad("reflection times not strictly increasing");
                }
                prev_tau = s.start_step + k;
                if prev_tau as f64 * self.dt > self.horizon * (1.0 + 1e-12) {
                    return bad("reflection after the horizon");
                }
            } else if i + 1 != self.segments.len() {
                return bad("unfinished segment before the last one");
            }
        }
        if self.checkpoints.windows(2).any(|w| w[1].n < w[0].n) {
            return bad("N_t decreases");
        }
        Ok(())
    }
}

/// Simulates the ladder process from `start` up to the horizon.
pub fn simulate_ladder(
    params: &StableParams,
    domain: &Domain,
    mu: &ReflectionKernel,
    start: &Point,
    opts: &LadderOptions,
    seed: u64,
    replica: u64,
) -> Result<LadderPath> {
    check_dt(opts.dt)?;
    if !(opts.horizon > 0.0) || !opts.horizon.is_finite() {
        return Err(Error::param("horizon", format!("must be positive, got {}", opts.horizon)));
    }
    if mu.domain() != domain {
        return Err(Error::param("mu", "reflection kernel and simulation use different domains"));
    }
    if !domain.contains(start) {
        return Err(Error::OutsideRegion {
            point: start.to_string(),
            what: "D",
        });
    }
    let dt = opts.dt;
    let scale = params.step_scale(dt);
    let horizon_steps = (opts.horizon / dt).round() as u64;
    let mut cps: Vec<(u64, f64)> = opts.checkpoints.iter().map(|&t| ((t / dt).round() as u64, t)).collect();
    cps.sort_by_key(|c| c.0);
    let mut cp_next = 0;
    let mut checkpoints = Vec::with_capacity(cps.len());
    let burn_steps = opts.occupation.as_ref().map(|o| (o.burn_in / dt).ceil() as u64);
    let mut occupation = opts.occupation.as_ref().map(|o| vec![0.0; o.grid.len()]);

    let mut segments = Vec::new();
    let mut n_count = 0u64;
    let mut x0 = *start;
    let mut k0 = 0u64;
    for e in 0u64.. {
        let mut rng = stream(seed, replica, e);
        let mut window_time = 0.0;
        let mut path = Vec::new();
        let end = walk(params, domain, x0, scale, &mut rng, |k, x| {
            let kg = k0 + k;
            while cp_next < cps.len() && cps[cp_next].0 <= kg {
                checkpoints.push(Checkpoint {
                    t: cps[cp_next].1,
                    n: n_count,
                    x: *x,
                });
                cp_next += 1;
            }
            if kg >= horizon_steps {
                return false;
            }
            if opts.record_paths {
                path.push(*x);
            }
            if let Some((lo, hi)) = opts.window {
                let v = x.x();
                if v >= lo && v <= hi {
                    window_time += dt;
                }
            }
            if let (Some(occ), Some(spec), Some(b)) = (occupation.as_mut(), opts.occupation.as_ref(), burn_steps) {
                if kg >= b {
                    if let Some(j) = spec.grid.locate(x.x()) {
                        occ[j] += dt;
                    }
                }
            }
            true
        });
        match end {
            WalkEnd::Stopped => {
                segments.push(Segment {
                    start: x0,
                    start_step: k0,
                    steps: None,
                    pre_exit: None,
                    exit: None,
                    entry: None,
                    window_time,
                    path,
                });
                break;
            }
            WalkEnd::Exited { steps, pre, exit } => {
                let entry = mu.sample(&exit, &mut rng)?;
                segments.push(Segment {
                    start: x0,
                    start_step: k0,
                    steps: Some(steps),
                    pre_exit: Some(pre),
                    exit: Some(exit),
                    entry: Some(entry),
                    window_time,
                    path,
                });
                n_count += 1;
                k0 += steps;
                x0 = entry;
            }
        }
    }
    Ok(LadderPath {
        dt,
        horizon: opts.horizon,
        segments,
        checkpoints,
        occupation,
    })
}

/// Initial position of each replica.
#[derive(Clone, Debug)]
pub enum StartLaw {
    Point(Point),
    Law(EntryLaw),
}

impl StartLaw {
    pub fn draw(&self, seed: u64, replica: u64) -> Point {
        match self {
            StartLaw::Point(p) => *p,
            StartLaw::Law(m) => m.sample(&mut stream(seed, replica, START_STREAM)),
        }
    }
}

/// `replicas` independent ladder paths. The output order and content do
/// not depend on the thread count.
pub fn simulate_ladder_batch(
    params: &StableParams,
    domain: &Domain,
    mu: &ReflectionKernel,
    start: &StartLaw,
    opts: &LadderOptions,
    replicas: usize,
    seed: u64,
) -> Result<Vec<LadderPath>> {
    (0..replicas as u64)
        .into_par_iter()
        .map(|r| simulate_ladder(params, domain, mu, &start.draw(seed, r), opts, seed, r))
        .collect()
}

/// `R_1, …, R_n` of the reflection chain, with exact exits and no time
/// discretization. Step `k` uses stream `(seed, replica, k)`.
pub fn reflection_chain(
    params: &StableParams,
    domain: &Domain,
    mu: &ReflectionKernel,
    start: &Point,
    n_steps: usize,
    seed: u64,
    replica: u64,
) -> Result<Vec<Point>> {
    if mu.domain() != domain {
        return Err(Error::param("mu", "reflection kernel and chain use different domains"));
    }
    let mut out = Vec::with_capacity(n_steps);
    let mut x = *start;
    for k in 0..n_steps as u64 {
        let mut rng = stream(seed, replica, k);
        let (z, _) = walk_on_spheres_exit(params, domain, &x, &mut rng)?;
        x = mu.sample(&z, &mut rng)?;
        out.push(x);
    }
    Ok(out)
}

/// Excursion statistics under a constant reflection kernel.
#[derive(Clone, Debug, Serialize)]
pub struct ExcursionStats {
    pub excursions: usize,
    pub mean_duration: f64,
    pub lag1_autocorrelation: f64,
    pub lag1_pairs: usize,
    /// Two-sample KS between durations of the first and fifth excursions.
    pub ks_first_fifth: KsTest,
    /// Mean and standard error of the per-excursion window time.
    pub window_time_mean: f64,
    pub window_time_se: f64,
}

const MIN_EXCURSIONS: usize = 100;

pub fn excursion_statistics(paths: &[LadderPath]) -> Result<ExcursionStats> {
    let per_path: Vec<Vec<f64>> = paths.iter().map(|p| p.durations()).collect();
    let all: Vec<f64> = per_path.iter().flatten().copied().collect();
    if all.len() < MIN_EXCURSIONS {
        return Err(Error::InsufficientData(format!(
            "{} completed excursions, need at least {MIN_EXCURSIONS}",
            all.len()
        )));
    }
    let pairs: Vec<(f64, f64)> = per_path
        .iter()
        .flat_map(|d| d.windows(2).map(|w| (w[0], w[1])))
        .collect();
    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let (mx, my) = (mean(&xs), mean(&ys));
    let cov: f64 = pairs.iter().map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = xs.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = ys.iter().map(|b| (b - my) * (b - my)).sum();
    let lag1 = cov / (vx * vy).sqrt();
    let nth = |n: usize| -> Vec<f64> { per_path.iter().filter_map(|d| d.get(n).copied()).collect() };
    let ks = ks_two_sample(&nth(0), &nth(4))?;
    let windows: Vec<f64> = paths
        .iter()
        .flat_map(|p| p.segments.iter().filter(|s| s.steps.is_some()).map(|s| s.window_time))
        .collect();
    Ok(ExcursionStats {
        excursions: all.len(),
        mean_duration: mean(&all),
        lag1_autocorrelation: lag1,
        lag1_pairs: pairs.len(),
        ks_first_fifth: ks,
        window_time_mean: mean(&windows),
        window_time_se: std_error(&windows),
    })
}
