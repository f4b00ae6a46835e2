#![allow(dead_code)]

use std::sync::Arc;

use reflected_stable::geometry::Grid;
use reflected_stable::killed::{assemble_dirichlet_generator, green_operator, GridOperator};
use reflected_stable::perturbation::{full_generator, perturbation_matrix, DuhamelEngine};
use reflected_stable::point::Point;
use reflected_stable::reflection::{
    make_constant_kernel, make_dirac_kernel, make_projection_kernel, EntryLaw, ReflectionKernel,
};
use reflected_stable::special::{gamma, GaussRule};
use reflected_stable::{Domain, StableParams};

pub const ALPHAS: [f64; 3] = [0.5, 1.0, 1.5];

pub fn unit() -> Domain {
    Domain::interval(-1.0, 1.0).unwrap()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    Constant,
    Dirac,
    Projection,
}

pub const FAMILIES: [Family; 3] = [Family::Constant, Family::Dirac, Family::Projection];

// A cell center of the 400-cell grid, so the atom is represented exactly.
pub const DIRAC_X0: f64 = 0.0025;

impl Family {
    pub fn kernel(self, domain: &Domain) -> ReflectionKernel {
        match self {
            Family::Constant => make_constant_kernel(domain, EntryLaw::uniform(-0.5, 0.5)).unwrap(),
            Family::Dirac => make_dirac_kernel(domain, Point::scalar(DIRAC_X0)).unwrap(),
            Family::Projection => make_projection_kernel(domain, 0.3, 0.2).unwrap(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Constant => "constant",
            Family::Dirac => "dirac",
            Family::Projection => "projection",
        }
    }
}

/// Operators of one (α, μ) configuration on the unit interval.
pub struct Setup {
    pub alpha: f64,
    pub family: Family,
    pub params: StableParams,
    pub mu: ReflectionKernel,
    pub grid: Arc<Grid>,
    pub l: GridOperator,
    pub m: GridOperator,
    pub a: GridOperator,
    pub green: GridOperator,
    pub engine: DuhamelEngine,
}

impl Setup {
    pub fn new(alpha: f64, family: Family, n_cells: usize) -> Setup {
        let params = StableParams::new(1, alpha).unwrap();
        let domain = unit();
        let mu = family.kernel(&domain);
        let grid = Grid::build(&domain, n_cells).unwrap();
        let l = assemble_dirichlet_generator(&grid, &params).unwrap();
        let m = perturbation_matrix(&grid, &params, &mu).unwrap();
        let a = full_generator(&l, &m).unwrap();
        let green = green_operator(&l).unwrap();
        let engine = DuhamelEngine::new(&l, &m).unwrap();
        Setup {
            alpha,
            family,
            params,
            mu,
            grid,
            l,
            m,
            a,
            green,
            engine,
        }
    }

    pub fn label(&self) -> String {
        format!("alpha={} mu={}", self.alpha, self.family.name())
    }

    pub fn center_node(&self) -> usize {
        self.grid.len() / 2
    }
}

/// Closed-form Green function of `(−1, 1)` for the one-dimensional
/// α-stable process.
pub fn green_interval(alpha: f64, x: f64, y: f64) -> f64 {
    let r = (x - y).abs();
    let w = (1.0 - x * x) * (1.0 - y * y) / (r * r);
    let k = gamma(0.5) / (2f64.powf(alpha) * std::f64::consts::PI.sqrt() * gamma(0.5 * alpha).powi(2));
    // s = u^{2/α} removes the endpoint singularity of s^{α/2−1}.
    let upper = w.powf(0.5 * alpha);
    let f = |u: f64| (2.0 / alpha) / (1.0 + u.powf(2.0 / alpha)).sqrt();
    let rule = GaussRule::new(32);
    let mut integral = 0.0;
    let mut lo = 0.0;
    let mut hi = upper.min(1.0);
    loop {
        integral += rule.integrate(lo, hi, f);
        if hi >= upper {
            break;
        }
        lo = hi;
        hi = (hi * 4.0).min(upper);
    }
    k * r.powf(alpha - 1.0) * integral
}

/// `∫_a^b g(x, y) dy`, graded geometrically toward the singular points
/// `x` and `±1`.
pub fn green_interval_mass(alpha: f64, x: f64, a: f64, b: f64) -> f64 {
    let mut cuts = vec![a, b];
    if x > a && x < b {
        cuts.push(x);
    }
    cuts.sort_by(f64::total_cmp);
    let singular = |t: f64| t == x || t.abs() == 1.0;
    let rule = GaussRule::new(16);
    let g = |y: f64| if y == x { 0.0 } else { green_interval(alpha, x, y) };
    let mut total = 0.0;
    for w in cuts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if hi <= lo {
            continue;
        }
        let mid = 0.5 * (lo + hi);
        for (end, other) in [(lo, mid), (hi, mid)] {
            let len = (other - end).abs();
            let sign = (other - end).signum();
            if !singular(end) {
                total += rule.integrate(end.min(other), end.max(other), g);
                continue;
            }
            let mut inner = len * 1e-14;
            let mut outer = inner;
            while outer < len {
                outer = (outer * 2.0).min(len);
                let (p, q) = (end + sign * inner, end + sign * outer);
                total += rule.integrate(p.min(q), p.max(q), g);
                inner = outer;
            }
        }
    }
    total
}
