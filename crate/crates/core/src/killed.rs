//! Grid numerics for the process killed on leaving a one-dimensional domain:
//! the Dirichlet generator, heat kernel, Green and harmonic kernels and
//! λ-resolvents.
//!
//! All operators act on grid functions: `(Kf)_i = Σ_j K_ij f_j` with `f_j`
//! the value at node `j`, so an entry `K_ij` approximates the kernel mass of
//! cell `j` seen from node `i`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{exterior_integral, killing_intensity, Grid, Region};
use crate::linalg::{clip_negative, expm, row_sums};
use crate::point::Point;
use crate::special::{zeta, GaussRule};
use crate::stable::StableParams;

/// Negative entries of computed transition kernels above this threshold are
/// rounding noise and are clipped to zero.
pub const CLIP_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OperatorKind {
    DirichletGenerator,
    Perturbation,
    FullGenerator,
    /// `exp(tL)` for the killed process.
    HeatKernel { t: f64 },
    /// Transition kernel of the reflected process at time `t`.
    Reflected { t: f64 },
    Green,
    Chain,
}

impl fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OperatorKind::DirichletGenerator => write!(f, "dirichlet-generator"),
            OperatorKind::Perturbation => write!(f, "perturbation"),
            OperatorKind::FullGenerator => write!(f, "full-generator"),
            OperatorKind::HeatKernel { t } => write!(f, "heat-kernel(t={t})"),
            OperatorKind::Reflected { t } => write!(f, "reflected-kernel(t={t})"),
            OperatorKind::Green => write!(f, "green"),
            OperatorKind::Chain => write!(f, "chain-kernel"),
        }
    }
}

/// A dense operator over the cells of a grid.
#[derive(Clone, Debug)]
pub struct GridOperator {
    grid: Arc<Grid>,
    params: StableParams,
    entries: DMatrix<f64>,
    kind: OperatorKind,
}

impl GridOperator {
    pub fn new(grid: Arc<Grid>, params: StableParams, entries: DMatrix<f64>, kind: OperatorKind) -> Result<Self> {
        let n = grid.len();
        if entries.nrows() != n || entries.ncols() != n {
            return Err(Error::param(
                "entries",
                format!("shape {}x{} does not match {n} grid cells", entries.nrows(), entries.ncols()),
            ));
        }
        Ok(GridOperator {
            grid,
            params,
            entries,
            kind,
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn params(&self) -> &StableParams {
        &self.params
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_entries(self) -> DMatrix<f64> {
        self.entries
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.entries.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.nrows() == 0
    }

    pub fn row_sums(&self) -> Vec<f64> {
        row_sums(&self.entries)
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        crate::linalg::mat_vec(&self.entries, f)
    }

    fn expect_kind(&self, what: &str, ok: bool) -> Result<()> {
        if ok {
            Ok(())
        } else {
            Err(Error::param("operator", format!("expected {what}, got {}", self.kind)))
        }
    }

    pub(crate) fn same_grid(&self, other: &GridOperator) -> Result<()> {
        if Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid {
            Ok(())
        } else {
            Err(Error::param("operator", "operators live on different grids"))
        }
    }
}

/// A bounded function on `Dᶜ`.
#[derive(Clone)]
pub enum ExteriorFn {
    Constant(f64),
    Indicator(Region),
    /// `Σ_k w_k 𝟙_{R_k}`.
    Steps(Vec<(Region, f64)>),
    Func(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for ExteriorFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExteriorFn::Constant(c) => write!(f, "Constant({c})"),
            ExteriorFn::Indicator(r) => write!(f, "Indicator({r:?})"),
            ExteriorFn::Steps(s) => write!(f, "Steps({s:?})"),
            ExteriorFn::Func(_) => write!(f, "Func(..)"),
        }
    }
}

impl ExteriorFn {
    /// `∫_{Dᶜ} ν(x, z) g(z) dz`.
    pub fn nu_integral(&self, params: &StableParams, grid: &Grid, x: f64) -> Result<f64> {
        let domain = grid.domain();
        match self {
            ExteriorFn::Constant(c) => Ok(c * killing_intensity(params, domain, x)?),
            ExteriorFn::Indicator(r) => Ok(r.nu_mass(params, x)),
            ExteriorFn::Steps(parts) => Ok(parts.iter().map(|(r, w)| w * r.nu_mass(params, x)).sum()),
            ExteriorFn::Func(g) => exterior_integral(params, domain, x, |z| g(z)),
        }
    }

    fn check(&self, grid: &Grid) -> Result<()> {
        let regions: Vec<&Region> = match self {
            ExteriorFn::Indicator(r) => vec![r],
            ExteriorFn::Steps(p) => p.iter().map(|(r, _)| r).collect(),
            _ => vec![],
        };
        for r in regions {
            if !matches!(r, Region::Intervals(_)) || !r.is_exterior_to(grid.domain()) {
                return Err(Error::param(
                    "g",
                    format!("indicator region {r:?} must be a union of intervals in the complement of D"),
                ));
            }
        }
        Ok(())
    }

    /// Right-hand side `b_i = ∫_{Dᶜ} ν(x_i, z) g(z) dz` at every node.
    pub fn rhs(&self, params: &StableParams, grid: &Grid) -> Result<Vec<f64>> {
        self.check(grid)?;
        grid.nodes().iter().map(|&x| self.nu_integral(params, grid, x)).collect()
    }
}

/// `κ_D` at every node.
pub fn killing_vector(params: &StableParams, grid: &Grid) -> Result<Vec<f64>> {
    grid.nodes()
        .iter()
        .map(|&x| killing_intensity(params, grid.domain(), x))
        .collect()
}

/// Treatment of jumps shorter than half a cell, which the off-cell masses
/// miss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SmallJumps {
    /// Drop them; consistency order `h^{2−α}`.
    Dropped,
    /// Replace them by the nearest-neighbour diffusion carrying the missing
    /// second moment, when that moment is positive (`α > 1`).
    #[default]
    Diffusion,
}

/// Diffusion coefficient (per squared cell width) that restores the second
/// moment lost by the self-cell truncation on a uniform grid of width `h`:
/// `−2c h^{−α} (2^{α−1} − 1) ζ(α−1) / α`, clamped at zero. It vanishes at
/// `α = 1` and would be negative below.
pub fn small_jump_coefficient(params: &StableParams, h: f64) -> f64 {
    let a = params.alpha();
    if a <= 1.0 {
        return 0.0;
    }
    let v = -2.0 * params.c_levy() * h.powf(-a) * (2f64.powf(a - 1.0) - 1.0) * zeta(a - 1.0) / a;
    v.max(0.0)
}

/// Discrete fractional Laplacian with exterior Dirichlet condition.
///
/// `L_ij = ν(x_i, cell_j)` off the diagonal (exact antiderivative), the self
/// cell is dropped and `L_ii = −Σ_{j≠i} L_ij − κ_D(x_i)`. With
/// [`SmallJumps::Diffusion`] a zero-row-sum nearest-neighbour term is added
/// within each component. `L` stays symmetric with nonnegative off-diagonal
/// entries either way.
pub fn assemble_dirichlet_generator(grid: &Arc<Grid>, params: &StableParams) -> Result<GridOperator> {
    assemble_dirichlet_generator_with(grid, params, SmallJumps::default())
}

pub fn assemble_dirichlet_generator_with(
    grid: &Arc<Grid>,
    params: &StableParams,
    small_jumps: SmallJumps,
) -> Result<GridOperator> {
    if params.d() != 1 {
        return Err(Error::InvalidDimension(params.d()));
    }
    let n = grid.len();
    let kappa = killing_vector(params, grid)?;
    let mut l = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let x = grid.node(i);
        let mut off = 0.0;
        for (j, &(lo, hi)) in grid.cells().iter().enumerate() {
            if j == i {
                continue;
            }
            let v = params.levy_mass_1d(x, lo, hi);
            l[(i, j)] = v;
            off += v;
        }
        l[(i, i)] = -off - kappa[i];
    }
    if small_jumps == SmallJumps::Diffusion {
        let d = small_jump_coefficient(params, grid.h());
        if d > 0.0 {
            for r in grid.component_ranges() {
                for i in r.start..r.end - 1 {
                    l[(i, i + 1)] += d;
                    l[(i + 1, i)] += d;
                    l[(i, i)] -= d;
                    l[(i + 1, i + 1)] -= d;
                }
            }
        }
    }
    GridOperator::new(grid.clone(), *params, l, OperatorKind::DirichletGenerator)
}

/// Transition matrix `exp(t·G)` of a generator, clipped at [`CLIP_TOL`].
pub(crate) fn exp_generator(gen: &GridOperator, t: f64, kind: OperatorKind) -> Result<GridOperator> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::param("t", format!("must be positive, got {t}")));
    }
    let mut p = expm(&(gen.entries() * t))?;
    clip_negative(&mut p, CLIP_TOL)?;
    GridOperator::new(gen.grid.clone(), gen.params, p, kind)
}

/// `P_D(t) = exp(tL)`, the heat kernel of the killed process.
pub fn heat_kernel(l: &GridOperator, t: f64) -> Result<GridOperator> {
    l.expect_kind("a Dirichlet generator", l.kind == OperatorKind::DirichletGenerator)?;
    exp_generator(l, t, OperatorKind::HeatKernel { t })
}

/// `G = (−L)^{-1}`; `G_ij` approximates `∫_{cell_j} g_D(x_i, y) dy`.
pub fn green_operator(l: &GridOperator) -> Result<GridOperator> {
    l.expect_kind("a Dirichlet generator", l.kind == OperatorKind::DirichletGenerator)?;
    let n = l.len();
    let neg = -l.entries();
    let g = neg
        .lu()
        .solve(&DMatrix::<f64>::identity(n, n))
        .ok_or_else(|| Error::Numerical("Dirichlet generator is singular".into()))?;
    GridOperator::new(l.grid.clone(), l.params, g, OperatorKind::Green)
}

/// Exit-position law `h_D(x_i, B) = Σ_v G(i, v) ν(x_v, B)`.
#[derive(Clone, Debug)]
pub struct HarmonicKernel {
    green: GridOperator,
}

impl HarmonicKernel {
    pub fn new(green: GridOperator) -> Result<Self> {
        green.expect_kind("a Green operator", green.kind == OperatorKind::Green)?;
        Ok(HarmonicKernel { green })
    }

    pub fn green(&self) -> &GridOperator {
        &self.green
    }

    /// `h_D(x_i, B)` for every node `i`.
    pub fn masses(&self, region: &Region) -> Result<Vec<f64>> {
        let grid = self.green.grid();
        if !matches!(region, Region::Intervals(_)) || !region.is_exterior_to(grid.domain()) {
            return Err(Error::OutsideRegion {
                point: format!("{region:?}"),
                what: "complement of D",
            });
        }
        let p = &self.green.params;
        let kappa = killing_vector(p, grid)?;
        let frac = landing_fractions(p, grid, region)?;
        let nu: Vec<f64> = kappa.iter().zip(&frac).map(|(k, f)| k * f).collect();
        Ok(self.green.apply(&nu))
    }

    pub fn mass(&self, i: usize, region: &Region) -> Result<f64> {
        Ok(self.masses(region)?[i])
    }

    /// `h_D(x_i, Dᶜ)` for every node.
    pub fn total_masses(&self) -> Result<Vec<f64>> {
        let kappa = killing_vector(&self.green.params, self.green.grid())?;
        Ok(self.green.apply(&kappa))
    }
}

/// For each cell, the fraction of the jumps out of `D` that land in `region`,
/// averaged over the cell with the boundary profile `δ(y)^{α/2}` of the Green
/// function. At a node next to the boundary the landing law is far more
/// concentrated than the cell average, so the node value misplaces exit mass
/// near `∂D`.
fn landing_fractions(params: &StableParams, grid: &Grid, region: &Region) -> Result<Vec<f64>> {
    let domain = grid.domain();
    let ext = Region::Intervals(
        domain
            .exterior_components()
            .ok_or_else(|| Error::Geometry("exit laws are computed for 1-D domains".into()))?,
    );
    let half_alpha = 0.5 * params.alpha();
    let rule = GaussRule::new(8);
    let on_boundary = |y: f64| domain.boundary_distance(&Point::scalar(y)) <= 1e-12 * grid.h();
    Ok(grid
        .cells()
        .iter()
        .map(|&(a, b)| {
            let (mut num, mut den) = (0.0, 0.0);
            graded_nodes(&rule, a, b, on_boundary(a), on_boundary(b), |y, wt| {
                let w = wt * domain.boundary_distance(&Point::scalar(y)).powf(half_alpha);
                num += w * region.nu_mass(params, y);
                den += w * ext.nu_mass(params, y);
            });
            if den > 0.0 {
                num / den
            } else {
                0.0
            }
        })
        .collect())
}

/// Visits the Gauss nodes of `[a, b]`, with panels halving toward each end
/// flagged singular.
fn graded_nodes(rule: &GaussRule, a: f64, b: f64, sing_a: bool, sing_b: bool, mut visit: impl FnMut(f64, f64)) {
    let mid = 0.5 * (a + b);
    for (end, other, sing) in [(a, mid, sing_a), (b, mid, sing_b)] {
        if !sing {
            for (y, w) in rule.mapped(end.min(other), end.max(other)) {
                visit(y, w);
            }
            continue;
        }
        let len = (other - end).abs();
        let dir = (other - end).signum();
        let mut inner = 0.0;
        let mut outer = len * 1e-12;
        while inner < len {
            let (p, q) = (end + dir * inner, end + dir * outer);
            for (y, w) in rule.mapped(p.min(q), p.max(q)) {
                visit(y, w);
            }
            inner = outer;
            outer = (outer * 2.0).min(len);
        }
    }
}

/// Solves `(λ − L) u = b` with `b_i = ∫_{Dᶜ} ν(x_i, z) g(z) dz`; the solution
/// approximates `u^λ_g(x) = E^x e^{−λτ_D} g(Y_{τ_D})`.
pub fn resolvent_u(l: &GridOperator, lambda: f64, g: &ExteriorFn) -> Result<Vec<f64>> {
    l.expect_kind("a Dirichlet generator", l.kind == OperatorKind::DirichletGenerator)?;
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::param("lambda", format!("must be positive, got {lambda}")));
    }
    let b = g.rhs(&l.params, l.grid())?;
    solve_shifted(l.entries(), lambda, &b)
}

/// Solves `(λ − A) x = b`.
pub(crate) fn solve_shifted(a: &DMatrix<f64>, lambda: f64, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.nrows();
    let m = DMatrix::<f64>::identity(n, n) * lambda - a;
    let x = m
        .lu()
        .solve(&DVector::from_column_slice(b))
        .ok_or_else(|| Error::Numerical("shifted generator is singular".into()))?;
    Ok(x.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Domain;
    use crate::linalg::max_abs_diff;
    use std::f64::consts::PI;

    fn setup(alpha: f64, n: usize) -> GridOperator {
        let d = Domain::interval(-1.0, 1.0).unwrap();
        let g = Grid::build(&d, n).unwrap();
        let p = StableParams::new(1, alpha).unwrap();
        assemble_dirichlet_generator(&g, &p).unwrap()
    }

    #[test]
    fn generator_rows_balance_killing() {
        let l = setup(1.0, 50);
        let kappa = killing_vector(l.params(), l.grid()).unwrap();
        for (s, k) in l.row_sums().iter().zip(&kappa) {
            assert!((s + k).abs() < 1e-10);
        }
        for i in 0..50 {
            for j in 0..50 {
                if i != j {
                    assert!(l.entries()[(i, j)] >= 0.0);
                    assert!((l.entries()[(i, j)] - l.entries()[(j, i)]).abs() < 1e-12);
                }
            }
        }
        let k0 = killing_intensity(l.params(), l.grid().domain(), 0.0).unwrap();
        assert!((k0 - 2.0 / PI).abs() < 1e-14);
    }

    #[test]
    fn heat_kernel_semigroup_and_mass_loss() {
        let l = setup(1.5, 40);
        let p1 = heat_kernel(&l, 0.1).unwrap();
        let p2 = heat_kernel(&l, 0.2).unwrap();
        let p3 = heat_kernel(&l, 0.3).unwrap();
        let prod = p1.entries() * p2.entries();
        assert!(max_abs_diff(&prod, p3.entries()) < 1e-8);
        for (a, b) in p1.row_sums().iter().zip(p3.row_sums()) {
            assert!(*a < 1.0 && b < *a);
        }
        assert!(max_abs_diff(p2.entries(), &p2.entries().transpose()) < 1e-8);
        assert!(heat_kernel(&l, 0.0).is_err());
        assert!(heat_kernel(&p1, 0.1).is_err());
    }

    #[test]
    fn harmonic_mass_is_one() {
        let l = setup(0.5, 60);
        let h = HarmonicKernel::new(green_operator(&l).unwrap()).unwrap();
        for m in h.total_masses().unwrap() {
            assert!((m - 1.0).abs() < 1e-10);
        }
        let right = h.masses(&Region::interval(1.0, f64::INFINITY)).unwrap();
        assert!((right[29] + right[30] - 1.0).abs() < 1e-10);
        assert!(h.masses(&Region::interval(0.5, 2.0)).is_err());
    }

    #[test]
    fn resolvent_bounds() {
        let l = setup(1.0, 60);
        let u = resolvent_u(&l, 1.0, &ExteriorFn::Constant(1.0)).unwrap();
        assert!(u.iter().all(|v| *v > 0.0 && *v < 1.0));
        let u0 = resolvent_u(&l, 1e-9, &ExteriorFn::Constant(1.0)).unwrap();
        assert!(u0.iter().all(|v| (v - 1.0).abs() < 1e-6));
        assert!(resolvent_u(&l, 0.0, &ExteriorFn::Constant(1.0)).is_err());
        let bad = ExteriorFn::Indicator(Region::interval(0.0, 2.0));
        assert!(resolvent_u(&l, 1.0, &bad).is_err());
    }

    #[test]
    fn small_jump_coefficient_restores_second_moment() {
        let h = 0.01;
        for a in [1.2, 1.5, 1.8] {
            let p = StableParams::new(1, a).unwrap();
            let c = p.c_levy();
            // Truncated second moments on |y| < (K + 1/2) h.
            let k_max = 200_000usize;
            let r = (k_max as f64 + 0.5) * h;
            let discrete: f64 = (1..=k_max)
                .map(|k| {
                    let kf = k as f64;
                    2.0 * (kf * h).powi(2) * p.levy_mass_1d(0.0, (kf - 0.5) * h, (kf + 0.5) * h)
                })
                .sum();
            let continuum = 2.0 * c * r.powf(2.0 - a) / (2.0 - a);
            let expect = 0.5 * (continuum - discrete) / (h * h);
            let got = small_jump_coefficient(&p, h);
            assert!((got - expect).abs() < 1e-4 * got, "alpha {a}: {got} vs {expect}");
        }
        for a in [0.5, 1.0] {
            assert_eq!(small_jump_coefficient(&StableParams::new(1, a).unwrap(), h), 0.0);
        }
    }

    #[test]
    fn diffusion_stencil_keeps_structure() {
        let d = Domain::cells(vec![(-1.0, -0.2), (0.2, 1.0)]).unwrap();
        let g = Grid::build(&d, 40).unwrap();
        let p = StableParams::new(1, 1.5).unwrap();
        let plain = assemble_dirichlet_generator_with(&g, &p, SmallJumps::Dropped).unwrap();
        let diff = assemble_dirichlet_generator(&g, &p).unwrap();
        let kappa = killing_vector(&p, &g).unwrap();
        for (s, k) in diff.row_sums().iter().zip(&kappa) {
            assert!((s + k).abs() < 1e-9 * k.max(1.0));
        }
        let delta = diff.entries() - plain.entries();
        assert!(max_abs_diff(&delta, &delta.transpose()) < 1e-9);
        // No coupling across the gap between components.
        assert_eq!(delta[(19, 20)], 0.0);
        assert!(delta[(18, 19)] > 0.0);
    }
}
