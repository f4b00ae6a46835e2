//! The perturbation series of the reflected kernel and the objects built on
//! it: the full generator `A = L_D + ν𝟙_{Dᶜ}μ`, the ladder kernel, the
//! supermedian functions `v^λ_g`, an excessive function that blows up at
//! the boundary, and its lift to the ladder space.
//!
//! # Series engine
//!
//! The terms obey `k_{n+1}(t) = ∫_0^t K_n(s) M P_D(t−s) ds`. In the Laplace
//! domain the convolution becomes a product, `K̂_n(z) = R(z) (M R(z))^n` with
//! `R(z) = (z − L)^{-1}`, and each `K_n(t)` is recovered by Talbot contour
//! inversion. `L` is symmetric, so `R(z)` is diagonal in its eigenbasis, and
//! `M` has low rank for the built-in kernels; with `L = QΛQᵀ` and `M = UWᵀ`
//!
//! ```text
//! K̂_n(z) = Q D Ũ Cⁿ⁻¹ W̃ᵀ D Qᵀ,   D = (z − Λ)^{-1},  Ũ = QᵀU,  W̃ = QᵀW,  C = W̃ᵀDŨ,
//! ```
//!
//! so every level costs a few `n × n × r` products per contour node. `K_0`
//! is the heat kernel itself.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{default_probes, Grid, Region};
use crate::killed::{exp_generator, heat_kernel, killing_vector, ExteriorFn, GridOperator, OperatorKind};
use crate::linalg::{row_sums, SymmetricSpectral};
use crate::point::Point;
use crate::reflection::{EntryLaw, ReflectionKernel};
use crate::stable::StableParams;

/// Tolerance on `|row sum of M − κ_D|`, relative to `max κ_D`.
pub const PERTURBATION_ROW_TOL: f64 = 1e-6;

/// Default number of Talbot contour nodes.
pub const DEFAULT_CONTOUR_NODES: usize = 64;

/// Tolerance for the truncated tail `cγ^{N+1}/(1−γ)`.
pub const DEFAULT_TAIL_TOL: f64 = 1e-6;

/// Conservation tolerance for the reflected kernel.
pub const CONSERVATION_TOL: f64 = 1e-4;

/// Negative entries of series terms above this size are contour rounding.
const TERM_CLIP_TOL: f64 = 1e-9;

// Weideman's optimized Talbot contour z(θ) = (N/t)(σ + μ θ cot(νθ) + i β θ).
const TALBOT_SIGMA: f64 = -0.6122;
const TALBOT_MU: f64 = 0.5017;
const TALBOT_NU: f64 = 0.6407;
const TALBOT_BETA: f64 = 0.2645;

// Exterior panels for kernels without closed-form classes.
const PANEL_RATIO: f64 = 1.5;
const PANEL_TAIL_MASS: f64 = 1e-12;

fn classes_to_matrix(grid: &Grid, params: &StableParams, classes: &[(Region, EntryLaw)]) -> Result<DMatrix<f64>> {
    let n = grid.len();
    let r = classes.len();
    let mut k = DMatrix::<f64>::zeros(n, r);
    let mut w = DMatrix::<f64>::zeros(r, n);
    for (c, (region, law)) in classes.iter().enumerate() {
        for (i, &x) in grid.nodes().iter().enumerate() {
            k[(i, c)] = region.nu_mass(params, x);
        }
        let masses = law.cell_masses(grid)?;
        for (j, m) in masses.into_iter().enumerate() {
            w[(c, j)] = m;
        }
    }
    Ok(k * w)
}

/// Graded panels covering `Dᶜ`, each paired with `μ` at the panel midpoint.
fn panel_classes(mu: &ReflectionKernel, grid: &Grid, params: &StableParams) -> Result<Vec<(Region, EntryLaw)>> {
    let ext = grid
        .domain()
        .exterior_components()
        .ok_or_else(|| Error::Kernel("panel quadrature is one-dimensional".into()))?;
    let a = params.alpha();
    let cutoff = (params.c_levy() / (a * PANEL_TAIL_MASS)).powf(1.0 / a);
    let first = grid.h() / 16.0;
    let mut out = Vec::new();
    let mut push = |lo: f64, hi: f64, at: f64| -> Result<()> {
        let law = mu.law(&Point::scalar(at))?;
        out.push((Region::interval(lo, hi), law));
        Ok(())
    };
    // Panels grow geometrically away from a boundary point `e` in direction
    // `dir`, up to length `len`.
    let mut graded = |e: f64, dir: f64, len: f64| -> Result<()> {
        let mut s0 = 0.0;
        let mut step = first;
        loop {
            let s1 = (s0 + step).min(len);
            if s1 >= cutoff && len.is_infinite() {
                let z0 = e + dir * s0;
                let (lo, hi) = if dir > 0.0 { (z0, f64::INFINITY) } else { (f64::NEG_INFINITY, z0) };
                push(lo, hi, z0)?;
                return Ok(());
            }
            let (z0, z1) = (e + dir * s0, e + dir * s1);
            push(z0.min(z1), z0.max(z1), 0.5 * (z0 + z1))?;
            if s1 >= len {
                return Ok(());
            }
            s0 = s1;
            step *= PANEL_RATIO;
        }
    };
    for (lo, hi) in ext {
        match (lo.is_finite(), hi.is_finite()) {
            (false, true) => graded(hi, -1.0, f64::INFINITY)?,
            (true, false) => graded(lo, 1.0, f64::INFINITY)?,
            _ => {
                let mid = 0.5 * (lo + hi);
                graded(lo, 1.0, mid - lo)?;
                graded(hi, -1.0, hi - mid)?;
            }
        }
    }
    Ok(out)
}

/// `M_ij = ∫_{Dᶜ} ν(x_i, z) μ(z, cell_j) dz`.
///
/// Built-in kernels are integrated exactly over the exterior pieces on
/// which `μ(z, ·)` is constant. User kernels are integrated on graded
/// exterior panels with exact Lévy masses and `μ` frozen at each panel
/// midpoint, so row sums are exact in either case.
pub fn perturbation_matrix(grid: &Arc<Grid>, params: &StableParams, mu: &ReflectionKernel) -> Result<GridOperator> {
    if mu.domain() != grid.domain() {
        return Err(Error::param("mu", "reflection kernel and grid use different domains"));
    }
    let classes = match mu.exterior_classes() {
        Some(c) => c,
        None => panel_classes(mu, grid, params)?,
    };
    let m = classes_to_matrix(grid, params, &classes)?;
    let kappa = killing_vector(params, grid)?;
    let scale = kappa.iter().cloned().fold(0.0, f64::max);
    let dev = row_sums(&m)
        .iter()
        .zip(&kappa)
        .map(|(s, k)| (s - k).abs())
        .fold(0.0, f64::max);
    if dev > PERTURBATION_ROW_TOL * scale {
        return Err(Error::Numerical(format!(
            "perturbation row sums deviate from the killing intensity by {dev:.3e}"
        )));
    }
    GridOperator::new(grid.clone(), *params, m, OperatorKind::Perturbation)
}

/// `A = L + M`, the generator of the reflected chain on the grid.
pub fn full_generator(l: &GridOperator, m: &GridOperator) -> Result<GridOperator> {
    if l.kind() != OperatorKind::DirichletGenerator || m.kind() != OperatorKind::Perturbation {
        return Err(Error::param("operators", "expected a Dirichlet generator and a perturbation matrix"));
    }
    l.same_grid(m)?;
    let a = l.entries() + m.entries();
    GridOperator::new(l.grid().clone(), *l.params(), a, OperatorKind::FullGenerator)
}

/// `exp(tA)` for the full generator.
pub fn semigroup(a: &GridOperator, t: f64) -> Result<GridOperator> {
    if a.kind() != OperatorKind::FullGenerator {
        return Err(Error::param("operator", format!("expected a full generator, got {}", a.kind())));
    }
    exp_generator(a, t, OperatorKind::Reflected { t })
}

/// Real and imaginary parts of a complex matrix, kept apart so that products
/// run through the real matrix kernels.
#[derive(Clone)]
struct SplitMatrix {
    re: DMatrix<f64>,
    im: DMatrix<f64>,
}

impl SplitMatrix {
    fn mul(&self, other: &SplitMatrix) -> SplitMatrix {
        SplitMatrix {
            re: &self.re * &other.re - &self.im * &other.im,
            im: &self.re * &other.im + &self.im * &other.re,
        }
    }

    fn scale(&self, s: Complex64) -> SplitMatrix {
        SplitMatrix {
            re: &self.re * s.re - &self.im * s.im,
            im: &self.re * s.im + &self.im * s.re,
        }
    }

    /// `diag(d) X` for a real `X`.
    fn diag_times(d: &[Complex64], x: &DMatrix<f64>) -> SplitMatrix {
        let mut re = x.clone();
        let mut im = x.clone();
        for (i, di) in d.iter().enumerate() {
            re.row_mut(i).scale_mut(di.re);
            im.row_mut(i).scale_mut(di.im);
        }
        SplitMatrix { re, im }
    }

    /// `Xᵀ diag(d) Y` for real `X`, `Y`.
    fn sandwich(x: &DMatrix<f64>, d: &[Complex64], y: &DMatrix<f64>) -> SplitMatrix {
        let dy = SplitMatrix::diag_times(d, y);
        SplitMatrix {
            re: x.transpose() * dy.re,
            im: x.transpose() * dy.im,
        }
    }
}

/// Options of the series engine.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct SeriesOptions {
    /// Number of Talbot contour nodes (even, at least 8).
    pub contour_nodes: usize,
    pub min_levels: usize,
    pub max_levels: usize,
    pub tail_tol: f64,
}

impl Default for SeriesOptions {
    fn default() -> Self {
        SeriesOptions {
            contour_nodes: DEFAULT_CONTOUR_NODES,
            min_levels: 8,
            max_levels: 400,
            tail_tol: DEFAULT_TAIL_TOL,
        }
    }
}

/// Precomputed spectral data of `L` and a low-rank factorization of `M`.
pub struct DuhamelEngine {
    l: GridOperator,
    q: DMatrix<f64>,
    lambda: DVector<f64>,
    u_tilde: DMatrix<f64>,
    w_tilde: DMatrix<f64>,
    rank: usize,
}

impl DuhamelEngine {
    pub fn new(l: &GridOperator, m: &GridOperator) -> Result<Self> {
        if l.kind() != OperatorKind::DirichletGenerator || m.kind() != OperatorKind::Perturbation {
            return Err(Error::param("operators", "expected a Dirichlet generator and a perturbation matrix"));
        }
        l.same_grid(m)?;
        let n = l.len();
        let spec = SymmetricSpectral::new(l.entries())?;
        if spec.lambda.iter().any(|v| *v >= 0.0) {
            return Err(Error::Numerical("Dirichlet generator has a nonnegative eigenvalue".into()));
        }
        let svd = m.entries().clone().svd(true, true);
        let sigma = &svd.singular_values;
        let smax = sigma.max();
        let rank = sigma.iter().filter(|s| **s > 1e-13 * smax).count().max(1);
        let (u, w) = if rank <= n / 4 {
            let u_full = svd.u.as_ref().expect("left singular vectors");
            let v_t = svd.v_t.as_ref().expect("right singular vectors");
            let mut u = DMatrix::<f64>::zeros(n, rank);
            let mut w = DMatrix::<f64>::zeros(n, rank);
            // Keep the singular values ordered as nalgebra returns them.
            let mut order: Vec<usize> = (0..sigma.len()).collect();
            order.sort_by(|a, b| sigma[*b].total_cmp(&sigma[*a]));
            for (c, &k) in order.iter().take(rank).enumerate() {
                u.set_column(c, &(u_full.column(k) * sigma[k]));
                w.set_column(c, &v_t.row(k).transpose());
            }
            (u, w)
        } else {
            (m.entries().clone(), DMatrix::identity(n, n))
        };
        let qt = spec.q.transpose();
        Ok(DuhamelEngine {
            l: l.clone(),
            u_tilde: &qt * u,
            w_tilde: &qt * w,
            q: spec.q,
            lambda: spec.lambda,
            rank,
        })
    }

    /// Rank used for the factorization of `M`.
    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Computes `K_0(t), …, K_N(t)` with `N` chosen adaptively.
    pub fn series(&self, t: f64, opts: &SeriesOptions) -> Result<DuhamelSeries> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::param("t", format!("must be positive, got {t}")));
        }
        let nodes = opts.contour_nodes;
        if nodes < 8 || nodes % 2 != 0 {
            return Err(Error::param("n_time", format!("contour node count must be even and at least 8, got {nodes}")));
        }
        if opts.max_levels < opts.min_levels.max(1) {
            return Err(Error::param("max_levels", "must be at least min_levels"));
        }
        let n = self.l.len();
        let r = self.u_tilde.ncols();
        let k0 = heat_kernel(&self.l, t)?.into_entries();

        // Per-node state for θ_k > 0 (the others are complex conjugates).
        struct NodeState {
            weight: Complex64,
            p: SplitMatrix,
            c: SplitMatrix,
            b_re_t: DMatrix<f64>,
            b_im_t: DMatrix<f64>,
        }
        let nf = nodes as f64;
        let mut states = Vec::with_capacity(nodes / 2);
        for k in nodes / 2..nodes {
            let theta = -std::f64::consts::PI + (k as f64 + 0.5) * 2.0 * std::f64::consts::PI / nf;
            let ct = TALBOT_NU * theta;
            let cot = ct.cos() / ct.sin();
            let z = Complex64::new(TALBOT_SIGMA + TALBOT_MU * theta * cot, TALBOT_BETA * theta) * (nf / t);
            let dz = Complex64::new(TALBOT_MU * (cot - ct / (ct.sin() * ct.sin())), TALBOT_BETA) * (nf / t);
            let weight = (z * t).exp() * dz;
            let d: Vec<Complex64> = self.lambda.iter().map(|&l| 1.0 / (z - l)).collect();
            let du = SplitMatrix::diag_times(&d, &self.u_tilde);
            let dw = SplitMatrix::diag_times(&d, &self.w_tilde);
            let a = SplitMatrix {
                re: &self.q * du.re,
                im: &self.q * du.im,
            };
            // Bᵀ = Q D W̃, stored transposed.
            let b_re_t = (&self.q * dw.re).transpose();
            let b_im_t = (&self.q * dw.im).transpose();
            let c = SplitMatrix::sandwich(&self.w_tilde, &d, &self.u_tilde);
            states.push(NodeState {
                weight,
                p: a,
                c,
                b_re_t,
                b_im_t,
            });
        }

        let mut terms = vec![k0];
        let mut masses = vec![row_sums(&terms[0]).into_iter().fold(0.0, f64::max)];
        let mut clipped = 0.0f64;
        let scale = 2.0 / nf;
        let width = 2 * r * states.len();
        let mut level = 0;
        let fit = loop {
            level += 1;
            if level > 1 {
                for s in states.iter_mut() {
                    s.p = s.p.mul(&s.c);
                }
            }
            let mut x = DMatrix::<f64>::zeros(n, width);
            let mut y = DMatrix::<f64>::zeros(width, n);
            for (k, s) in states.iter().enumerate() {
                let f = s.p.scale(s.weight);
                let off = 2 * r * k;
                x.columns_mut(off, r).copy_from(&f.re);
                x.columns_mut(off + r, r).copy_from(&f.im);
                y.rows_mut(off, r).copy_from(&s.b_im_t);
                y.rows_mut(off + r, r).copy_from(&s.b_re_t);
            }
            let mut term = (x * y) * scale;
            for v in term.iter_mut() {
                if *v < 0.0 {
                    clipped = clipped.min(*v);
                    *v = 0.0;
                }
            }
            masses.push(row_sums(&term).into_iter().fold(0.0, f64::max));
            terms.push(term);
            if level >= opts.min_levels {
                let fit = LevelFit::from_masses(&masses);
                let tail = fit.tail(level);
                if fit.gamma < 1.0 && tail < opts.tail_tol {
                    break fit;
                }
                if level >= opts.max_levels {
                    return Err(Error::NonConvergent {
                        gamma: fit.gamma,
                        levels: level,
                        tail,
                    });
                }
            }
        };
        if clipped < -TERM_CLIP_TOL {
            return Err(Error::Numerical(format!(
                "series term has a negative entry {clipped:.3e}; increase the contour node count"
            )));
        }
        let truncation_n = terms.len() - 1;
        Ok(DuhamelSeries {
            grid: self.l.grid().clone(),
            params: *self.l.params(),
            t,
            terms,
            level_mass: masses,
            gamma: fit.gamma,
            c: fit.c,
            r_squared: fit.r_squared,
            tail_bound: fit.tail(truncation_n),
            truncation_n,
            contour_nodes: nodes,
            rank: self.rank,
            min_entry_clipped: clipped,
        })
    }
}

/// Least-squares fit of `log m_n = a + n log γ` over levels `n ≥ 1`, with
/// `c = max(1, max_n m_n / γⁿ)` so that `m_n ≤ cγⁿ` on the fitted levels.
#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct LevelFit {
    pub gamma: f64,
    pub c: f64,
    pub r_squared: f64,
}

impl LevelFit {
    pub fn from_masses(masses: &[f64]) -> LevelFit {
        let pts: Vec<(f64, f64)> = masses
            .iter()
            .enumerate()
            .skip(1)
            .filter(|(_, m)| **m > 0.0)
            .map(|(k, m)| (k as f64, m.ln()))
            .collect();
        let (slope, _, r2) = crate::stats::linear_fit(&pts);
        let gamma = slope.exp();
        let c = pts
            .iter()
            .map(|&(k, lm)| (lm - k * slope).exp())
            .fold(1.0, f64::max);
        LevelFit {
            gamma,
            c,
            r_squared: r2,
        }
    }

    /// `cγ^{N+1}/(1−γ)`, infinite if `γ ≥ 1`.
    pub fn tail(&self, n: usize) -> f64 {
        if self.gamma >= 1.0 || !self.gamma.is_finite() {
            return f64::INFINITY;
        }
        self.c * self.gamma.powi(n as i32 + 1) / (1.0 - self.gamma)
    }
}

/// `K_0(t), …, K_N(t)` with the fitted geometric bound.
#[derive(Clone, Debug)]
pub struct DuhamelSeries {
    grid: Arc<Grid>,
    params: StableParams,
    t: f64,
    terms: Vec<DMatrix<f64>>,
    level_mass: Vec<f64>,
    gamma: f64,
    c: f64,
    r_squared: f64,
    tail_bound: f64,
    truncation_n: usize,
    contour_nodes: usize,
    rank: usize,
    min_entry_clipped: f64,
}

/// Series diagnostics, for JSON reports.
#[derive(Clone, Debug, Serialize)]
pub struct SeriesReport {
    pub t: f64,
    pub truncation_n: usize,
    pub level_mass: Vec<f64>,
    pub gamma: f64,
    pub c: f64,
    pub r_squared: f64,
    pub tail_bound: f64,
    pub contour_nodes: usize,
    pub perturbation_rank: usize,
    pub min_entry_clipped: f64,
}

impl DuhamelSeries {
    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn terms(&self) -> &[DMatrix<f64>] {
        &self.terms
    }

    pub fn term(&self, n: usize) -> Option<&DMatrix<f64>> {
        self.terms.get(n)
    }

    /// `max_x K_n(t)𝟙(x)` per level.
    pub fn level_mass(&self) -> &[f64] {
        &self.level_mass
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn truncation_n(&self) -> usize {
        self.truncation_n
    }

    pub fn tail_bound(&self) -> f64 {
        self.tail_bound
    }

    /// Refits the level masses over `1..=n_max` only.
    pub fn fit_levels(&self, n_max: usize) -> LevelFit {
        let end = (n_max + 1).min(self.level_mass.len());
        LevelFit::from_masses(&self.level_mass[..end])
    }

    pub fn sum(&self) -> DMatrix<f64> {
        let mut s = self.terms[0].clone();
        for t in &self.terms[1..] {
            s += t;
        }
        s
    }

    pub fn report(&self) -> SeriesReport {
        SeriesReport {
            t: self.t,
            truncation_n: self.truncation_n,
            level_mass: self.level_mass.clone(),
            gamma: self.gamma,
            c: self.c,
            r_squared: self.r_squared,
            tail_bound: self.tail_bound,
            contour_nodes: self.contour_nodes,
            perturbation_rank: self.rank,
            min_entry_clipped: self.min_entry_clipped,
        }
    }
}

/// Convenience wrapper: engine construction plus one series.
pub fn duhamel_series(l: &GridOperator, m: &GridOperator, t: f64, opts: &SeriesOptions) -> Result<DuhamelSeries> {
    DuhamelEngine::new(l, m)?.series(t, opts)
}

/// `K(t) = Σ_{n ≤ N} K_n(t)`, with the conservation check
/// `|K(t)𝟙 − 1| ≤ 1e-4`.
pub fn reflected_kernel(series: &DuhamelSeries) -> Result<GridOperator> {
    let k = series.sum();
    let dev = row_sums(&k).iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max);
    if dev > CONSERVATION_TOL {
        return Err(Error::Conservation {
            deviation: dev,
            tolerance: CONSERVATION_TOL,
        });
    }
    GridOperator::new(series.grid.clone(), series.params, k, OperatorKind::Reflected { t: series.t })
}

/// A function on the truncated ladder space `{0, …, M−1} × grid`.
pub type LadderFn = Vec<Vec<f64>>;

/// Block upper-triangular kernel `𝕜(t)` on the ladder space: block `(m, n)`
/// is `K_{n−m}(t)` for `n ≥ m` and zero otherwise.
#[derive(Clone, Debug)]
pub struct LadderKernel {
    t: f64,
    blocks: Vec<DMatrix<f64>>,
    levels: usize,
    tail_bound: f64,
}

/// Truncates the ladder at `levels` levels; requires `levels > N`.
pub fn ladder_kernel(series: &DuhamelSeries, levels: usize) -> Result<LadderKernel> {
    if levels <= series.truncation_n {
        return Err(Error::param(
            "m_levels",
            format!(
                "need more than the series truncation N = {} levels, got {levels}",
                series.truncation_n
            ),
        ));
    }
    Ok(LadderKernel {
        t: series.t,
        blocks: series.terms.clone(),
        levels,
        tail_bound: series.tail_bound,
    })
}

impl LadderKernel {
    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn tail_bound(&self) -> f64 {
        self.tail_bound
    }

    /// Block `(m, n)`, or `None` when it vanishes.
    pub fn block(&self, m: usize, n: usize) -> Option<&DMatrix<f64>> {
        if n < m || n >= self.levels {
            return None;
        }
        self.blocks.get(n - m)
    }

    /// `(𝕂(t)f)(m, ·) = Σ_{n ≥ m} K_{n−m}(t) f(n, ·)`.
    pub fn apply(&self, f: &LadderFn) -> Result<LadderFn> {
        if f.len() != self.levels {
            return Err(Error::param("f", format!("expected {} levels, got {}", self.levels, f.len())));
        }
        let np = self.blocks[0].nrows();
        let cols: Vec<DVector<f64>> = f.iter().map(|v| DVector::from_column_slice(v)).collect();
        let mut out = Vec::with_capacity(self.levels);
        for m in 0..self.levels {
            let mut acc = DVector::<f64>::zeros(np);
            for n in m..self.levels {
                if let Some(b) = self.block(m, n) {
                    acc += b * &cols[n];
                }
            }
            out.push(acc.iter().copied().collect());
        }
        Ok(out)
    }

    /// `P^{(0, x_i)}(N_t = n)` for `n < levels`.
    pub fn level_distribution(&self, i: usize) -> Vec<f64> {
        (0..self.levels)
            .map(|n| self.block(0, n).map(|b| b.row(i).sum()).unwrap_or(0.0))
            .collect()
    }
}

/// Cached LU factors of `λ − A`.
pub struct ShiftedSolver {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    lambda: f64,
}

impl ShiftedSolver {
    pub fn new(a: &GridOperator, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::param("lambda", format!("must be positive, got {lambda}")));
        }
        let n = a.len();
        let m = DMatrix::<f64>::identity(n, n) * lambda - a.entries();
        Ok(ShiftedSolver { lu: m.lu(), lambda })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let x = self
            .lu
            .solve(&DVector::from_column_slice(b))
            .ok_or_else(|| Error::Numerical("shifted generator is singular".into()))?;
        Ok(x.iter().copied().collect())
    }
}

/// `v^λ_g = (λ − A)^{-1} b`, `b_i = ∫_{Dᶜ} ν(x_i, z) g(z) dz`.
pub fn supermedian_v(a: &GridOperator, lambda: f64, g: &ExteriorFn) -> Result<Vec<f64>> {
    if a.kind() != OperatorKind::FullGenerator {
        return Err(Error::param("operator", format!("expected a full generator, got {}", a.kind())));
    }
    let b = g.rhs(a.params(), a.grid())?;
    ShiftedSolver::new(a, lambda)?.solve(&b)
}

/// `max_i (e^{−λt} P h − h)_i` for a transition matrix `P` at time `t`;
/// nonpositive when `h` is λ-supermedian for `P`.
pub fn supermedian_excess(p: &DMatrix<f64>, lambda: f64, t: f64, h: &[f64]) -> f64 {
    let ph = p * DVector::from_column_slice(h);
    let decay = (-lambda * t).exp();
    ph.iter()
        .zip(h)
        .map(|(a, b)| decay * a - b)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `max_z (μu)(z)` over exterior probes, where `(μu)(z) = Σ_j μ(z, cell_j) u_j`.
pub fn max_mu_average(mu: &ReflectionKernel, grid: &Grid, u: &[f64], probes: &[Point]) -> Result<f64> {
    let mut best = f64::NEG_INFINITY;
    for z in probes {
        let w = mu.cell_masses(z, grid)?;
        let v: f64 = w.iter().zip(u).map(|(a, b)| a * b).sum();
        best = best.max(v);
    }
    Ok(best)
}

/// `ε = 1 − max_z μu^λ_𝟙(z)` on the default probes, so that `v^λ_𝟙 ≤ 1/ε`.
pub fn epsilon_bound(mu: &ReflectionKernel, u_one: &[f64], grid: &Grid) -> Result<f64> {
    let probes = default_probes(grid.domain());
    Ok(1.0 - max_mu_average(mu, grid, u_one, &probes)?)
}

/// An excessive function `v = Σ_n v^λ_{𝟙_{Π_{r_n}}}` with `v^λ_{𝟙_{Π_{r_n}}} ≤ 2^{-n}`
/// on `D_n = {δ_D ≥ δ_max 2^{-n}}`.
#[derive(Clone, Debug, Serialize)]
pub struct ExcessiveFunction {
    pub lambda: f64,
    pub values: Vec<f64>,
    pub radii: Vec<f64>,
    pub summands: Vec<Vec<f64>>,
}

const BISECTION_STEPS: usize = 80;

/// Builds the boundary-blow-up excessive function with `n_max` summands.
pub fn build_excessive(a: &GridOperator, lambda: f64, n_max: usize) -> Result<ExcessiveFunction> {
    if a.kind() != OperatorKind::FullGenerator {
        return Err(Error::param("operator", format!("expected a full generator, got {}", a.kind())));
    }
    if n_max == 0 {
        return Err(Error::param("n_max", "must be positive"));
    }
    let grid = a.grid();
    let params = a.params();
    let solver = ShiftedSolver::new(a, lambda)?;
    let delta = grid.boundary_distances();
    let dmax = delta.iter().cloned().fold(0.0, f64::max);
    let diam = grid.domain().diameter();
    let r_floor = 1e-12 * diam;
    let shell_v = |r: f64| -> Result<Vec<f64>> {
        let shell = grid.domain().exterior_shell(r)?;
        let b: Vec<f64> = grid.nodes().iter().map(|&x| shell.nu_mass(params, x)).collect();
        solver.solve(&b)
    };
    let mut radii = Vec::with_capacity(n_max);
    let mut summands = Vec::with_capacity(n_max);
    let mut r_prev = diam;
    for n in 1..=n_max {
        let target = 0.5f64.powi(n as i32);
        let inner: Vec<usize> = (0..grid.len()).filter(|&i| delta[i] >= dmax * 0.5f64.powi(n as i32)).collect();
        let worst = |v: &[f64]| inner.iter().map(|&i| v[i]).fold(0.0, f64::max);
        let v_hi = shell_v(r_prev)?;
        let (r, v) = if worst(&v_hi) <= target {
            (r_prev, v_hi)
        } else {
            let v_lo = shell_v(r_floor)?;
            if worst(&v_lo) > target {
                return Err(Error::Numerical(format!(
                    "no shell radius above {r_floor:.1e} meets the bound 2^-{n} on D_{n}; reduce n_max"
                )));
            }
            let (mut lo, mut hi) = (r_floor.ln(), r_prev.ln());
            let mut best = (r_floor, v_lo);
            for _ in 0..BISECTION_STEPS {
                let mid = 0.5 * (lo + hi);
                let v = shell_v(mid.exp())?;
                if worst(&v) <= target {
                    lo = mid;
                    best = (mid.exp(), v);
                } else {
                    hi = mid;
                }
            }
            best
        };
        radii.push(r);
        summands.push(v);
        r_prev = r;
    }
    let mut values = vec![0.0; grid.len()];
    for s in &summands {
        for (a, b) in values.iter_mut().zip(s) {
            *a += b;
        }
    }
    if values.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::Numerical("excessive function is not strictly positive and finite".into()));
    }
    Ok(ExcessiveFunction {
        lambda,
        values,
        radii,
        summands,
    })
}

/// Slack of the numerical supermedian checks, relative to `max(1, ‖h‖∞)`.
pub const SUPERMEDIAN_SLACK: f64 = 1e-8;

/// `ℍ(m, x) = α^m h(x)` on `levels` levels, after checking that `h` is
/// λ-supermedian for the reflected kernel `k` at its time.
pub fn ladder_lift(h: &[f64], alpha_lift: f64, lambda: f64, k: &GridOperator, levels: usize) -> Result<LadderFn> {
    if !(alpha_lift > 0.0 && alpha_lift <= 1.0) {
        return Err(Error::param("alpha_lift", format!("must lie in (0, 1], got {alpha_lift}")));
    }
    let t = match k.kind() {
        OperatorKind::Reflected { t } => t,
        other => return Err(Error::param("operator", format!("expected a reflected kernel, got {other}"))),
    };
    let scale = h.iter().map(|v| v.abs()).fold(1.0, f64::max);
    let excess = supermedian_excess(k.entries(), lambda, t, h);
    if excess > SUPERMEDIAN_SLACK * scale {
        return Err(Error::Assertion(format!(
            "h is not {lambda}-supermedian at t = {t}: excess {excess:.3e}"
        )));
    }
    Ok((0..levels)
        .map(|m| {
            let f = alpha_lift.powi(m as i32);
            h.iter().map(|v| f * v).collect()
        })
        .collect())
}

/// `max_{m,x} (e^{−λt} 𝕂(t)ℍ − ℍ)(m, x)`.
pub fn ladder_supermedian_excess(ladder: &LadderKernel, lambda: f64, hh: &LadderFn) -> Result<f64> {
    let k = ladder.apply(hh)?;
    let decay = (-lambda * ladder.t()).exp();
    Ok(k.iter()
        .zip(hh)
        .flat_map(|(a, b)| a.iter().zip(b).map(move |(x, y)| decay * x - y))
        .fold(f64::NEG_INFINITY, f64::max))
}
