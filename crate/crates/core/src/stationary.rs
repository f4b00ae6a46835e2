//! Stationary laws: the reflection chain `h_Dμ` and its invariant measure
//! `𝔭`, the stationary measure `κ` of the reflected semigroup computed in
//! three independent ways, and the Dobrushin coefficient.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::Grid;
use crate::killed::{GridOperator, OperatorKind};
use crate::linalg::{row_sums, vec_mat};
use crate::pathsim::LadderPath;
use crate::perturbation::semigroup;
use crate::stats::total_variation;

pub const NORMALIZATION_TOL: f64 = 1e-10;
pub const CHAIN_ROW_TOL: f64 = 1e-6;
const POWER_ITERATION_CAP: usize = 100_000;
const NULL_ITERATIONS: usize = 8;
const NULL_TV_TOL: f64 = 1e-6;
const MIN_REFLECTIONS_PER_PATH: f64 = 50.0;

/// A probability measure on the cells of a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GridMeasure {
    grid: Arc<Grid>,
    masses: Vec<f64>,
}

impl GridMeasure {
    pub fn new(grid: Arc<Grid>, masses: Vec<f64>) -> Result<Self> {
        if masses.len() != grid.len() {
            return Err(Error::param("masses", format!("expected {} cells, got {}", grid.len(), masses.len())));
        }
        if masses.iter().any(|m| !(*m >= 0.0) || !m.is_finite()) {
            return Err(Error::param("masses", "must be finite and nonnegative"));
        }
        let s: f64 = masses.iter().sum();
        if (s - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::param("masses", format!("sum to {s}, not 1")));
        }
        Ok(GridMeasure { grid, masses })
    }

    /// Normalizes nonnegative weights; entries in `[-tol, 0)` are clipped.
    pub fn from_weights(grid: Arc<Grid>, mut w: Vec<f64>, tol: f64) -> Result<Self> {
        let s: f64 = w.iter().sum();
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::Numerical("measure has no positive mass".into()));
        }
        for v in w.iter_mut() {
            *v /= s;
            if *v < 0.0 {
                if *v < -tol {
                    return Err(Error::Numerical(format!("measure has a negative mass {v:.3e}")));
                }
                *v = 0.0;
            }
        }
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= s);
        GridMeasure::new(grid, w)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    /// Mass divided by cell width.
    pub fn density(&self) -> Vec<f64> {
        self.masses.iter().enumerate().map(|(i, m)| m / self.grid.width(i)).collect()
    }

    pub fn tv(&self, other: &GridMeasure) -> f64 {
        total_variation(&self.masses, &other.masses)
    }

    /// Coarsens to consecutive groups of `factor` cells.
    pub fn coarsen(&self, factor: usize) -> Vec<f64> {
        self.masses.chunks(factor.max(1)).map(|c| c.iter().sum()).collect()
    }
}

/// `(h_Dμ)(x_i, cell_j) = (G M)_ij` with `G` the Green operator and `M` the
/// perturbation matrix; rows sum to 1 because `Gκ_D = 1`.
pub fn chain_kernel(green: &GridOperator, m: &GridOperator) -> Result<GridOperator> {
    if green.kind() != OperatorKind::Green || m.kind() != OperatorKind::Perturbation {
        return Err(Error::param("operators", "expected a Green operator and a perturbation matrix"));
    }
    let mut p = green.entries() * m.entries();
    crate::linalg::clip_negative(&mut p, 1e-12)?;
    let dev = row_sums(&p).iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max);
    if dev > CHAIN_ROW_TOL {
        return Err(Error::Conservation {
            deviation: dev,
            tolerance: CHAIN_ROW_TOL,
        });
    }
    GridOperator::new(green.grid().clone(), *green.params(), p, OperatorKind::Chain)
}

/// `Pⁿ` by repeated multiplication.
pub fn chain_power(chain: &GridOperator, n: usize) -> DMatrix<f64> {
    let k = chain.len();
    let mut out = DMatrix::<f64>::identity(k, k);
    for _ in 0..n {
        out = &out * chain.entries();
    }
    out
}

/// Pairwise row comparison of a stochastic matrix.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Dobrushin {
    /// `max_{i,j} TV(P(i,·), P(j,·))`.
    pub beta_hat: f64,
    /// `min_{i,j} Σ_k min(P(i,k), P(j,k))`, the measured overlap `Ĉϑ̂`.
    pub overlap: f64,
}

pub fn dobrushin(p: &DMatrix<f64>) -> Dobrushin {
    let n = p.nrows();
    let rows: Vec<Vec<f64>> = p.row_iter().map(|r| r.iter().copied().collect()).collect();
    let mut beta: f64 = 0.0;
    let mut overlap: f64 = 1.0;
    for i in 0..n {
        for j in i + 1..n {
            let (mut l1, mut ov) = (0.0, 0.0);
            for (a, b) in rows[i].iter().zip(&rows[j]) {
                l1 += (a - b).abs();
                ov += a.min(*b);
            }
            beta = beta.max(0.5 * l1);
            overlap = overlap.min(ov);
        }
    }
    Dobrushin { beta_hat: beta, overlap }
}

/// Dobrushin data of the two-step chain `(h_Dμ)²`.
pub fn two_step_dobrushin(chain: &GridOperator) -> Dobrushin {
    dobrushin(&chain_power(chain, 2))
}

#[derive(Clone, Debug)]
pub struct StationaryP {
    pub measure: GridMeasure,
    pub iterations: usize,
    /// Empirical per-step contraction of successive differences.
    pub rate: f64,
    pub two_step: Dobrushin,
    /// `TV(𝔭 P, 𝔭)`.
    pub residual: f64,
}

/// Power iteration for the invariant law of a stochastic kernel, from a
/// point mass at the first node until successive iterates are within `tol` in TV.
pub fn stationary_p(chain: &GridOperator, tol: f64) -> Result<StationaryP> {
    if chain.kind() != OperatorKind::Chain {
        return Err(Error::param("operator", format!("expected a chain kernel, got {}", chain.kind())));
    }
    if !(tol > 0.0) {
        return Err(Error::param("tol", "must be positive"));
    }
    let n = chain.len();
    let two_step = two_step_dobrushin(chain);
    // A symmetric start can hit the invariant law of a symmetric chain in one
    // step, which hides the contraction rate.
    let mut p = vec![0.0; n];
    p[0] = 1.0;
    let mut diffs = Vec::new();
    let mut iterations = 0;
    loop {
        let q = vec_mat(&p, chain.entries());
        let d = total_variation(&p, &q);
        iterations += 1;
        p = q;
        diffs.push(d);
        if d < tol {
            break;
        }
        if iterations >= POWER_ITERATION_CAP {
            return Err(Error::NonConvergent {
                gamma: two_step.beta_hat,
                levels: iterations,
                tail: d,
            });
        }
    }
    // Geometric mean of successive ratios over the iterations that are
    // above rounding level.
    let usable: Vec<f64> = diffs.iter().copied().take_while(|d| *d > 1e-13).collect();
    let rate = if usable.len() >= 2 {
        (usable[usable.len() - 1] / usable[0]).powf(1.0 / (usable.len() - 1) as f64)
    } else {
        0.0
    };
    let measure = GridMeasure::from_weights(chain.grid().clone(), p, 1e-12)?;
    let residual = total_variation(&vec_mat(measure.masses(), chain.entries()), measure.masses());
    if residual > 2.0 * tol {
        return Err(Error::Assertion(format!("stationary residual {residual:.3e} exceeds 2·tol")));
    }
    Ok(StationaryP {
        measure,
        iterations,
        rate,
        two_step,
        residual,
    })
}

/// `κ(cell_j) ∝ Σ_i p_i G(i, j)`.
pub fn kappa_closed_form(p: &GridMeasure, green: &GridOperator) -> Result<GridMeasure> {
    if green.kind() != OperatorKind::Green {
        return Err(Error::param("operator", "expected a Green operator"));
    }
    if **p.grid() != **green.grid() {
        return Err(Error::param("measure", "measure and Green operator live on different grids"));
    }
    GridMeasure::from_weights(green.grid().clone(), vec_mat(p.masses(), green.entries()), 1e-12)
}

#[derive(Clone, Debug)]
pub struct NullVector {
    pub measure: GridMeasure,
    /// Number of singular values of `A` below `1e-10·σ_max`.
    pub null_dimension: usize,
    /// `TV(κ exp(tA), κ)` at `t = 0.5` and `t = 2`.
    pub invariance: [f64; 2],
}

/// Normalized left null vector of the full generator.
pub fn kappa_generator_nullvector(a: &GridOperator) -> Result<NullVector> {
    if a.kind() != OperatorKind::FullGenerator {
        return Err(Error::param("operator", format!("expected a full generator, got {}", a.kind())));
    }
    let n = a.len();
    let sv = a.entries().singular_values();
    let smax = sv.max();
    let null_dimension = sv.iter().filter(|s| **s < 1e-10 * smax).count();
    if null_dimension != 1 {
        return Err(Error::Numerical(format!("generator null space has dimension {null_dimension}, expected 1")));
    }
    let shift = 1e-10 * smax;
    let lu = (a.entries().transpose() - DMatrix::<f64>::identity(n, n) * shift).lu();
    let mut x = DVector::<f64>::from_element(n, 1.0 / n as f64);
    for _ in 0..NULL_ITERATIONS {
        x = lu
            .solve(&x)
            .ok_or_else(|| Error::Numerical("shifted generator is singular".into()))?;
        let s = x.sum();
        x /= s;
    }
    let measure = GridMeasure::from_weights(a.grid().clone(), x.iter().copied().collect(), 1e-9)?;
    let mut invariance = [0.0; 2];
    for (k, t) in [0.5, 2.0].into_iter().enumerate() {
        let p = semigroup(a, t)?;
        invariance[k] = total_variation(&vec_mat(measure.masses(), p.entries()), measure.masses());
    }
    if invariance.iter().any(|v| *v > NULL_TV_TOL) {
        return Err(Error::Assertion(format!(
            "null vector is not invariant under exp(tA): TV {:.3e}, {:.3e}",
            invariance[0], invariance[1]
        )));
    }
    Ok(NullVector {
        measure,
        null_dimension,
        invariance,
    })
}

/// Ergodic estimate: occupation after the burn-in, pooled over replicas.
pub fn kappa_ergodic(paths: &[LadderPath], grid: &Arc<Grid>) -> Result<GridMeasure> {
    if paths.is_empty() {
        return Err(Error::InsufficientData("no paths".into()));
    }
    let refl: usize = paths.iter().map(|p| p.tau().len()).sum();
    let per_path = refl as f64 / paths.len() as f64;
    if per_path < MIN_REFLECTIONS_PER_PATH {
        return Err(Error::InsufficientData(format!(
            "{per_path:.1} reflections per path on average, need {MIN_REFLECTIONS_PER_PATH}"
        )));
    }
    let mut w = vec![0.0; grid.len()];
    for p in paths {
        let occ = p
            .occupation
            .as_ref()
            .ok_or_else(|| Error::param("paths", "simulated without occupation recording"))?;
        if occ.len() != w.len() {
            return Err(Error::param("paths", "occupation grid differs"));
        }
        for (a, b) in w.iter_mut().zip(occ) {
            *a += b;
        }
    }
    GridMeasure::from_weights(grid.clone(), w, 0.0)
}

/// Pairwise total variation distances between named estimates.
#[derive(Clone, Debug, Serialize)]
pub struct Triangulation {
    pub names: Vec<String>,
    pub pairwise_tv: Vec<(String, String, f64)>,
    pub max_tv: f64,
}

pub fn triangulate(estimates: &[(&str, &GridMeasure)]) -> Triangulation {
    let mut pairwise_tv = Vec::new();
    let mut max_tv: f64 = 0.0;
    for i in 0..estimates.len() {
        for j in i + 1..estimates.len() {
            let tv = estimates[i].1.tv(estimates[j].1);
            max_tv = max_tv.max(tv);
            pairwise_tv.push((estimates[i].0.to_string(), estimates[j].0.to_string(), tv));
        }
    }
    Triangulation {
        names: estimates.iter().map(|e| e.0.to_string()).collect(),
        pairwise_tv,
        max_tv,
    }
}

/// `max_i TV(Pⁿ(i, ·), 𝔭)` for `n = 0, …, n_max`.
pub fn chain_law_distances(chain: &GridOperator, p: &GridMeasure, n_max: usize) -> Vec<f64> {
    let mut pn = DMatrix::<f64>::identity(chain.len(), chain.len());
    let mut out = Vec::with_capacity(n_max + 1);
    for n in 0..=n_max {
        if n > 0 {
            pn = &pn * chain.entries();
        }
        let worst = pn
            .row_iter()
            .map(|r| {
                let row: Vec<f64> = r.iter().copied().collect();
                total_variation(&row, p.masses())
            })
            .fold(0.0, f64::max);
        out.push(worst);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Domain;
    use crate::killed::{assemble_dirichlet_generator, green_operator};
    use crate::perturbation::{full_generator, perturbation_matrix};
    use crate::point::Point;
    use crate::reflection::{make_constant_kernel, make_dirac_kernel, make_projection_kernel, EntryLaw, ReflectionKernel};
    use crate::stable::StableParams;

    struct Ops {
        green: GridOperator,
        m: GridOperator,
        a: GridOperator,
    }

    fn ops(mu: &ReflectionKernel, n: usize) -> Ops {
        let p = StableParams::new(1, 1.0).unwrap();
        let g = Grid::build(mu.domain(), n).unwrap();
        let l = assemble_dirichlet_generator(&g, &p).unwrap();
        let m = perturbation_matrix(&g, &p, mu).unwrap();
        Ops {
            green: green_operator(&l).unwrap(),
            a: full_generator(&l, &m).unwrap(),
            m,
        }
    }

    fn unit() -> Domain {
        Domain::interval(-1.0, 1.0).unwrap()
    }

    #[test]
    fn constant_kernel_rows_equal_law() {
        let law = EntryLaw::uniform(-0.5, 0.5);
        let mu = make_constant_kernel(&unit(), law.clone()).unwrap();
        let o = ops(&mu, 40);
        let c = chain_kernel(&o.green, &o.m).unwrap();
        let w = law.cell_masses(o.green.grid()).unwrap();
        for i in 0..40 {
            for j in 0..40 {
                assert!((c.entries()[(i, j)] - w[j]).abs() < 1e-10);
            }
        }
        let sp = stationary_p(&c, 1e-12).unwrap();
        assert!(sp.iterations <= 2);
        assert!(sp.two_step.beta_hat < 1e-10);
    }

    #[test]
    fn dirac_kernel_gives_green_row() {
        let mu = make_dirac_kernel(&unit(), Point::scalar(0.3)).unwrap();
        let o = ops(&mu, 40);
        let c = chain_kernel(&o.green, &o.m).unwrap();
        let sp = stationary_p(&c, 1e-12).unwrap();
        let j0 = o.green.grid().locate(0.3).unwrap();
        assert!((sp.measure.masses()[j0] - 1.0).abs() < 1e-10);
        let k = kappa_closed_form(&sp.measure, &o.green).unwrap();
        let row: Vec<f64> = o.green.entries().row(j0).iter().copied().collect();
        let expect = GridMeasure::from_weights(o.green.grid().clone(), row, 0.0).unwrap();
        assert!(k.tv(&expect) < 1e-12);
        let nv = kappa_generator_nullvector(&o.a).unwrap();
        assert_eq!(nv.null_dimension, 1);
        assert!(nv.measure.tv(&k) < 0.01);
    }

    #[test]
    fn projection_kernel_contracts() {
        let mu = make_projection_kernel(&unit(), 0.3, 0.2).unwrap();
        let o = ops(&mu, 60);
        let c = chain_kernel(&o.green, &o.m).unwrap();
        let sp = stationary_p(&c, 1e-12).unwrap();
        assert!(sp.two_step.beta_hat < 1.0);
        assert!(sp.rate <= sp.two_step.beta_hat.sqrt() + 0.05);
        let d = chain_law_distances(&c, &sp.measure, 8);
        for n in [4, 6, 8] {
            assert!(d[n] <= d[2] * sp.two_step.beta_hat.powi(n as i32 / 2 - 1) + 1e-12);
        }
        let k = kappa_closed_form(&sp.measure, &o.green).unwrap();
        let nv = kappa_generator_nullvector(&o.a).unwrap();
        assert!(nv.measure.tv(&k) < 0.01);
    }

    #[test]
    fn measure_validation() {
        let g = Grid::build(&unit(), 4).unwrap();
        assert!(GridMeasure::new(g.clone(), vec![0.5, 0.5, 0.0, 0.1]).is_err());
        assert!(GridMeasure::new(g.clone(), vec![0.5, 0.5]).is_err());
        assert!(GridMeasure::from_weights(g.clone(), vec![0.0; 4], 0.0).is_err());
        let m = GridMeasure::from_weights(g, vec![1.0, 1.0, 1.0, 1.0], 0.0).unwrap();
        assert!((m.density()[0] - 0.5).abs() < 1e-15);
    }
}
