//! Domains, boundary distance, exterior shells, grids and quadrature over
//! the complement of a domain.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::point::{Point, MAX_DIM};
use crate::special::GaussRule;
use crate::stable::StableParams;

/// Relative tolerance used when checking that component lengths are integer
/// multiples of the grid width.
const GRID_FIT_TOL: f64 = 1e-9;

/// Tail mass of the Lévy kernel left to the analytic antiderivative in
/// exterior quadrature.
pub const EXTERIOR_TAIL_MASS: f64 = 1e-10;

const EXTERIOR_GAUSS_ORDER: usize = 12;

/// A bounded open set `D`.
///
/// One-dimensional balls are stored as intervals. `Cells` is a finite union
/// of disjoint open intervals separated by gaps of positive length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Domain {
    Interval { a: f64, b: f64 },
    Ball { center: Point, radius: f64 },
    #[serde(rename = "grid1d")]
    Cells { cells: Vec<(f64, f64)> },
}

impl Domain {
    pub fn interval(a: f64, b: f64) -> Result<Self> {
        Domain::Interval { a, b }.validated()
    }

    pub fn ball(center: Point, radius: f64) -> Result<Self> {
        Domain::Ball { center, radius }.validated()
    }

    pub fn cells(cells: Vec<(f64, f64)>) -> Result<Self> {
        Domain::Cells { cells }.validated()
    }

    /// Checks the invariants and normalizes the representation: 1-D balls
    /// become intervals, a single cell becomes an interval, cells are sorted.
    pub fn validated(self) -> Result<Self> {
        match self {
            Domain::Interval { a, b } => {
                if !(a.is_finite() && b.is_finite() && a < b) {
                    return Err(Error::Geometry(format!("interval requires finite a < b, got ({a}, {b})")));
                }
                Ok(Domain::Interval { a, b })
            }
            Domain::Ball { center, radius } => {
                if !(radius > 0.0 && radius.is_finite()) {
                    return Err(Error::Geometry(format!("ball radius must be positive, got {radius}")));
                }
                if !center.is_finite() {
                    return Err(Error::Geometry("ball center must be finite".into()));
                }
                if center.dim() == 1 {
                    let c = center.x();
                    return Domain::interval(c - radius, c + radius);
                }
                Ok(Domain::Ball { center, radius })
            }
            Domain::Cells { mut cells } => {
                if cells.is_empty() {
                    return Err(Error::Geometry("grid1d domain needs at least one cell".into()));
                }
                for &(lo, hi) in &cells {
                    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                        return Err(Error::Geometry(format!("cell ({lo}, {hi}) must have positive length")));
                    }
                }
                cells.sort_by(|p, q| p.0.total_cmp(&q.0));
                for w in cells.windows(2) {
                    if w[1].0 <= w[0].1 {
                        return Err(Error::Geometry(format!(
                            "cells ({}, {}) and ({}, {}) must be separated by a gap of positive length",
                            w[0].0, w[0].1, w[1].0, w[1].1
                        )));
                    }
                }
                if cells.len() == 1 {
                    return Domain::interval(cells[0].0, cells[0].1);
                }
                Ok(Domain::Cells { cells })
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Domain::Ball { center, .. } => center.dim(),
            _ => 1,
        }
    }

    /// Connected components of a one-dimensional domain, sorted.
    pub fn components(&self) -> Option<Vec<(f64, f64)>> {
        match self {
            Domain::Interval { a, b } => Some(vec![(*a, *b)]),
            Domain::Cells { cells } => Some(cells.clone()),
            Domain::Ball { .. } => None,
        }
    }

    /// Connected components of `Dᶜ` for a 1-D domain, as closed intervals
    /// with possibly infinite endpoints.
    pub fn exterior_components(&self) -> Option<Vec<(f64, f64)>> {
        let comps = self.components()?;
        let mut out = Vec::with_capacity(comps.len() + 1);
        out.push((f64::NEG_INFINITY, comps[0].0));
        for w in comps.windows(2) {
            out.push((w[0].1, w[1].0));
        }
        out.push((comps[comps.len() - 1].1, f64::INFINITY));
        Some(out)
    }

    /// Open-set membership.
    pub fn contains(&self, x: &Point) -> bool {
        match self {
            Domain::Interval { a, b } => {
                let v = x.x();
                v > *a && v < *b
            }
            Domain::Ball { center, radius } => x.dist(center) < *radius,
            Domain::Cells { cells } => {
                let v = x.x();
                let k = cells.partition_point(|c| c.1 <= v);
                k < cells.len() && v > cells[k].0 && v < cells[k].1
            }
        }
    }

    /// `δ_D(x) = dist(x, ∂D)`.
    pub fn boundary_distance(&self, x: &Point) -> f64 {
        match self {
            Domain::Interval { a, b } => {
                let v = x.x();
                (v - a).abs().min((v - b).abs())
            }
            Domain::Ball { center, radius } => (x.dist(center) - radius).abs(),
            Domain::Cells { cells } => {
                let v = x.x();
                cells
                    .iter()
                    .map(|&(lo, hi)| (v - lo).abs().min((v - hi).abs()))
                    .fold(f64::INFINITY, f64::min)
            }
        }
    }

    /// Boundary point nearest to `x` (ties go to the left endpoint).
    pub fn nearest_boundary_point(&self, x: &Point) -> Point {
        match self {
            Domain::Ball { center, radius } => {
                let v = *x - *center;
                let n = v.norm();
                if n == 0.0 {
                    let mut c = [0.0; MAX_DIM];
                    c[0] = *radius;
                    return *center + Point::new(&c[..center.dim()]);
                }
                *center + v * (radius / n)
            }
            _ => {
                let v = x.x();
                let comps = self.components().expect("1-D domain");
                // Far points would otherwise tie in floating point.
                let lo_all = comps.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
                let hi_all = comps.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
                if v <= lo_all {
                    return Point::scalar(lo_all);
                }
                if v >= hi_all {
                    return Point::scalar(hi_all);
                }
                let mut best = comps[0].0;
                for &(lo, hi) in &comps {
                    for e in [lo, hi] {
                        if (v - e).abs() < (v - best).abs() {
                            best = e;
                        }
                    }
                }
                Point::scalar(best)
            }
        }
    }

    /// Lebesgue measure of `D`.
    pub fn measure(&self) -> f64 {
        match self {
            Domain::Interval { a, b } => b - a,
            Domain::Ball { center, radius } => {
                crate::special::ball_volume(center.dim()) * radius.powi(center.dim() as i32)
            }
            Domain::Cells { cells } => cells.iter().map(|(lo, hi)| hi - lo).sum(),
        }
    }

    /// Axis-aligned bounding box `(lower, upper)`.
    pub fn bounding_box(&self) -> (Point, Point) {
        match self {
            Domain::Interval { a, b } => (Point::scalar(*a), Point::scalar(*b)),
            Domain::Ball { center, radius } => {
                let d = center.dim();
                let r = Point::new(&vec![*radius; d]);
                (*center - r, *center + r)
            }
            Domain::Cells { cells } => (Point::scalar(cells[0].0), Point::scalar(cells[cells.len() - 1].1)),
        }
    }

    pub fn diameter(&self) -> f64 {
        let (lo, hi) = self.bounding_box();
        match self {
            Domain::Ball { radius, .. } => 2.0 * radius,
            _ => hi.x() - lo.x(),
        }
    }

    /// Largest boundary distance over `D` (the inradius).
    pub fn inradius(&self) -> f64 {
        match self {
            Domain::Interval { a, b } => 0.5 * (b - a),
            Domain::Ball { radius, .. } => *radius,
            Domain::Cells { cells } => cells.iter().map(|(lo, hi)| 0.5 * (hi - lo)).fold(0.0, f64::max),
        }
    }

    /// Exterior shell `Π_r = {x ∈ Dᶜ : δ_D(x) ≤ r}`.
    pub fn exterior_shell(&self, r: f64) -> Result<Region> {
        if !(r > 0.0) {
            return Err(Error::param("r", format!("shell radius must be positive, got {r}")));
        }
        match self {
            Domain::Ball { center, radius } => Ok(Region::Shell {
                center: *center,
                inner: *radius,
                outer: radius + r,
            }),
            _ => {
                let ext = self.exterior_components().expect("1-D domain");
                let mut parts = Vec::new();
                for (lo, hi) in ext {
                    if lo == f64::NEG_INFINITY {
                        parts.push((hi - r, hi));
                    } else if hi == f64::INFINITY {
                        parts.push((lo, lo + r));
                    } else if hi - lo <= 2.0 * r {
                        parts.push((lo, hi));
                    } else {
                        parts.push((lo, lo + r));
                        parts.push((hi - r, hi));
                    }
                }
                Ok(Region::Intervals(parts))
            }
        }
    }
}

/// A closed subset of ℝᵈ used as the target of kernels and as the domain of
/// exterior functions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Region {
    /// Union of closed intervals; endpoints may be infinite.
    Intervals(Vec<(f64, f64)>),
    Ball { center: Point, radius: f64 },
    /// `{x : inner ≤ |x − center| ≤ outer}`.
    Shell { center: Point, inner: f64, outer: f64 },
    Points(Vec<Point>),
}

impl Region {
    pub fn interval(lo: f64, hi: f64) -> Self {
        Region::Intervals(vec![(lo, hi)])
    }

    pub fn contains(&self, x: &Point) -> bool {
        match self {
            Region::Intervals(v) => {
                let t = x.x();
                v.iter().any(|&(lo, hi)| t >= lo && t <= hi)
            }
            Region::Ball { center, radius } => x.dist(center) <= *radius,
            Region::Shell { center, inner, outer } => {
                let r = x.dist(center);
                r >= *inner && r <= *outer
            }
            Region::Points(p) => p.iter().any(|q| q == x),
        }
    }

    /// Lebesgue measure of the intersection with `[lo, hi]` (1-D regions).
    pub fn overlap_1d(&self, lo: f64, hi: f64) -> f64 {
        match self {
            Region::Intervals(v) => v.iter().map(|&(a, b)| (b.min(hi) - a.max(lo)).max(0.0)).sum(),
            _ => 0.0,
        }
    }

    /// `ν(x, region)` for a 1-D region not meeting an open neighbourhood of
    /// `x`; infinite if `x` lies inside an interval.
    pub fn nu_mass(&self, params: &StableParams, x: f64) -> f64 {
        match self {
            Region::Intervals(v) => v.iter().map(|&(a, b)| params.levy_mass_1d(x, a, b)).sum(),
            Region::Points(_) => 0.0,
            _ => f64::NAN,
        }
    }

    /// Whether the region avoids the open set `D`.
    pub fn is_exterior_to(&self, domain: &Domain) -> bool {
        match self {
            Region::Intervals(v) => {
                let comps = match domain.components() {
                    Some(c) => c,
                    None => return false,
                };
                v.iter()
                    .all(|&(a, b)| comps.iter().all(|&(lo, hi)| b <= lo || a >= hi))
            }
            Region::Shell { center, inner, .. } => match domain {
                Domain::Ball { center: c, radius } => {
                    let off = center.dist(c);
                    *inner >= off + radius
                }
                _ => false,
            },
            Region::Ball { center, radius } => match domain {
                Domain::Ball { center: c, radius: r } => center.dist(c) >= radius + r,
                _ => false,
            },
            Region::Points(p) => p.iter().all(|q| !domain.contains(q)),
        }
    }
}

/// Uniform grid over a 1-D domain: every cell has width `h = |D| / n`.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    domain: Domain,
    cells: Vec<(f64, f64)>,
    nodes: Vec<f64>,
    /// First cell index of each component, plus a final sentinel.
    offsets: Vec<usize>,
    h: f64,
}

impl Grid {
    /// Builds the uniform grid with `n_cells` cells.
    ///
    /// For several components each component length must be an integer
    /// multiple of the common width, which keeps the discrete generator
    /// symmetric.
    pub fn build(domain: &Domain, n_cells: usize) -> Result<Arc<Grid>> {
        if n_cells == 0 {
            return Err(Error::param("n_cells", "must be positive"));
        }
        let comps = domain
            .components()
            .ok_or_else(|| Error::Geometry("grid numerics are one-dimensional only".into()))?;
        let h = domain.measure() / n_cells as f64;
        let mut cells = Vec::with_capacity(n_cells);
        let mut offsets = Vec::with_capacity(comps.len() + 1);
        for &(lo, hi) in &comps {
            let len = hi - lo;
            let k = (len / h).round();
            if k < 1.0 || (k * h - len).abs() > GRID_FIT_TOL * len {
                return Err(Error::Geometry(format!(
                    "component ({lo}, {hi}) of length {len} is not an integer multiple of the grid width {h}"
                )));
            }
            offsets.push(cells.len());
            let k = k as usize;
            for i in 0..k {
                let a = lo + len * i as f64 / k as f64;
                let b = if i + 1 == k { hi } else { lo + len * (i + 1) as f64 / k as f64 };
                cells.push((a, b));
            }
        }
        offsets.push(cells.len());
        if cells.len() != n_cells {
            return Err(Error::Geometry(format!(
                "component lengths produce {} cells instead of {n_cells}",
                cells.len()
            )));
        }
        let nodes = cells.iter().map(|(a, b)| 0.5 * (a + b)).collect();
        Ok(Arc::new(Grid {
            domain: domain.clone(),
            cells,
            nodes,
            offsets,
            h,
        }))
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    #[inline]
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn cells(&self) -> &[(f64, f64)] {
        &self.cells
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    #[inline]
    pub fn node(&self, i: usize) -> f64 {
        self.nodes[i]
    }

    #[inline]
    pub fn width(&self, i: usize) -> f64 {
        self.cells[i].1 - self.cells[i].0
    }

    /// Index ranges of the cells of each component.
    pub fn component_ranges(&self) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        self.offsets.windows(2).map(|w| w[0]..w[1])
    }

    /// Index of the cell containing `x`; cells are half-open `[lo, hi)`,
    /// except the last cell of a component which is closed on the right.
    pub fn locate(&self, x: f64) -> Option<usize> {
        for r in self.component_ranges() {
            let (lo, _) = self.cells[r.start];
            let (_, hi) = self.cells[r.end - 1];
            if x >= lo && x <= hi {
                let k = ((x - lo) / self.h).floor() as isize;
                let k = k.clamp(0, (r.len() - 1) as isize) as usize;
                return Some(r.start + k);
            }
        }
        None
    }

    /// Boundary distance of every node.
    pub fn boundary_distances(&self) -> Vec<f64> {
        self.nodes
            .iter()
            .map(|&x| self.domain.boundary_distance(&Point::scalar(x)))
            .collect()
    }

    /// Index of the node closest to `x`.
    pub fn nearest_node(&self, x: f64) -> usize {
        let mut best = 0;
        for (i, &v) in self.nodes.iter().enumerate() {
            if (v - x).abs() < (self.nodes[best] - x).abs() {
                best = i;
            }
        }
        best
    }
}

/// Convenience wrapper for [`Grid::build`].
pub fn build_grid(domain: &Domain, n_cells: usize) -> Result<Arc<Grid>> {
    Grid::build(domain, n_cells)
}

/// Killing intensity `κ_D(x) = ν(x, Dᶜ)` of a 1-D domain, from the closed
/// antiderivative.
pub fn killing_intensity(params: &StableParams, domain: &Domain, x: f64) -> Result<f64> {
    let ext = domain
        .exterior_components()
        .ok_or_else(|| Error::Geometry("killing intensity is computed for 1-D domains".into()))?;
    if !domain.contains(&Point::scalar(x)) {
        return Err(Error::OutsideRegion {
            point: x.to_string(),
            what: "domain",
        });
    }
    Ok(ext.iter().map(|&(lo, hi)| params.levy_mass_1d(x, lo, hi)).sum())
}

/// `∫_{Dᶜ} ν(x, z) g(z) dz` for a 1-D domain and a bounded `g`, by
/// composite Gauss rules on geometrically graded panels. Beyond the point
/// where the remaining Lévy mass drops below [`EXTERIOR_TAIL_MASS`] the
/// integrand is closed analytically with `g` frozen at the cutoff.
pub fn exterior_integral(
    params: &StableParams,
    domain: &Domain,
    x: f64,
    mut g: impl FnMut(f64) -> f64,
) -> Result<f64> {
    let ext = domain
        .exterior_components()
        .ok_or_else(|| Error::Geometry("exterior quadrature is one-dimensional".into()))?;
    let rule = GaussRule::new(EXTERIOR_GAUSS_ORDER);
    let c = params.c_levy();
    let p = 1.0 + params.alpha();
    let a = params.alpha();
    let dens = |z: f64| c * (z - x).abs().powf(-p);
    let cutoff = (c / (a * EXTERIOR_TAIL_MASS)).powf(1.0 / a);
    let mut total = 0.0;
    for (lo, hi) in ext {
        if lo < x && x < hi {
            return Err(Error::OutsideRegion {
                point: x.to_string(),
                what: "domain",
            });
        }
        // Orient each exterior component away from x: s ≥ 0 measures the
        // distance past the near endpoint.
        let (near, dir, len) = if hi <= x {
            (hi, -1.0, hi - lo)
        } else {
            (lo, 1.0, hi - lo)
        };
        let d0 = (near - x).abs();
        if d0 == 0.0 {
            return Err(Error::OutsideRegion {
                point: x.to_string(),
                what: "domain interior",
            });
        }
        let mut s0 = 0.0;
        let mut step = 0.5 * d0;
        loop {
            let s1 = (s0 + step).min(len);
            let reach = d0 + s1;
            total += rule.integrate(s0, s1, |s| {
                let z = near + dir * s;
                dens(z) * g(z)
            });
            if s1 >= len {
                break;
            }
            if reach >= cutoff {
                let z = near + dir * s1;
                let far = if len.is_finite() { d0 + len } else { f64::INFINITY };
                total += g(z) * (c / a) * (reach.powf(-a) - far.powf(-a));
                break;
            }
            s0 = s1;
            step = reach;
        }
    }
    Ok(total)
}

/// Default exterior probe points: along every outward direction from each
/// boundary point, at distances `10^k`, `k = -6..=6`, kept in `Dᶜ`.
pub fn default_probes(domain: &Domain) -> Vec<Point> {
    let dists: Vec<f64> = (-6..=6).map(|k| 10f64.powi(k)).collect();
    let mut out = Vec::new();
    match domain {
        Domain::Ball { center, radius } => {
            let d = center.dim();
            for axis in 0..d {
                for sign in [-1.0, 1.0] {
                    let mut c = [0.0; MAX_DIM];
                    c[axis] = sign;
                    let u = Point::new(&c[..d]);
                    for &s in &dists {
                        out.push(*center + u * (radius + s));
                    }
                }
            }
        }
        _ => {
            let ext = domain.exterior_components().expect("1-D domain");
            for (lo, hi) in ext {
                for &s in &dists {
                    if lo.is_finite() && lo + s <= hi {
                        out.push(Point::scalar(lo + s));
                    }
                    if hi.is_finite() && hi - s >= lo {
                        out.push(Point::scalar(hi - s));
                    }
                }
                if lo.is_finite() && hi.is_finite() {
                    out.push(Point::scalar(0.5 * (lo + hi)));
                }
            }
        }
    }
    out
}
