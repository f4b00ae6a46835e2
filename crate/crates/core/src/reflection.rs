//! Reflection kernels `μ(z, ·)` from `Dᶜ` back into `D`, and the check of the
//! minorization condition `inf_z μ(z, H) ≥ ϑ > 0` on a compact `H ⊂ D`.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{default_probes, Domain, Grid};
use crate::point::Point;
use crate::stable::uniform_direction;

pub use crate::geometry::Region;

/// Normalization tolerance for entry laws.
pub const NORMALIZATION_TOL: f64 = 1e-10;

/// Slack when comparing the measured minorization constant to the witness.
pub const THETA_SLACK: f64 = 1e-9;

/// A probability measure on `D`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EntryLaw {
    /// Uniform on a union of 1-D intervals.
    Uniform { intervals: Vec<(f64, f64)> },
    /// Uniform on a ball.
    UniformBall { center: Point, radius: f64 },
    /// Finite atomic measure.
    Atoms { points: Vec<Point>, weights: Vec<f64> },
    /// Piecewise-constant density on consecutive bins `[edges[k], edges[k+1]]`
    /// with the given masses.
    Density { edges: Vec<f64>, masses: Vec<f64> },
}

impl EntryLaw {
    pub fn uniform(lo: f64, hi: f64) -> Self {
        EntryLaw::Uniform {
            intervals: vec![(lo, hi)],
        }
    }

    pub fn dirac(x: Point) -> Self {
        EntryLaw::Atoms {
            points: vec![x],
            weights: vec![1.0],
        }
    }

    /// Checks normalization and that the law lives on `D`.
    pub fn validate(&self, domain: &Domain) -> Result<()> {
        let closure_ok = |lo: f64, hi: f64| {
            domain
                .components()
                .map(|c| c.iter().any(|&(a, b)| lo >= a && hi <= b))
                .unwrap_or(false)
        };
        match self {
            EntryLaw::Uniform { intervals } => {
                if intervals.is_empty() {
                    return Err(Error::Kernel("uniform law needs at least one interval".into()));
                }
                for &(lo, hi) in intervals {
                    if !(lo < hi) {
                        return Err(Error::Kernel(format!("interval ({lo}, {hi}) must have positive length")));
                    }
                    if !closure_ok(lo, hi) {
                        return Err(Error::Kernel(format!("interval [{lo}, {hi}] is not contained in D")));
                    }
                }
                let mut s = intervals.clone();
                s.sort_by(|p, q| p.0.total_cmp(&q.0));
                if s.windows(2).any(|w| w[1].0 < w[0].1) {
                    return Err(Error::Kernel("uniform law intervals must not overlap".into()));
                }
            }
            EntryLaw::UniformBall { center, radius } => {
                if !(*radius > 0.0) || center.dim() != domain.dim() {
                    return Err(Error::Kernel("uniform ball law needs a positive radius and matching dimension".into()));
                }
                match domain {
                    Domain::Ball { center: c, radius: r } if center.dist(c) + radius <= *r => {}
                    _ => return Err(Error::Kernel("uniform ball law must lie in a ball domain".into())),
                }
            }
            EntryLaw::Atoms { points, weights } => {
                if points.is_empty() || points.len() != weights.len() {
                    return Err(Error::Kernel("atoms need matching, nonempty point and weight lists".into()));
                }
                if weights.iter().any(|w| !(*w >= 0.0)) {
                    return Err(Error::Kernel("atom weights must be nonnegative".into()));
                }
                let s: f64 = weights.iter().sum();
                if (s - 1.0).abs() > NORMALIZATION_TOL {
                    return Err(Error::Kernel(format!("atom weights sum to {s}, not 1")));
                }
                for p in points {
                    if !domain.contains(p) {
                        return Err(Error::Kernel(format!("atom {p} is not in D")));
                    }
                }
            }
            EntryLaw::Density { edges, masses } => {
                if edges.len() != masses.len() + 1 || masses.is_empty() {
                    return Err(Error::Kernel("density needs one more edge than masses".into()));
                }
                if edges.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(Error::Kernel("density edges must increase".into()));
                }
                if masses.iter().any(|m| !(*m >= 0.0)) {
                    return Err(Error::Kernel("density masses must be nonnegative".into()));
                }
                let s: f64 = masses.iter().sum();
                if (s - 1.0).abs() > NORMALIZATION_TOL {
                    return Err(Error::Kernel(format!("density masses sum to {s}, not 1")));
                }
                for (k, m) in masses.iter().enumerate() {
                    if *m > 0.0 && !closure_ok(edges[k], edges[k + 1]) {
                        return Err(Error::Kernel(format!(
                            "bin [{}, {}] carries mass outside D",
                            edges[k],
                            edges[k + 1]
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Total mass, which is one for a validated law.
    pub fn total_mass(&self) -> f64 {
        match self {
            EntryLaw::Atoms { weights, .. } => weights.iter().sum(),
            EntryLaw::Density { masses, .. } => masses.iter().sum(),
            _ => 1.0,
        }
    }

    /// Mass of a closed region.
    pub fn mass(&self, region: &Region) -> Result<f64> {
        match (self, region) {
            (EntryLaw::Atoms { points, weights }, r) => Ok(points
                .iter()
                .zip(weights)
                .filter(|(p, _)| r.contains(p))
                .map(|(_, w)| w)
                .sum()),
            (EntryLaw::Uniform { intervals }, r) => {
                let total: f64 = intervals.iter().map(|(a, b)| b - a).sum();
                match r {
                    Region::Points(_) => Ok(0.0),
                    Region::Intervals(_) => Ok(intervals.iter().map(|&(a, b)| r.overlap_1d(a, b)).sum::<f64>() / total),
                    _ => Err(Error::Kernel("uniform 1-D law evaluated on a non-interval region".into())),
                }
            }
            (EntryLaw::Density { edges, masses }, r) => match r {
                Region::Points(_) => Ok(0.0),
                Region::Intervals(_) => Ok(masses
                    .iter()
                    .enumerate()
                    .filter(|(_, m)| **m > 0.0)
                    .map(|(k, m)| m * r.overlap_1d(edges[k], edges[k + 1]) / (edges[k + 1] - edges[k]))
                    .sum()),
                _ => Err(Error::Kernel("density law evaluated on a non-interval region".into())),
            },
            (EntryLaw::UniformBall { center, radius }, r) => {
                let d = center.dim() as i32;
                match r {
                    Region::Points(_) => Ok(0.0),
                    Region::Ball { center: c, radius: s } if c == center => Ok((s.min(*radius) / radius).powi(d)),
                    Region::Shell { center: c, inner, outer } if c == center => {
                        let o = outer.min(*radius) / radius;
                        let i = inner.min(*radius) / radius;
                        Ok((o.powi(d) - i.powi(d)).max(0.0))
                    }
                    _ => Err(Error::Kernel("uniform ball law is evaluated on concentric regions only".into())),
                }
            }
        }
    }

    /// Masses of the cells of a grid; atoms are assigned to the cell that
    /// [`Grid::locate`] reports.
    pub fn cell_masses(&self, grid: &Grid) -> Result<Vec<f64>> {
        let n = grid.len();
        let mut out = vec![0.0; n];
        match self {
            EntryLaw::Atoms { points, weights } => {
                for (p, w) in points.iter().zip(weights) {
                    let i = grid
                        .locate(p.x())
                        .ok_or_else(|| Error::Kernel(format!("atom {p} lies outside the grid")))?;
                    out[i] += w;
                }
            }
            EntryLaw::Uniform { intervals } => {
                let total: f64 = intervals.iter().map(|(a, b)| b - a).sum();
                for (i, &(lo, hi)) in grid.cells().iter().enumerate() {
                    out[i] = intervals
                        .iter()
                        .map(|&(a, b)| (b.min(hi) - a.max(lo)).max(0.0))
                        .sum::<f64>()
                        / total;
                }
            }
            EntryLaw::Density { edges, masses } => {
                for (i, &(lo, hi)) in grid.cells().iter().enumerate() {
                    out[i] = masses
                        .iter()
                        .enumerate()
                        .filter(|(_, m)| **m > 0.0)
                        .map(|(k, m)| {
                            let (a, b) = (edges[k], edges[k + 1]);
                            m * (b.min(hi) - a.max(lo)).max(0.0) / (b - a)
                        })
                        .sum();
                }
            }
            EntryLaw::UniformBall { .. } => {
                return Err(Error::Kernel("grid cell masses are one-dimensional".into()));
            }
        }
        Ok(out)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        match self {
            EntryLaw::Uniform { intervals } => {
                let total: f64 = intervals.iter().map(|(a, b)| b - a).sum();
                let mut u = rng.random::<f64>() * total;
                for &(a, b) in intervals {
                    let len = b - a;
                    if u < len {
                        return Point::scalar(a + u);
                    }
                    u -= len;
                }
                let (a, b) = intervals[intervals.len() - 1];
                Point::scalar(a + rng.random::<f64>() * (b - a))
            }
            EntryLaw::UniformBall { center, radius } => {
                let d = center.dim();
                let dir = uniform_direction(d, rng);
                let r = radius * rng.random::<f64>().powf(1.0 / d as f64);
                *center + dir * r
            }
            EntryLaw::Atoms { points, weights } => {
                if points.len() == 1 {
                    return points[0];
                }
                let total: f64 = weights.iter().sum();
                let mut u = rng.random::<f64>() * total;
                for (p, w) in points.iter().zip(weights) {
                    if u < *w {
                        return *p;
                    }
                    u -= w;
                }
                points[points.len() - 1]
            }
            EntryLaw::Density { edges, masses } => {
                let total: f64 = masses.iter().sum();
                let mut u = rng.random::<f64>() * total;
                let mut k = masses.len() - 1;
                for (j, m) in masses.iter().enumerate() {
                    if u < *m {
                        k = j;
                        break;
                    }
                    u -= m;
                }
                while masses[k] <= 0.0 && k > 0 {
                    k -= 1;
                }
                let (a, b) = (edges[k], edges[k + 1]);
                Point::scalar(a + rng.random::<f64>() * (b - a))
            }
        }
    }

    /// A compact subset carrying at least half of the mass, and its mass.
    fn witness(&self) -> (Region, f64) {
        match self {
            EntryLaw::Atoms { points, weights } => (Region::Points(points.clone()), weights.iter().sum()),
            EntryLaw::Uniform { intervals } => {
                let h = intervals
                    .iter()
                    .map(|&(a, b)| {
                        let q = 0.25 * (b - a);
                        (a + q, b - q)
                    })
                    .collect();
                (Region::Intervals(h), 0.5)
            }
            EntryLaw::Density { edges, masses } => {
                let h = masses
                    .iter()
                    .enumerate()
                    .filter(|(_, m)| **m > 0.0)
                    .map(|(k, _)| {
                        let q = 0.25 * (edges[k + 1] - edges[k]);
                        (edges[k] + q, edges[k + 1] - q)
                    })
                    .collect();
                (Region::Intervals(h), 0.5)
            }
            EntryLaw::UniformBall { center, radius } => {
                let d = center.dim() as f64;
                (
                    Region::Ball {
                        center: *center,
                        radius: radius * 0.5f64.powf(1.0 / d),
                    },
                    0.5,
                )
            }
        }
    }
}

/// User-supplied reflection kernel. The minorization tail argument for such
/// a kernel is the implementer's obligation.
pub trait ReentryKernel: Send + Sync + fmt::Debug {
    /// The entry law `μ(z, ·)` for an exterior point `z`.
    fn law(&self, z: &Point) -> EntryLaw;
}

#[derive(Clone, Debug)]
pub enum KernelFamily {
    /// `μ(z, ·) = m` for every `z`.
    Constant(EntryLaw),
    /// Uniform insertion on an interval of length `width` centered `depth`
    /// inward from the boundary point nearest to `z`.
    Projection { depth: f64, width: f64 },
    Custom(Arc<dyn ReentryKernel>),
}

/// A reflection kernel together with its minorization witness `(H, ϑ)`.
#[derive(Clone, Debug)]
pub struct ReflectionKernel {
    domain: Domain,
    family: KernelFamily,
    witness: Region,
    theta: f64,
}

/// Outcome of a minorization check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HypothesisReport {
    pub theta_hat: f64,
    pub witness_theta: f64,
    pub witness: Region,
    pub probes: usize,
    pub argmin: Point,
}

/// `μ(z, ·) = m` for all `z`.
pub fn make_constant_kernel(domain: &Domain, m: EntryLaw) -> Result<ReflectionKernel> {
    m.validate(domain)?;
    let (witness, theta) = m.witness();
    Ok(ReflectionKernel {
        domain: domain.clone(),
        family: KernelFamily::Constant(m),
        witness,
        theta,
    })
}

/// `μ(z, ·) = δ_{x0}`.
pub fn make_dirac_kernel(domain: &Domain, x0: Point) -> Result<ReflectionKernel> {
    make_constant_kernel(domain, EntryLaw::dirac(x0))
}

/// The projection family on a one-dimensional domain.
///
/// Requires `width/4 < depth` and `depth + width/2` below half the length of
/// the shortest component, so that the insertion interval stays inside the
/// component and contains the witness band at boundary distance
/// `[depth − width/4, depth + width/4]`.
pub fn make_projection_kernel(domain: &Domain, depth: f64, width: f64) -> Result<ReflectionKernel> {
    let comps = domain
        .components()
        .ok_or_else(|| Error::Kernel("the projection kernel is defined for one-dimensional domains".into()))?;
    if !(depth > 0.0 && width > 0.0 && depth.is_finite() && width.is_finite()) {
        return Err(Error::Kernel(format!(
            "projection depth and width must be positive, got depth {depth}, width {width}"
        )));
    }
    if depth <= 0.25 * width {
        return Err(Error::Kernel(format!(
            "projection depth {depth} must exceed width/4 = {}",
            0.25 * width
        )));
    }
    let min_len = comps.iter().map(|(a, b)| b - a).fold(f64::INFINITY, f64::min);
    if depth + 0.5 * width >= 0.5 * min_len {
        return Err(Error::Kernel(format!(
            "projection depth + width/2 = {} must be below half the shortest component length {}",
            depth + 0.5 * width,
            0.5 * min_len
        )));
    }
    let q = 0.25 * width;
    let mut h = Vec::with_capacity(2 * comps.len());
    for &(a, b) in &comps {
        h.push((a + depth - q, a + depth + q));
        h.push((b - depth - q, b - depth + q));
    }
    let mut k = ReflectionKernel {
        domain: domain.clone(),
        family: KernelFamily::Projection { depth, width },
        witness: Region::Intervals(h),
        theta: 0.0,
    };
    let probes = default_probes(domain);
    let (theta, _) = k.min_witness_mass(&probes)?;
    k.theta = theta;
    Ok(k)
}

/// A kernel given by a user implementation, with a user-supplied witness.
pub fn make_custom_kernel(
    domain: &Domain,
    kernel: Arc<dyn ReentryKernel>,
    witness: Region,
    theta: f64,
) -> Result<ReflectionKernel> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::Kernel(format!("witness theta must lie in (0, 1], got {theta}")));
    }
    Ok(ReflectionKernel {
        domain: domain.clone(),
        family: KernelFamily::Custom(kernel),
        witness,
        theta,
    })
}

impl ReflectionKernel {
    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn family(&self) -> &KernelFamily {
        &self.family
    }

    pub fn witness(&self) -> &Region {
        &self.witness
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn name(&self) -> &'static str {
        match &self.family {
            KernelFamily::Constant(EntryLaw::Atoms { points, .. }) if points.len() == 1 => "dirac",
            KernelFamily::Constant(_) => "constant",
            KernelFamily::Projection { .. } => "projection",
            KernelFamily::Custom(_) => "custom",
        }
    }

    /// Whether `μ(z, ·)` does not depend on `z`.
    pub fn is_constant(&self) -> bool {
        matches!(self.family, KernelFamily::Constant(_))
    }

    fn check_exterior(&self, z: &Point) -> Result<()> {
        if self.domain.contains(z) || !z.is_finite() {
            return Err(Error::OutsideRegion {
                point: z.to_string(),
                what: "complement of D",
            });
        }
        Ok(())
    }

    fn projection_interval(&self, z: &Point, depth: f64, width: f64) -> (f64, f64) {
        let e = self.domain.nearest_boundary_point(z).x();
        let comps = self.domain.components().expect("1-D domain");
        let inward = if z.x() < e {
            1.0
        } else if z.x() > e {
            -1.0
        } else if comps.iter().any(|&(a, _)| a == e) {
            1.0
        } else {
            -1.0
        };
        let c = e + inward * depth;
        let (a, b) = comps
            .iter()
            .copied()
            .find(|&(a, b)| c > a && c < b)
            .expect("projection center lies inside a component");
        ((c - 0.5 * width).max(a), (c + 0.5 * width).min(b))
    }

    /// The entry law `μ(z, ·)`.
    pub fn law(&self, z: &Point) -> Result<EntryLaw> {
        self.check_exterior(z)?;
        Ok(match &self.family {
            KernelFamily::Constant(m) => m.clone(),
            KernelFamily::Projection { depth, width } => {
                let (lo, hi) = self.projection_interval(z, *depth, *width);
                EntryLaw::uniform(lo, hi)
            }
            KernelFamily::Custom(k) => k.law(z),
        })
    }

    /// `μ(z, A)` for a closed region `A`.
    pub fn mass(&self, z: &Point, region: &Region) -> Result<f64> {
        self.law(z)?.mass(region)
    }

    pub fn cell_masses(&self, z: &Point, grid: &Grid) -> Result<Vec<f64>> {
        self.law(z)?.cell_masses(grid)
    }

    /// Draws an entry point from `μ(z, ·)`.
    pub fn sample<R: Rng + ?Sized>(&self, z: &Point, rng: &mut R) -> Result<Point> {
        match &self.family {
            KernelFamily::Constant(m) => {
                self.check_exterior(z)?;
                Ok(m.sample(rng))
            }
            KernelFamily::Projection { depth, width } => {
                self.check_exterior(z)?;
                let (lo, hi) = self.projection_interval(z, *depth, *width);
                Ok(Point::scalar(lo + rng.random::<f64>() * (hi - lo)))
            }
            KernelFamily::Custom(_) => Ok(self.law(z)?.sample(rng)),
        }
    }

    /// Partition of `Dᶜ` into closed pieces on each of which `μ(z, ·)` is
    /// constant, with the common law. `None` for user kernels.
    pub fn exterior_classes(&self) -> Option<Vec<(Region, EntryLaw)>> {
        match &self.family {
            KernelFamily::Constant(m) => {
                let ext = self.domain.exterior_components()?;
                Some(vec![(Region::Intervals(ext), m.clone())])
            }
            KernelFamily::Projection { .. } => {
                let ext = self.domain.exterior_components()?;
                let mut out = Vec::with_capacity(2 * ext.len());
                for (lo, hi) in ext {
                    let mid = if lo.is_finite() && hi.is_finite() { 0.5 * (lo + hi) } else { f64::NAN };
                    if lo.is_finite() {
                        let end = if hi.is_finite() { mid } else { f64::INFINITY };
                        let z = Point::scalar(lo);
                        out.push((Region::interval(lo, end), self.law(&z).ok()?));
                    }
                    if hi.is_finite() {
                        let start = if lo.is_finite() { mid } else { f64::NEG_INFINITY };
                        let z = Point::scalar(hi);
                        out.push((Region::interval(start, hi), self.law(&z).ok()?));
                    }
                }
                Some(out)
            }
            KernelFamily::Custom(_) => None,
        }
    }

    fn min_witness_mass(&self, probes: &[Point]) -> Result<(f64, Point)> {
        let mut best = (f64::INFINITY, probes[0]);
        for z in probes {
            let m = self.mass(z, &self.witness)?;
            if m < best.0 {
                best = (m, *z);
            }
        }
        Ok(best)
    }
}

/// Measures `ϑ̂ = min_z μ(z, H)` over the probes and compares it with the
/// kernel's witness constant.
pub fn validate_hypothesis1(kernel: &ReflectionKernel, probes: &[Point]) -> Result<HypothesisReport> {
    if probes.is_empty() {
        return Err(Error::param("probes", "at least one exterior probe is required"));
    }
    let mut violating = Vec::new();
    let mut theta_hat = f64::INFINITY;
    let mut argmin = probes[0];
    for z in probes {
        let m = kernel.mass(z, kernel.witness())?;
        if m < theta_hat {
            theta_hat = m;
            argmin = *z;
        }
        if m < kernel.theta() - THETA_SLACK {
            violating.push(z.to_string());
        }
    }
    if !violating.is_empty() {
        return Err(Error::HypothesisViolated {
            theta_hat,
            witness: kernel.theta(),
            violating,
        });
    }
    Ok(HypothesisReport {
        theta_hat,
        witness_theta: kernel.theta(),
        witness: kernel.witness().clone(),
        probes: probes.len(),
        argmin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn unit() -> Domain {
        Domain::interval(-1.0, 1.0).unwrap()
    }

    #[test]
    fn constant_uniform_kernel() {
        let k = make_constant_kernel(&unit(), EntryLaw::uniform(-0.5, 0.5)).unwrap();
        for z in [-7.0, -1.0, 1.0, 3.5] {
            let m = k.mass(&Point::scalar(z), &Region::interval(0.0, 0.5)).unwrap();
            assert!((m - 0.5).abs() < 1e-15);
        }
        assert_eq!(k.theta(), 0.5);
        assert!(k.mass(&Point::scalar(0.0), &Region::interval(0.0, 0.5)).is_err());
    }

    #[test]
    fn dirac_kernel() {
        let k = make_dirac_kernel(&unit(), Point::scalar(0.3)).unwrap();
        let m = k.mass(&Point::scalar(2.0), &Region::Points(vec![Point::scalar(0.3)])).unwrap();
        assert_eq!(m, 1.0);
        assert_eq!(k.theta(), 1.0);
        assert_eq!(k.name(), "dirac");
        assert!(make_dirac_kernel(&unit(), Point::scalar(1.0)).is_err());
    }

    #[test]
    fn unnormalized_law_rejected() {
        let bad = EntryLaw::Atoms {
            points: vec![Point::scalar(0.0), Point::scalar(0.5)],
            weights: vec![0.5, 0.4],
        };
        assert!(make_constant_kernel(&unit(), bad).is_err());
        let outside = EntryLaw::uniform(0.5, 1.5);
        assert!(make_constant_kernel(&unit(), outside).is_err());
    }

    #[test]
    fn projection_examples() {
        let k = make_projection_kernel(&unit(), 0.3, 0.2).unwrap();
        let l = k.law(&Point::scalar(2.0)).unwrap();
        match l {
            EntryLaw::Uniform { intervals } => {
                assert!((intervals[0].0 - 0.6).abs() < 1e-15 && (intervals[0].1 - 0.8).abs() < 1e-15)
            }
            _ => panic!("expected a uniform law"),
        }
        match k.law(&Point::scalar(-5.0)).unwrap() {
            EntryLaw::Uniform { intervals } => {
                assert!((intervals[0].0 + 0.8).abs() < 1e-15 && (intervals[0].1 + 0.6).abs() < 1e-15)
            }
            _ => panic!("expected a uniform law"),
        }
        assert!((k.theta() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn projection_preconditions() {
        assert!(make_projection_kernel(&unit(), 0.04, 0.2).is_err());
        assert!(make_projection_kernel(&unit(), 0.92, 0.2).is_err());
        assert!(make_projection_kernel(&unit(), 0.3, -0.2).is_err());
        let b = Domain::ball(Point::new(&[0.0, 0.0]), 1.0).unwrap();
        assert!(make_projection_kernel(&b, 0.3, 0.2).is_err());
    }

    #[test]
    fn hypothesis_check_on_probe_set() {
        let k = make_projection_kernel(&unit(), 0.3, 0.2).unwrap();
        let probes: Vec<Point> = [-10.0, -1.5, -1.01, 1.01, 1.5, 10.0].iter().map(|&z| Point::scalar(z)).collect();
        let r = validate_hypothesis1(&k, &probes).unwrap();
        let direct = probes
            .iter()
            .map(|z| k.mass(z, k.witness()).unwrap())
            .fold(f64::INFINITY, f64::min);
        assert_eq!(r.theta_hat, direct);
        let d = make_dirac_kernel(&unit(), Point::scalar(-0.2)).unwrap();
        assert_eq!(validate_hypothesis1(&d, &probes).unwrap().theta_hat, 1.0);
        assert!(validate_hypothesis1(&d, &[]).is_err());
    }

    #[test]
    fn violated_witness_is_reported() {
        #[derive(Debug)]
        struct Leaky;
        impl ReentryKernel for Leaky {
            fn law(&self, z: &Point) -> EntryLaw {
                if z.x().abs() > 5.0 {
                    EntryLaw::uniform(-0.9, -0.8)
                } else {
                    EntryLaw::uniform(-0.1, 0.1)
                }
            }
        }
        let k = make_custom_kernel(&unit(), Arc::new(Leaky), Region::interval(-0.05, 0.05), 0.5).unwrap();
        let probes = default_probes(&unit());
        match validate_hypothesis1(&k, &probes) {
            Err(Error::HypothesisViolated { theta_hat, violating, .. }) => {
                assert_eq!(theta_hat, 0.0);
                assert!(!violating.is_empty());
            }
            other => panic!("expected a violation, got {other:?}"),
        }
    }

    #[test]
    fn classes_reproduce_the_kernel() {
        let d = Domain::cells(vec![(-1.0, -0.2), (0.2, 1.0)]).unwrap();
        let k = make_projection_kernel(&d, 0.15, 0.2).unwrap();
        let classes = k.exterior_classes().unwrap();
        assert_eq!(classes.len(), 4);
        for z in default_probes(&d) {
            let law = k.law(&z).unwrap();
            let matching: Vec<_> = classes.iter().filter(|(r, _)| r.contains(&z)).collect();
            assert!(!matching.is_empty());
            assert!(matching.iter().any(|(_, l)| *l == law), "z = {z}");
        }
    }

    #[test]
    fn sampler_stays_in_domain() {
        let k = make_projection_kernel(&unit(), 0.3, 0.2).unwrap();
        let mut rng = stream(3, 0, 0);
        for z in [-3.0, -1.0, 1.0, 1.2] {
            for _ in 0..1000 {
                let x = k.sample(&Point::scalar(z), &mut rng).unwrap();
                assert!(unit().contains(&x));
                assert!(x.x().abs() >= 0.6 && x.x().abs() <= 0.8);
            }
        }
    }
}
