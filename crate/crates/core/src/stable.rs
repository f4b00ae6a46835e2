//! Parameters of the isotropic α-stable process, its Lévy kernel, and exact
//! samplers for increments and ball exit positions.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::point::{Point, MAX_DIM};
use crate::special::{gamma, sphere_area};

/// Walk-on-spheres iteration cap; exceeding it indicates a geometry bug.
pub const MAX_SPHERE_STEPS: usize = 1_000_000;

/// Dimension, stability index and the Lévy-kernel constant `c_{d,α}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct StableParams {
    d: usize,
    alpha: f64,
    c_levy: f64,
}

#[derive(Serialize, Deserialize)]
struct RawParams {
    d: usize,
    alpha: f64,
}

impl TryFrom<RawParams> for StableParams {
    type Error = Error;
    fn try_from(raw: RawParams) -> Result<Self> {
        StableParams::new(raw.d, raw.alpha)
    }
}

impl From<StableParams> for RawParams {
    fn from(p: StableParams) -> Self {
        RawParams {
            d: p.d,
            alpha: p.alpha,
        }
    }
}

impl StableParams {
    pub fn new(d: usize, alpha: f64) -> Result<Self> {
        let c_levy = levy_constant(d, alpha)?;
        Ok(StableParams { d, alpha, c_levy })
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `c_{d,α}`.
    #[inline]
    pub fn c_levy(&self) -> f64 {
        self.c_levy
    }

    /// Density of the Lévy kernel, `c_{d,α} |x - y|^{-d-α}`.
    pub fn levy_density(&self, x: &Point, y: &Point) -> Result<f64> {
        check_dim(self, x)?;
        check_dim(self, y)?;
        let r = x.dist(y);
        if r == 0.0 {
            return Err(Error::Singular);
        }
        Ok(self.c_levy * r.powf(-(self.d as f64) - self.alpha))
    }

    /// `ν(x, {y : |y - x| > ρ}) = c_{d,α} ω_d ρ^{-α} / α` with `ω_d` the
    /// area of the unit sphere.
    pub fn levy_tail_mass(&self, rho: f64) -> f64 {
        self.c_levy * sphere_area(self.d) * rho.powf(-self.alpha) / self.alpha
    }

    /// One-dimensional `ν(x, [lo, hi])` from the closed antiderivative.
    /// Infinite endpoints are allowed; the interval must not contain `x` in
    /// its interior (the mass is then infinite).
    pub fn levy_mass_1d(&self, x: f64, lo: f64, hi: f64) -> f64 {
        debug_assert_eq!(self.d, 1);
        if hi <= lo {
            return 0.0;
        }
        let a = self.alpha;
        let k = self.c_levy / a;
        if lo >= x {
            let near = lo - x;
            let far = hi - x;
            k * (near.powf(-a) - far.powf(-a))
        } else if hi <= x {
            let near = x - hi;
            let far = x - lo;
            k * (near.powf(-a) - far.powf(-a))
        } else {
            f64::INFINITY
        }
    }

    /// A standard increment: the value at time one of the process started
    /// at the origin, with `E exp(i ξ·Y_1) = exp(-|ξ|^α)`.
    pub fn sample_unit<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        if self.d == 1 {
            Point::scalar(symmetric_stable_1d(self.alpha, rng))
        } else {
            // Subordinated Brownian motion: Y_1 = sqrt(2 T) G, T positive (α/2)-stable.
            let t = positive_stable(0.5 * self.alpha, rng);
            let scale = (2.0 * t).sqrt();
            let mut c = [0.0; MAX_DIM];
            for ci in c.iter_mut().take(self.d) {
                let g: f64 = StandardNormal.sample(rng);
                *ci = scale * g;
            }
            Point::new(&c[..self.d])
        }
    }

    /// Increment over a time step `dt`: `dt^{1/α}` times a standard increment.
    pub fn sample_increment<R: Rng + ?Sized>(&self, dt: f64, rng: &mut R) -> Result<Point> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::param("dt", format!("must be positive and finite, got {dt}")));
        }
        Ok(self.sample_unit(rng) * dt.powf(1.0 / self.alpha))
    }

    /// Time-scale factor `dt^{1/α}`, for callers that sample many increments
    /// with the same step.
    #[inline]
    pub fn step_scale(&self, dt: f64) -> f64 {
        dt.powf(1.0 / self.alpha)
    }
}

/// `c_{d,α} = 2^α Γ((d+α)/2) / (π^{d/2} |Γ(-α/2)|)`.
pub fn levy_constant(d: usize, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 2.0) {
        return Err(Error::InvalidAlpha(alpha));
    }
    if d == 0 || d > MAX_DIM {
        return Err(Error::InvalidDimension(d));
    }
    let df = d as f64;
    Ok(2f64.powf(alpha) * gamma(0.5 * (df + alpha)) / (PI.powf(0.5 * df) * gamma(-0.5 * alpha).abs()))
}

fn check_dim(p: &StableParams, x: &Point) -> Result<()> {
    if x.dim() != p.d {
        return Err(Error::param(
            "point",
            format!("dimension {} does not match d = {}", x.dim(), p.d),
        ));
    }
    Ok(())
}

/// Symmetric stable variate with characteristic function `exp(-|ξ|^α)`
/// (Chambers–Mallows–Stuck; Cauchy branch at α = 1).
pub fn symmetric_stable_1d<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    let v = PI * (rng.random::<f64>() - 0.5);
    if alpha == 1.0 {
        return v.tan();
    }
    let w: f64 = Exp1.sample(rng);
    let cv = v.cos();
    (alpha * v).sin() / cv.powf(1.0 / alpha) * (((1.0 - alpha) * v).cos() / w).powf((1.0 - alpha) / alpha)
}

/// Positive stable variate with Laplace transform `exp(-s^β)`, `0 < β < 1`
/// (Kanter's representation).
pub fn positive_stable<R: Rng + ?Sized>(beta: f64, rng: &mut R) -> f64 {
    debug_assert!(beta > 0.0 && beta < 1.0);
    loop {
        let u = PI * rng.random::<f64>();
        if u == 0.0 {
            continue;
        }
        let e: f64 = Exp1.sample(rng);
        let t = (beta * u).sin() / u.sin().powf(1.0 / beta)
            * (((1.0 - beta) * u).sin() / e).powf((1.0 - beta) / beta);
        if t.is_finite() && t > 0.0 {
            return t;
        }
    }
}

/// Uniformly distributed unit vector in ℝᵈ.
pub fn uniform_direction<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Point {
    if d == 1 {
        return Point::scalar(if rng.random::<bool>() { 1.0 } else { -1.0 });
    }
    loop {
        let mut c = [0.0; MAX_DIM];
        for ci in c.iter_mut().take(d) {
            *ci = StandardNormal.sample(rng);
        }
        let p = Point::new(&c[..d]);
        let n = p.norm();
        if n > 1e-300 {
            return p * (1.0 / n);
        }
    }
}

/// Exit position from the ball `B(center, radius)` for the process started
/// at the center.
///
/// The normalized radius `s = |Y_τ - center| / radius` satisfies
/// `1 - 1/s² ~ Beta(1 - α/2, α/2)`, which is sampled exactly as a ratio of
/// gamma variates; the direction is uniform.
pub fn exit_from_center<R: Rng + ?Sized>(params: &StableParams, center: &Point, radius: f64, rng: &mut R) -> Point {
    let a = params.alpha;
    let g_far = Gamma::new(1.0 - 0.5 * a, 1.0).expect("shape in (0,1)");
    let g_near = Gamma::new(0.5 * a, 1.0).expect("shape in (0,1)");
    let s = loop {
        let g1: f64 = g_far.sample(rng);
        let g2: f64 = g_near.sample(rng);
        if g2 <= 0.0 || g1 <= 0.0 {
            continue;
        }
        let s = ((g1 + g2) / g2).sqrt();
        if s.is_finite() && s > 1.0 {
            break s;
        }
    };
    let dir = uniform_direction(params.d, rng);
    *center + dir * (radius * s)
}

/// Sample of `Y_{τ_B}` for the ball `B(center, radius)` and a start strictly
/// inside it. Off-center starts are handled by iterating exact exits from
/// the maximal ball centered at the current point.
pub fn ball_exit_position<R: Rng + ?Sized>(
    params: &StableParams,
    center: &Point,
    radius: f64,
    start: &Point,
    rng: &mut R,
) -> Result<Point> {
    check_dim(params, center)?;
    check_dim(params, start)?;
    if !(radius > 0.0) {
        return Err(Error::param("radius", format!("must be positive, got {radius}")));
    }
    let mut x = *start;
    if x.dist(center) >= radius {
        return Err(Error::OutsideRegion {
            point: x.to_string(),
            what: "open ball",
        });
    }
    for _ in 0..MAX_SPHERE_STEPS {
        let rho = radius - x.dist(center);
        if rho <= 0.0 {
            return Ok(x);
        }
        let y = exit_from_center(params, &x, rho, rng);
        if y.dist(center) >= radius {
            return Ok(y);
        }
        x = y;
    }
    Err(Error::Numerical(format!(
        "ball exit did not terminate after {MAX_SPHERE_STEPS} sphere steps"
    )))
}

/// Poisson kernel of the ball: density of `Y_{τ_B}` at `z`, `|z - c| > r`,
/// for the start `x` inside the ball.
pub fn ball_poisson_kernel(params: &StableParams, center: &Point, radius: f64, x: &Point, z: &Point) -> f64 {
    let d = params.d as f64;
    let a = params.alpha;
    let rx = x.dist(center);
    let rz = z.dist(center);
    if rx >= radius || rz <= radius {
        return 0.0;
    }
    let c = gamma(0.5 * d) * PI.powf(-0.5 * d - 1.0) * (FRAC_PI_2 * a).sin();
    c * ((radius * radius - rx * rx) / (rz * rz - radius * radius)).powf(0.5 * a) * x.dist(z).powf(-d)
}

/// Mean exit time `E^x τ_B` of the ball of radius `radius` from a start at
/// distance `offset` from the center.
pub fn ball_mean_exit_time(params: &StableParams, radius: f64, offset: f64) -> Result<f64> {
    if !(radius > 0.0) {
        return Err(Error::param("radius", format!("must be positive, got {radius}")));
    }
    if !(offset >= 0.0 && offset < radius) {
        return Err(Error::OutsideRegion {
            point: format!("|x - center| = {offset}"),
            what: "open ball",
        });
    }
    let d = params.d as f64;
    let a = params.alpha;
    Ok(gamma(0.5 * d) * (radius * radius - offset * offset).powf(0.5 * a)
        / (2f64.powf(a) * gamma(1.0 + 0.5 * a) * gamma(0.5 * (d + a))))
}
