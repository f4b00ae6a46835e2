//! Special functions and fixed quadrature rules.

use std::f64::consts::PI;

// Lanczos approximation, g = 7, nine coefficients.
const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Γ(x) by the Lanczos approximation, with the reflection formula for
/// `x < 1/2`. Returns `NaN` at the poles `x = 0, -1, -2, ...`.
pub fn gamma(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x <= 0.0 && x == x.floor() {
        return f64::NAN;
    }
    if x < 0.5 {
        return PI / ((PI * x).sin() * gamma(1.0 - x));
    }
    if x > 171.7 {
        return f64::INFINITY;
    }
    let x = x - 1.0;
    let mut acc = LANCZOS_COEF[0];
    for (k, c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        acc += c / (x + k as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    (2.0 * PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * acc
}

/// Riemann ζ(s) for real `s > 0`, `s ≠ 1`, from the alternating series
/// `η(s) = (1 − 2^{1−s}) ζ(s)` with Cohen–Villegas–Zagier acceleration.
pub fn zeta(s: f64) -> f64 {
    if !(s > 0.0) || s == 1.0 {
        return f64::NAN;
    }
    const TERMS: usize = 40;
    let n = TERMS as f64;
    let mut d = (3.0 + 8f64.sqrt()).powf(n);
    d = 0.5 * (d + 1.0 / d);
    let (mut b, mut c, mut eta) = (-1.0, -d, 0.0);
    for k in 0..TERMS {
        let kf = k as f64;
        c = b - c;
        eta += c * (kf + 1.0).powf(-s);
        b *= (kf + n) * (kf - n) / ((kf + 0.5) * (kf + 1.0));
    }
    eta / d / (1.0 - 2f64.powf(1.0 - s))
}

/// Surface area of the unit sphere in ℝᵈ, `2π^{d/2} / Γ(d/2)`.
pub fn sphere_area(d: usize) -> f64 {
    let h = d as f64 / 2.0;
    2.0 * PI.powf(h) / gamma(h)
}

/// Volume of the unit ball in ℝᵈ.
pub fn ball_volume(d: usize) -> f64 {
    sphere_area(d) / d as f64
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess, refined by Newton on P_n.
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, z);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// A Gauss–Legendre rule mapped onto arbitrary intervals.
#[derive(Clone, Debug)]
pub struct GaussRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussRule {
    pub fn new(order: usize) -> Self {
        let (nodes, weights) = gauss_legendre(order);
        GaussRule { nodes, weights }
    }

    /// ∫_a^b f.
    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * f(mid + half * x))
            .sum::<f64>()
            * half
    }

    /// Mapped nodes and weights for `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(x, w)| (mid + half * x, w * half))
    }
}
