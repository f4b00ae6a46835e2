//! Small statistics toolbox for the Monte Carlo checks.

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance.
pub fn variance(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return f64::NAN;
    }
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64
}

pub fn std_error(x: &[f64]) -> f64 {
    (variance(x) / x.len() as f64).sqrt()
}

/// Least squares `y = slope·x + intercept`; returns `(slope, intercept, R²)`.
pub fn linear_fit(pts: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (slope, intercept, r2)
}

/// Lag-1 sample autocorrelation.
pub fn lag1_autocorrelation(x: &[f64]) -> f64 {
    if x.len() < 3 {
        return f64::NAN;
    }
    let m = mean(x);
    let den: f64 = x.iter().map(|v| (v - m) * (v - m)).sum();
    if den == 0.0 {
        return 0.0;
    }
    let num: f64 = x.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
    num / den
}

/// `½ Σ |p_i − q_i|`.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Counts of `x` in the bins `[e_k, e_{k+1})`; values outside are dropped.
pub fn histogram(x: &[f64], edges: &[f64]) -> Vec<u64> {
    let mut counts = vec![0u64; edges.len().saturating_sub(1)];
    for &v in x {
        if v < edges[0] || v >= edges[edges.len() - 1] {
            continue;
        }
        let k = edges.partition_point(|e| *e <= v) - 1;
        counts[k] += 1;
    }
    counts
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson goodness of fit. Adjacent bins are merged until every expected
/// count is at least 5.
pub fn chi_square(observed: &[u64], probs: &[f64]) -> Result<ChiSquareTest> {
    if observed.len() != probs.len() {
        return Err(Error::param("probs", "length differs from observed"));
    }
    let total: u64 = observed.iter().sum();
    let psum: f64 = probs.iter().sum();
    if total == 0 || psum <= 0.0 {
        return Err(Error::InsufficientData("chi-square needs a nonempty sample".into()));
    }
    let n = total as f64;
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let (mut o, mut e) = (0.0, 0.0);
    for (ob, p) in observed.iter().zip(probs) {
        o += *ob as f64;
        e += n * p / psum;
        if e >= 5.0 {
            bins.push((o, e));
            o = 0.0;
            e = 0.0;
        }
    }
    if e > 0.0 || o > 0.0 {
        match bins.last_mut() {
            Some(last) => {
                last.0 += o;
                last.1 += e;
            }
            None => bins.push((o, e)),
        }
    }
    if bins.len() < 2 {
        return Err(Error::InsufficientData("fewer than two bins with expected count 5".into()));
    }
    let statistic: f64 = bins.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    let dof = bins.len() - 1;
    let dist = ChiSquared::new(dof as f64).map_err(|e| Error::Numerical(e.to_string()))?;
    Ok(ChiSquareTest {
        statistic,
        dof,
        p_value: dist.sf(statistic),
    })
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct KsTest {
    pub statistic: f64,
    pub p_value: f64,
    /// Critical value of the statistic at the 1% level.
    pub critical_1pct: f64,
}

/// `P(K > λ)` for the Kolmogorov distribution.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

const KS_1PCT: f64 = 1.6276;

/// Two-sample Kolmogorov–Smirnov test with the asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsTest> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientData("KS test needs two nonempty samples".into()));
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let ne = n * m / (n + m);
    Ok(KsTest {
        statistic: d,
        p_value: kolmogorov_sf(d * ne.sqrt()),
        critical_1pct: KS_1PCT / ne.sqrt(),
    })
}

/// One-sample Kolmogorov–Smirnov test against a continuous CDF.
pub fn ks_one_sample(a: &[f64], cdf: impl Fn(f64) -> f64) -> Result<KsTest> {
    if a.is_empty() {
        return Err(Error::InsufficientData("KS test needs a nonempty sample".into()));
    }
    let mut x = a.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let d = x
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            let f = cdf(v);
            (f - k as f64 / n).abs().max(((k + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max);
    Ok(KsTest {
        statistic: d,
        p_value: kolmogorov_sf(d * n.sqrt()),
        critical_1pct: KS_1PCT / n.sqrt(),
    })
}
