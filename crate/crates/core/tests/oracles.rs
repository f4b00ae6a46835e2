mod common;

use rayon::prelude::*;
use reflected_stable::geometry::Grid;
use reflected_stable::killed::{
    assemble_dirichlet_generator, assemble_dirichlet_generator_with, green_operator, heat_kernel, resolvent_u,
    ExteriorFn, HarmonicKernel, SmallJumps,
};
use reflected_stable::pathsim::{killed_batch, simulate_ladder_batch, ExcursionOptions, LadderOptions, StartLaw};
use reflected_stable::perturbation::perturbation_matrix;
use reflected_stable::point::Point;
use reflected_stable::rng::stream;
use reflected_stable::special::{gamma, GaussRule};
use reflected_stable::stable::{ball_exit_position, ball_mean_exit_time, ball_poisson_kernel, levy_constant};
use reflected_stable::stationary::{chain_kernel, GridMeasure};
use reflected_stable::stats::{chi_square, histogram, ks_two_sample, linear_fit, mean, std_error};
use reflected_stable::{Region, StableParams};
use statrs::function::gamma::ln_gamma;

use common::{green_interval, green_interval_mass, unit, Family, Setup, ALPHAS};

#[test]
fn gamma_agrees_with_independent_log_gamma() {
    for k in 1..400 {
        let x = 0.013 + 0.0427 * k as f64;
        let g = gamma(x);
        assert!((g.ln() - ln_gamma(x)).abs() < 1e-12 * ln_gamma(x).abs().max(1.0), "x = {x}");
    }
}

#[test]
fn levy_constant_one_dimensional_closed_form() {
    // c_{1,α} = Γ(1+α) sin(πα/2) / π.
    for alpha in [0.3, 0.5, 1.0, 1.5, 1.9] {
        let c = levy_constant(1, alpha).unwrap();
        let closed = gamma(1.0 + alpha) * (std::f64::consts::FRAC_PI_2 * alpha).sin() / std::f64::consts::PI;
        assert!((c - closed).abs() < 1e-12 * closed, "alpha = {alpha}");
    }
}

#[test]
fn green_function_integrates_to_mean_exit_time() {
    for alpha in ALPHAS {
        let p = StableParams::new(1, alpha).unwrap();
        for x in [0.0, 0.4, -0.85] {
            let total = green_interval_mass(alpha, x, -1.0, 1.0);
            let oracle = ball_mean_exit_time(&p, 1.0, f64::abs(x)).unwrap();
            assert!((total - oracle).abs() < 1e-6 * oracle, "alpha = {alpha}, x = {x}: {total} vs {oracle}");
        }
    }
}

#[test]
fn cauchy_green_function_logarithmic_form() {
    for (x, y) in [(0.0, 0.5), (0.3, -0.7), (0.9, 0.1)] {
        let closed = ((1.0 - x * y + ((1.0 - x * x) * (1.0 - y * y) as f64).sqrt()) / (x - y as f64).abs()).ln()
            / std::f64::consts::PI;
        assert!((green_interval(1.0, x, y) - closed).abs() < 1e-10);
    }
}

#[test]
fn grid_green_rows_match_closed_form() {
    for alpha in ALPHAS {
        let p = StableParams::new(1, alpha).unwrap();
        let g = Grid::build(&unit(), 400).unwrap();
        let green = green_operator(&assemble_dirichlet_generator(&g, &p).unwrap()).unwrap();
        for x in [0.0, 0.6] {
            let i = g.cells().iter().position(|c| c.0 == x || (c.0 < x && c.1 > x)).unwrap();
            let row: Vec<f64> = green.entries().row(i).iter().copied().collect();
            let xi = g.node(i);
            let oracle: Vec<f64> = g.cells().iter().map(|&(a, b)| green_interval_mass(alpha, xi, a, b)).collect();
            let grid_total: f64 = row.iter().sum();
            let exact_total: f64 = oracle.iter().sum();
            assert!((grid_total - exact_total).abs() < 0.01 * exact_total, "alpha {alpha}: {grid_total} vs {exact_total}");
            let tv = GridMeasure::from_weights(g.clone(), row, 0.0)
                .unwrap()
                .tv(&GridMeasure::from_weights(g.clone(), oracle, 0.0).unwrap());
            assert!(tv < 0.01, "alpha {alpha}, x {xi}: TV {tv}");
        }
    }
}

#[test]
fn dropped_small_jumps_converge_at_the_predicted_order() {
    // Mean exit time error against the closed form, dropped scheme.
    for alpha in [0.5, 1.0, 1.5] {
        let p = StableParams::new(1, alpha).unwrap();
        let mut pts = Vec::new();
        for n in [100, 200, 400, 800] {
            let g = Grid::build(&unit(), n).unwrap();
            let l = assemble_dirichlet_generator_with(&g, &p, SmallJumps::Dropped).unwrap();
            let green = green_operator(&l).unwrap();
            let i = n / 2;
            let est: f64 = green.entries().row(i).sum();
            let exact = ball_mean_exit_time(&p, 1.0, g.node(i).abs()).unwrap();
            pts.push((g.h().ln(), (est - exact).abs().ln()));
        }
        let (slope, _, _) = linear_fit(&pts);
        let expected = f64::min(1.0, 2.0 - alpha);
        assert!((slope - expected).abs() <= 0.3, "alpha {alpha}: slope {slope}, expected {expected}");
    }
}

#[test]
fn poisson_kernel_example_far_exit() {
    // Center start, α = 1: P(|Y| > 2) = 1 − (2/π) arctan √3.
    let p = StableParams::new(1, 1.0).unwrap();
    let o = Point::scalar(0.0);
    let rule = GaussRule::new(40);
    let one_side = rule.integrate(0.0, 0.5, |u| ball_poisson_kernel(&p, &o, 1.0, &o, &Point::scalar(1.0 / u)) / (u * u));
    let expected = 1.0 - 2.0 / std::f64::consts::PI * 3f64.sqrt().atan();
    assert!((2.0 * one_side - expected).abs() < 1e-8, "{} vs {expected}", 2.0 * one_side);
}

fn side_masses(p: &StableParams, x: f64, sign: f64, us: &[f64]) -> Vec<f64> {
    let o = Point::scalar(0.0);
    let rule = GaussRule::new(24);
    let s = |u: f64| ball_poisson_kernel(p, &o, 1.0, &Point::scalar(x), &Point::scalar(sign / u)) / (u * u);
    // Near u = 1 the density has an integrable edge singularity; e = t^{1/q}
    // with q = 1 − α/2 removes it.
    let q = 1.0 - 0.5 * p.alpha();
    us.windows(2)
        .map(|w| {
            let (hi, lo) = (w[0], w[1]);
            if hi == 1.0 {
                rule.integrate(0.0, (hi - lo).powf(q), |t| {
                    let e = t.powf(1.0 / q);
                    s(1.0 - e) * e / t / q
                })
            } else if lo == 0.0 {
                // u^{α−1} tail behaviour, removed by u = t^{1/α}.
                let a = p.alpha();
                rule.integrate(0.0, hi.powf(a), |t| {
                    let u = t.powf(1.0 / a);
                    s(u) * u / t / a
                })
            } else {
                rule.integrate(lo, hi, s)
            }
        })
        .collect()
}

/// Poisson-kernel masses of 20 bins per side, with edges on `u = 1/|z|`.
fn exterior_bins(p: &StableParams, x: f64) -> (Vec<f64>, Vec<f64>) {
    let us: Vec<f64> = (0..=20).map(|k| 1.0 - (k as f64 / 20.0).powf(0.5)).collect();
    let left = side_masses(p, x, -1.0, &us);
    let right = side_masses(p, x, 1.0, &us);
    (us, left.into_iter().rev().chain(right).collect())
}

fn bin_of(us: &[f64], z: f64) -> usize {
    let u = 1.0 / z.abs();
    let k = us.windows(2).position(|w| u <= w[0] && u > w[1]).unwrap_or(us.len() - 2);
    if z < 0.0 {
        us.len() - 2 - k
    } else {
        us.len() - 1 + k
    }
}

#[test]
fn ball_exit_sampler_matches_poisson_kernel() {
    for alpha in ALPHAS {
        let p = StableParams::new(1, alpha).unwrap();
        let x = 0.3;
        let (us, probs) = exterior_bins(&p, x);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        let zs: Vec<f64> = (0..100_000u64)
            .into_par_iter()
            .map(|r| {
                ball_exit_position(&p, &Point::scalar(0.0), 1.0, &Point::scalar(x), &mut stream(7, r, 0))
                    .unwrap()
                    .x()
            })
            .collect();
        let mut counts = vec![0u64; probs.len()];
        for z in zs {
            counts[bin_of(&us, z)] += 1;
        }
        let chi = chi_square(&counts, &probs).unwrap();
        assert!(chi.p_value > 0.01, "alpha {alpha}: p = {}", chi.p_value);
    }
}

#[test]
fn increments_scale_with_dt_to_the_one_over_alpha() {
    for alpha in ALPHAS {
        let p = StableParams::new(1, alpha).unwrap();
        let draw = |dt: f64, key: u64| -> Vec<f64> {
            let mut g = stream(11, key, 0);
            (0..100_000)
                .map(|_| p.sample_increment(dt, &mut g).unwrap().x() * dt.powf(-1.0 / alpha))
                .collect()
        };
        let ks = ks_two_sample(&draw(1e-3, 1), &draw(1.0, 2)).unwrap();
        assert!(ks.p_value > 0.01, "alpha {alpha}: KS p = {}", ks.p_value);
    }
}

#[test]
fn harmonic_kernel_matches_simulated_exits() {
    let p = StableParams::new(1, 1.0).unwrap();
    let d = unit();
    let g = Grid::build(&d, 400).unwrap();
    let h = HarmonicKernel::new(green_operator(&assemble_dirichlet_generator(&g, &p).unwrap()).unwrap()).unwrap();
    let i = g.nearest_node(0.3);
    let x = g.node(i);
    let exits = killed_batch(
        &p,
        &d,
        &Point::scalar(x),
        &ExcursionOptions {
            dt: 1e-3,
            exact: true,
            record_path: false,
        },
        100_000,
        3,
    )
    .unwrap();
    let edges = [1.0, 1.01, 1.03, 1.07, 1.15, 1.3, 1.6, 2.2, 4.0, 10.0, f64::INFINITY];
    let mut regions = Vec::new();
    for w in edges.windows(2) {
        regions.push(Region::interval(-w[1], -w[0]));
        regions.push(Region::interval(w[0], w[1]));
    }
    let probs: Vec<f64> = regions.iter().map(|r| h.mass(i, r).unwrap()).collect();
    let mut counts = vec![0u64; regions.len()];
    for e in &exits {
        let k = regions.iter().position(|r| r.contains(&e.exit)).unwrap();
        counts[k] += 1;
    }
    let chi = chi_square(&counts, &probs).unwrap();
    assert!(chi.p_value > 0.01, "p = {} ({chi:?})", chi.p_value);
}

#[test]
fn laplace_transform_of_exit_time() {
    let p = StableParams::new(1, 1.0).unwrap();
    let d = unit();
    let g = Grid::build(&d, 400).unwrap();
    let l = assemble_dirichlet_generator(&g, &p).unwrap();
    let lambda = 1.0;
    let u = resolvent_u(&l, lambda, &ExteriorFn::Constant(1.0)).unwrap();
    let i = g.nearest_node(0.2);
    let exits = killed_batch(
        &p,
        &d,
        &Point::scalar(g.node(i)),
        &ExcursionOptions {
            dt: 1e-3,
            exact: false,
            record_path: false,
        },
        100_000,
        5,
    )
    .unwrap();
    let v: Vec<f64> = exits.iter().map(|e| (-lambda * e.exit_time.unwrap()).exp()).collect();
    let (m, se) = (mean(&v), std_error(&v));
    assert!((m - u[i]).abs() <= 3.0 * se, "MC {m} +/- {se} vs grid {}", u[i]);
}

fn exit_histogram(alpha: f64, x: f64, dt: Option<f64>, seed: u64, edges: &[f64]) -> Vec<u64> {
    let p = StableParams::new(1, alpha).unwrap();
    let o = ExcursionOptions {
        dt: dt.unwrap_or(1e-3),
        exact: dt.is_none(),
        record_path: false,
    };
    let exits: Vec<f64> = killed_batch(&p, &unit(), &Point::scalar(x), &o, 50_000, seed)
        .unwrap()
        .iter()
        .map(|e| e.exit.x())
        .collect();
    histogram(&exits, edges)
}

// Two-sample χ² on the occupied cells; returns (p-value, total variation).
fn two_sample(a: &[u64], b: &[u64]) -> (f64, f64) {
    let (na, nb) = (a.iter().sum::<u64>() as f64, b.iter().sum::<u64>() as f64);
    let mut stat = 0.0;
    let mut dof = 0;
    let mut tv = 0.0;
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (*x as f64, *y as f64);
        tv += 0.5 * (x / na - y / nb).abs();
        if x + y > 0.0 {
            stat += (x - y).powi(2) / (x + y);
            dof += 1;
        }
    }
    let chi = statrs::distribution::ChiSquared::new((dof - 1) as f64).unwrap();
    (statrs::distribution::ContinuousCDF::sf(&chi, stat), tv)
}

#[test]
fn euler_exit_law_converges_to_exact() {
    let edges = [-f64::INFINITY, -3.0, -1.5, -1.2, -1.05, -1.0, 1.0, 1.05, 1.2, 1.5, 3.0, f64::INFINITY];
    for (alpha, x) in [(1.0, 0.0), (1.5, -0.4)] {
        let exact = exit_histogram(alpha, x, None, 1, &edges);
        let coarse = two_sample(&exact, &exit_histogram(alpha, x, Some(1e-2), 2, &edges));
        let fine = two_sample(&exact, &exit_histogram(alpha, x, Some(1e-3), 3, &edges));
        assert!(fine.1 < coarse.1, "alpha {alpha}: TV {} at dt 1e-3 vs {} at 1e-2", fine.1, coarse.1);
        // At α = 1.5 the exact law piles up within one Euler step length
        // of the boundary, so 5·10⁴ samples still resolve the bias at 1e-3.
        if alpha == 1.0 {
            assert!(fine.0 > 0.01, "alpha {alpha}: p = {}", fine.0);
        }
    }
}

#[test]
fn pre_reflection_joint_law() {
    let s = Setup::new(1.0, Family::Projection, 400);
    let t = 0.2;
    let i = s.grid.nearest_node(0.3);
    let x = s.grid.node(i);
    let heat = heat_kernel(&s.l, t).unwrap();
    let chain = chain_kernel(&s.green, &perturbation_matrix(&s.grid, &s.params, &s.mu).unwrap()).unwrap();
    let in_a = |y: f64| (-0.5..=0.0).contains(&y);
    let in_b = |y: f64| (0.0..=0.5).contains(&y);
    let to_b: Vec<f64> = (0..s.grid.len())
        .map(|k| (0..s.grid.len()).filter(|&j| in_b(s.grid.node(j))).map(|j| chain.entries()[(k, j)]).sum())
        .collect();
    let oracle: f64 = (0..s.grid.len())
        .filter(|&k| in_a(s.grid.node(k)))
        .map(|k| heat.entries()[(i, k)] * to_b[k])
        .sum();
    let mut opts = LadderOptions::new(1e-3, 40.0);
    opts.checkpoints = vec![t];
    let n = 100_000;
    let paths = simulate_ladder_batch(&s.params, s.grid.domain(), &s.mu, &StartLaw::Point(Point::scalar(x)), &opts, n, 9)
        .unwrap();
    let hits = paths
        .iter()
        .filter(|p| {
            let c = &p.checkpoints[0];
            c.n == 0 && in_a(c.x.x()) && p.segments[0].entry.map(|e| in_b(e.x())).unwrap_or(false)
        })
        .count() as f64;
    let emp = hits / n as f64;
    let sigma = (emp * (1.0 - emp) / n as f64).sqrt();
    assert!((emp - oracle).abs() <= 3.0 * sigma + 0.01, "{emp} +/- {sigma} vs {oracle}");
}

#[test]
fn dirac_stationary_law_is_the_green_row() {
    for alpha in ALPHAS {
        let s = Setup::new(alpha, Family::Dirac, 400);
        let chain = chain_kernel(&s.green, &s.m).unwrap();
        let p = reflected_stable::stationary::stationary_p(&chain, 1e-12).unwrap();
        let kappa = reflected_stable::stationary::kappa_closed_form(&p.measure, &s.green).unwrap();
        let g: Vec<f64> = s
            .grid
            .cells()
            .iter()
            .map(|&(a, b)| green_interval_mass(alpha, common::DIRAC_X0, a, b))
            .collect();
        let oracle = GridMeasure::from_weights(s.grid.clone(), g, 1e-12).unwrap();
        assert!(kappa.tv(&oracle) <= 0.01, "alpha {alpha}: TV {}", kappa.tv(&oracle));
    }
}
