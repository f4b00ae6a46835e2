mod common;

use proptest::prelude::*;
use rand::Rng;
use reflected_stable::experiment::{ExperimentConfig, MuSpec, ParamsSpec};
use reflected_stable::geometry::{default_probes, Grid};
use reflected_stable::killed::{assemble_dirichlet_generator, green_operator, killing_vector};
use reflected_stable::linalg::row_sums;
use reflected_stable::perturbation::{full_generator, perturbation_matrix};
use reflected_stable::point::Point;
use reflected_stable::reflection::{make_projection_kernel, EntryLaw};
use reflected_stable::rng::stream;
use reflected_stable::stationary::{chain_kernel, GridMeasure};
use reflected_stable::stats::{chi_square, total_variation};
use reflected_stable::{Domain, Region, StableParams};

use common::{Family, FAMILIES};

fn interval() -> impl Strategy<Value = (f64, f64)> {
    (-5.0..5.0f64, 0.1..4.0f64).prop_map(|(a, len)| (a, a + len))
}

fn cells() -> impl Strategy<Value = Vec<(f64, f64)>> {
    (-3.0..0.0f64, prop::collection::vec((0.05..1.0f64, 0.05..0.8f64), 1..4)).prop_map(|(start, parts)| {
        let mut x = start;
        parts
            .into_iter()
            .map(|(len, gap)| {
                let c = (x, x + len);
                x += len + gap;
                c
            })
            .collect()
    })
}

// Cell unions whose components are whole numbers of cells of one width,
// with the total cell count.
fn gridded_cells() -> impl Strategy<Value = (Vec<(f64, f64)>, usize)> {
    (
        -2.0..0.0f64,
        0.02..0.06f64,
        prop::collection::vec((3usize..25, 0.05..0.8f64), 1..4),
    )
        .prop_map(|(start, h, parts)| {
            let mut x = start;
            let n = parts.iter().map(|(k, _)| k).sum();
            let cells = parts
                .into_iter()
                .map(|(k, gap)| {
                    let c = (x, x + k as f64 * h);
                    x = c.1 + gap;
                    c
                })
                .collect();
            (cells, n)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn boundary_distance_vanishes_exactly_on_the_boundary((a, b) in interval(), s in 0.0..1.0f64) {
        let d = Domain::interval(a, b).unwrap();
        for e in [a, b] {
            prop_assert_eq!(d.boundary_distance(&Point::scalar(e)), 0.0);
            prop_assert!(d.boundary_distance(&Point::scalar(e + 1e-12)) > 0.0);
            prop_assert!(d.boundary_distance(&Point::scalar(e - 1e-12)) > 0.0);
        }
        let x = a + s * (b - a);
        if x > a && x < b {
            prop_assert!(d.boundary_distance(&Point::scalar(x)) > 0.0);
        }
    }

    #[test]
    fn exterior_shells_avoid_the_domain(c in cells(), r in 0.01..3.0f64, probes in prop::collection::vec(0.0..1.0f64, 32)) {
        let d = Domain::cells(c).unwrap();
        let shell = d.exterior_shell(r).unwrap();
        let Region::Intervals(parts) = &shell else { panic!("1-D shell") };
        for (lo, hi) in parts {
            for s in &probes {
                let x = lo + s * (hi - lo);
                prop_assert!(!d.contains(&Point::scalar(x)));
                prop_assert!(d.boundary_distance(&Point::scalar(x)) <= r + 1e-12);
            }
        }
    }

    #[test]
    fn levy_tail_mass_matches_antiderivative(alpha in 0.05..1.95f64, x in -3.0..3.0f64, rho in 0.01..10.0f64) {
        let p = StableParams::new(1, alpha).unwrap();
        let two_sided = p.levy_mass_1d(x, x + rho, f64::INFINITY) + p.levy_mass_1d(x, f64::NEG_INFINITY, x - rho);
        let closed = p.levy_tail_mass(rho);
        prop_assert!((two_sided - closed).abs() <= 1e-10 * closed);
    }

    #[test]
    fn projection_kernels_are_normalized(depth in 0.05..0.6f64, width in 0.02..0.3f64, z in prop::collection::vec(1.0..50.0f64, 8)) {
        let d = Domain::interval(-1.0, 1.0).unwrap();
        prop_assume!(depth + 0.5 * width < 1.0 && depth > 0.5 * width);
        let k = make_projection_kernel(&d, depth, width).unwrap();
        for (i, zi) in z.iter().enumerate() {
            let zp = Point::scalar(if i % 2 == 0 { *zi } else { -zi });
            let m = k.mass(&zp, &Region::interval(-1.0, 1.0)).unwrap();
            prop_assert!((m - 1.0).abs() <= 1e-10);
        }
    }

    #[test]
    fn streams_are_pure_functions_of_their_key(seed in any::<u64>(), r in any::<u64>(), e in any::<u64>()) {
        let a: Vec<u64> = (0..4).map({ let mut g = stream(seed, r, e); move |_| g.random() }).collect();
        let b: Vec<u64> = (0..4).map({ let mut g = stream(seed, r, e); move |_| g.random() }).collect();
        let c: Vec<u64> = (0..4).map({ let mut g = stream(seed, r, e.wrapping_add(1)); move |_| g.random() }).collect();
        prop_assert_eq!(&a, &b);
        prop_assert_ne!(&a, &c);
    }

    #[test]
    fn total_variation_is_a_metric(p in prop::collection::vec(0.0..1.0f64, 2..20), q in prop::collection::vec(0.0..1.0f64, 20)) {
        let n = p.len();
        let norm = |v: &[f64]| { let s: f64 = v.iter().sum::<f64>().max(1e-300); v.iter().map(|x| x / s).collect::<Vec<_>>() };
        let (p, q) = (norm(&p), norm(&q[..n]));
        let d = total_variation(&p, &q);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&d));
        prop_assert!((d - total_variation(&q, &p)).abs() < 1e-15);
        prop_assert!(total_variation(&p, &p) == 0.0);
    }

    #[test]
    fn chi_square_p_values_are_probabilities(counts in prop::collection::vec(0u64..500, 2..12)) {
        let k = counts.len();
        let probs = vec![1.0 / k as f64; k];
        if let Ok(t) = chi_square(&counts, &probs) {
            prop_assert!((0.0..=1.0).contains(&t.p_value));
            prop_assert!(t.statistic >= 0.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn generator_structure(alpha in 0.1..1.9f64, (c, n) in gridded_cells()) {
        let p = StableParams::new(1, alpha).unwrap();
        let d = Domain::cells(c).unwrap();
        let g = Grid::build(&d, n).unwrap();
        let l = assemble_dirichlet_generator(&g, &p).unwrap();
        let e = l.entries();
        let kappa = killing_vector(&p, &g).unwrap();
        let scale = e.amax();
        for i in 0..g.len() {
            for j in 0..g.len() {
                if i != j {
                    prop_assert!(e[(i, j)] >= 0.0);
                }
                prop_assert!((e[(i, j)] - e[(j, i)]).abs() <= 1e-12 * scale);
            }
        }
        for (s, k) in row_sums(e).iter().zip(&kappa) {
            prop_assert!((s + k).abs() <= 1e-9 * scale);
        }
        let ones = green_operator(&l).unwrap().apply(&kappa);
        prop_assert!(ones.iter().all(|v| (v - 1.0).abs() < 1e-8));
    }

    #[test]
    fn reflected_generator_conserves_mass(alpha in 0.2..1.8f64, n in 20usize..60, fam in 0usize..3) {
        let p = StableParams::new(1, alpha).unwrap();
        let d = Domain::interval(-1.0, 1.0).unwrap();
        let mu = FAMILIES[fam].kernel(&d);
        let g = Grid::build(&d, n).unwrap();
        let l = assemble_dirichlet_generator(&g, &p).unwrap();
        let m = perturbation_matrix(&g, &p, &mu).unwrap();
        let a = full_generator(&l, &m).unwrap();
        let scale = l.entries().amax();
        prop_assert!(a.row_sums().iter().all(|s| s.abs() <= 1e-9 * scale));
        let chain = chain_kernel(&green_operator(&l).unwrap(), &m).unwrap();
        prop_assert!(chain.row_sums().iter().all(|s| (s - 1.0).abs() <= 1e-6));
        prop_assert!(chain.entries().iter().all(|v| *v >= 0.0));
        if FAMILIES[fam] == Family::Constant {
            let law = EntryLaw::uniform(-0.5, 0.5).cell_masses(&g).unwrap();
            let row: Vec<f64> = chain.entries().row(0).iter().copied().collect();
            prop_assert!(total_variation(&row, &law) < 1e-6);
        }
    }

    #[test]
    fn config_round_trip_preserves_hash(seed in any::<u64>(), alpha in 0.05..1.95f64, n in 8usize..500, fam in 0usize..3) {
        let mu = match fam {
            0 => MuSpec::Constant { law: EntryLaw::uniform(-0.5, 0.5) },
            1 => MuSpec::Dirac { x0: 0.25 },
            _ => MuSpec::Projection { depth: 0.3, width: 0.2 },
        };
        let cfg = ExperimentConfig { seed: Some(seed), params: ParamsSpec { d: 1, alpha }, mu, n_cells: n, ..Default::default() };
        let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        prop_assert_eq!(&cfg, &back);
        prop_assert_eq!(cfg.sha256(), back.sha256());
    }

    #[test]
    fn measures_normalize(w in prop::collection::vec(0.0..1.0f64, 30)) {
        prop_assume!(w.iter().sum::<f64>() > 1e-6);
        let g = Grid::build(&Domain::interval(-1.0, 1.0).unwrap(), 30).unwrap();
        let m = GridMeasure::from_weights(g, w, 0.0).unwrap();
        prop_assert!((m.masses().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(m.tv(&m) == 0.0);
    }
}

#[test]
fn probes_cover_both_exterior_sides() {
    let d = Domain::interval(-1.0, 1.0).unwrap();
    let probes = default_probes(&d);
    assert!(probes.iter().any(|p| p.x() < -1.0) && probes.iter().any(|p| p.x() > 1.0));
}
