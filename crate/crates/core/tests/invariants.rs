use kpl_core::boundary::{sample_boundary, tilt_path, BoundaryPath};
use kpl_core::bounds::{certificate_terms, LowerBoundParams};
use kpl_core::ensemble::EnsembleSpec;
use kpl_core::grid::GridSpec;
use kpl_core::identities::{drifted_height, origin_samples};
use kpl_core::oracle::gauss_hermite;
use kpl_core::polymer::{endpoint_density, tilt_density};
use kpl_core::rng::{make_key, NoiseField, NoiseHandle, NoiseMode, Purpose};
use kpl_core::she::{duality_check, evolve, green_row};
use kpl_core::stats::{fit_exponent, Estimate};
use proptest::prelude::*;

fn small_grid(t: f64) -> GridSpec {
    GridSpec::new(0.2, None, 6.0, t).unwrap()
}

fn noise(seed: u64, replica: u64, grid: &GridSpec) -> NoiseHandle {
    NoiseHandle::new(make_key(seed, replica, Purpose::Noise), grid.n_sites, NoiseMode::On)
}

fn boundary(seed: u64, replica: u64, grid: &GridSpec) -> BoundaryPath {
    sample_boundary(grid, 0.0, make_key(seed, replica, Purpose::Boundary))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn forward_and_reverse_passes_agree(seed in any::<u64>(), t in 0.1f64..1.0) {
        let g = small_grid(t);
        let gap = duality_check(&noise(seed, 0, &g), &g, &boundary(seed, 0, &g)).unwrap();
        prop_assert!(gap < 1e-10, "relative gap {gap}");
    }

    #[test]
    fn endpoint_density_is_normalized(seed in any::<u64>(), theta in -1.5f64..1.5) {
        let g = small_grid(0.5);
        let row = green_row(&noise(seed, 1, &g), &g).unwrap();
        let p = endpoint_density(&row, &boundary(seed, 1, &g), theta).unwrap();
        prop_assert!((p.total_mass() - 1.0).abs() < 1e-12);
        prop_assert!(p.probs.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn tilting_a_density_matches_drifting_the_boundary(seed in any::<u64>(), theta in -1.0f64..1.0) {
        let g = small_grid(0.5);
        let row = green_row(&noise(seed, 2, &g), &g).unwrap();
        let w = boundary(seed, 2, &g);
        let direct = endpoint_density(&row, &w, theta).unwrap();
        let tilted = tilt_density(&endpoint_density(&row, &w, 0.0).unwrap(), theta);
        for (a, b) in direct.probs.iter().zip(&tilted.probs) {
            prop_assert!((a - b).abs() < 1e-10 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn drifted_height_matches_forward_solve(seed in any::<u64>(), theta in -1.0f64..1.0) {
        let g = small_grid(0.4);
        let nz = noise(seed, 3, &g);
        let w = boundary(seed, 3, &g);
        let from_row = drifted_height(&green_row(&nz, &g).unwrap(), &w, theta);
        let forward = evolve(&w.with_drift(theta), &nz, &g).unwrap().h_origin();
        prop_assert!((from_row - forward).abs() < 1e-9 * (1.0 + forward.abs()));
    }

    #[test]
    fn shifting_the_initial_profile_shifts_the_height(seed in any::<u64>(), c in -50.0f64..50.0) {
        let g = small_grid(0.3);
        let nz = noise(seed, 4, &g);
        let w = boundary(seed, 4, &g);
        let shifted = BoundaryPath::from_values(&g, w.values.iter().map(|v| v + c).collect());
        let a = evolve(&w, &nz, &g).unwrap().h_origin();
        let b = evolve(&shifted, &nz, &g).unwrap().h_origin();
        prop_assert!((b - a - c).abs() < 1e-9 * (1.0 + c.abs()));
    }

    #[test]
    fn noise_cells_regenerate_identically(seed in any::<u64>(), step in 0usize..50, site in 0usize..61) {
        let g = small_grid(1.0);
        let nz = noise(seed, 5, &g);
        let mut row = vec![0.0; g.n_sites];
        nz.fill_row(step, &mut row);
        prop_assert_eq!(nz.cell(step, site).to_bits(), row[site].to_bits());
        prop_assert_eq!(nz.cell(step, site).to_bits(), nz.cell(step, site).to_bits());
    }

    #[test]
    fn lower_bound_parameters_are_consistent(lambda in 2.2f64..6.0, extra in 0.1f64..10.0, t in 1.0f64..100.0, c in -10.0f64..10.0) {
        match LowerBoundParams::new(lambda, lambda + extra, t) {
            Ok(p) => {
                prop_assert!((p.n - (p.u + p.theta * t)).abs() < 1e-9 * p.n);
                prop_assert!((p.c1(c) - (p.c2(c) + p.c3)).abs() < 1e-12 * (1.0 + c.abs()));
                prop_assert!((p.c1(c) - c - 2.0 * t.cbrt()).abs() < 1e-9);
                let terms = certificate_terms(&p, t.powf(2.0 / 3.0));
                prop_assert!(terms.log_rhs.is_finite());
            }
            Err(_) => prop_assert!(lambda.sqrt() / (0.5 * lambda * lambda - 2.0) >= 1.0),
        }
    }

    #[test]
    fn exact_power_laws_are_fitted_exactly(slope in 0.1f64..1.5, scale in 0.1f64..10.0) {
        let points: Vec<(f64, Estimate)> = [1.0, 2.0, 4.0, 8.0, 16.0]
            .iter()
            .map(|&t: &f64| {
                let v = scale * t.powf(slope);
                (t, Estimate { mean: v, stderr: 0.05 * v, ci_low: v, ci_high: v, n: 100 })
            })
            .collect();
        let fit = fit_exponent(&points).unwrap();
        prop_assert!((fit.slope - slope).abs() < 1e-10);
        prop_assert!((fit.intercept - scale.ln()).abs() < 1e-9);
    }

    #[test]
    fn hermite_rules_are_exact_below_twice_the_order(q in 1usize..20, k in 0i32..10) {
        prop_assume!((k as usize) < 2 * q);
        let rule = gauss_hermite(q);
        let moment: f64 = rule.nodes.iter().zip(&rule.weights).map(|(x, w)| w * x.powi(k)).sum();
        // E Z^k = (k - 1)!! for even k, 0 for odd k.
        let exact = if k % 2 == 1 { 0.0 } else { (1..k).step_by(2).map(|j| j as f64).product::<f64>() };
        prop_assert!((moment - exact).abs() < 1e-9 * (1.0 + exact), "q={} k={} {} vs {}", q, k, moment, exact);
    }

    #[test]
    fn tilting_adds_a_ramp_capped_at_the_level(seed in any::<u64>(), theta in 0.1f64..2.0, n in 0.5f64..4.0) {
        let g = small_grid(0.5);
        let w = boundary(seed, 6, &g);
        let tilted = tilt_path(&w, theta, n).unwrap();
        for (i, (a, b)) in w.values.iter().zip(&tilted.values).enumerate() {
            let ramp = theta * g.x(i).clamp(0.0, n);
            prop_assert!((b - a - ramp).abs() < 1e-12 * (1.0 + a.abs() + ramp));
        }
    }
}

#[test]
fn ensemble_results_do_not_depend_on_worker_count() {
    let g = small_grid(0.5);
    let spec = EnsembleSpec::new(g, 24, 77);
    let one = origin_samples(&spec).unwrap();
    let three = origin_samples(&spec.with_workers(3)).unwrap();
    let bits = |s: &[kpl_core::identities::OriginSample]| {
        s.iter().flat_map(|o| [o.h, o.abs_mean, o.mean, o.second].map(f64::to_bits)).collect::<Vec<_>>()
    };
    assert_eq!(bits(&one), bits(&three));
}

#[test]
fn normal_streams_pass_a_goodness_of_fit_test() {
    use statrs::distribution::{ContinuousCDF, Normal};
    let std = Normal::new(0.0, 1.0).unwrap();
    let mut stream = make_key(11, 3, Purpose::Auxiliary).normals(0);
    let xs: Vec<f64> = (0..20_000).map(|_| stream.next_normal()).collect();
    let (d, p) = kpl_core::stats::ks_one_sample(&xs, |x| std.cdf(x));
    assert!(p > 1e-3, "KS D = {d}, p = {p}");
}

#[test]
fn bootstrap_intervals_cover_the_true_mean() {
    let trials = 200;
    let mut covered = 0;
    for trial in 0..trials {
        let mut stream = make_key(5, trial, Purpose::Auxiliary).normals(0);
        let xs: Vec<f64> = (0..200).map(|_| 2.0 + stream.next_normal()).collect();
        let est = kpl_core::stats::estimate(&xs, make_key(6, trial, Purpose::Auxiliary));
        if est.ci_low <= 2.0 && 2.0 <= est.ci_high {
            covered += 1;
        }
        assert!((est.stderr - 1.0 / 200f64.sqrt()).abs() < 0.03);
    }
    // Nominal 95%; binomial sd over 200 trials is about 1.5%.
    assert!((175..=199).contains(&covered), "coverage {covered}/{trials}");
}
