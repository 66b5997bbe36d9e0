use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use scalinglab::exactloss::{
    expected_loss_finite, feature_route_excess, infinite_data_solution, loss_infinite_data, loss_infinite_params_exact,
    student_solution,
};
use scalinglab::features::io::{dataset_from_csv, dataset_to_csv, feature_map_from_csv, feature_map_to_csv};
use scalinglab::features::{
    build_relu_features, build_torus_features, point_projector, random_explicit_features, random_projector,
    random_subspace_projector, sample_manifold, second_moment_features, FeatureMap, Projector, SecondMoment,
};
use scalinglab::harness::{curve_from_csv, curve_to_csv, parse_grid, run_sweep, Regime, Size, SweepConfig};

fn relu_setup(s: usize, seed: u64) -> (FeatureMap, SecondMoment) {
    let fm = build_relu_features(3, s, seed).unwrap();
    let pool = sample_manifold(fm.natural_manifold(), 4000, seed ^ 0xabc).unwrap();
    let m = second_moment_features(&fm, &pool).unwrap();
    (fm, m)
}

/// Loss of the zero predictor. Tolerances are absolute in this unit since
/// pseudo-inverses drop directions below 1e-10 of the largest.
fn scale(m: &SecondMoment) -> f64 {
    m.trace() / (2.0 * m.dim() as f64)
}

/// `min_w (P^T w - e)^T C (P^T w - e)` summed over basis vectors `e`,
/// solved as least squares in the `C^{1/2}` metric.
fn infinite_data_oracle(proj: &Projector, c: &DMatrix<f64>) -> f64 {
    let s = c.nrows();
    let eig = c.clone().symmetric_eigen();
    let half = &eig.eigenvectors
        * DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()))
        * eig.eigenvectors.transpose();
    let a = &half * proj.to_dense().transpose();
    let svd = a.clone().svd(true, true);
    let mut total = 0.0;
    for i in 0..s {
        let b = half.column(i).into_owned();
        let w = svd.solve(&b, 1e-12).unwrap();
        total += (&a * w - b).norm_squared();
    }
    total / (2.0 * s as f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn geometric_grids_are_increasing_with_exact_ends(lo in 1usize..500, span in 1usize..5000, n in 2usize..12) {
        let hi = lo + span;
        let (g, warning) = parse_grid(&format!("{lo}:{hi}:{n}")).unwrap();
        prop_assert_eq!(g[0], lo);
        prop_assert_eq!(*g.last().unwrap(), hi);
        prop_assert!(g.windows(2).all(|w| w[0] < w[1]));
        prop_assert_eq!(warning.is_some(), g.len() < n);
    }

    #[test]
    fn config_text_round_trips(seeds in 1usize..100, seed in any::<u64>(), p in 1usize..64, margin in 0.0f64..0.5) {
        let mut c = SweepConfig::preset(Regime::VarianceD);
        c.seeds = seeds;
        c.base_seed = seed;
        c.fixed_p = Size::Finite(p);
        c.resonance_margin = margin;
        let back = SweepConfig::from_text(&c.to_text()).unwrap();
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn feature_route_excess_is_nonnegative(s in 2usize..10, p in 1usize..10, d in 1usize..30, seed in any::<u64>()) {
        let p = p.min(s);
        let (fm, m) = relu_setup(s, seed);
        let proj = random_projector(s, p, seed).unwrap();
        let train = sample_manifold(fm.natural_manifold(), d, seed ^ 1).unwrap();
        let (x, _) = student_solution(&fm.eval(&train.inputs).unwrap(), &proj);
        let (xs, _) = infinite_data_solution(&proj, &m);
        let excess = feature_route_excess(&x, &xs, &proj, &m);
        prop_assert!(excess >= 0.0);
        let finite = expected_loss_finite(&fm, &proj, &train, &m).unwrap().value;
        let limit = loss_infinite_data(&fm, &proj, &m).unwrap().value;
        prop_assert!((finite - limit - excess).abs() <= 1e-8 * scale(&m));
    }

    #[test]
    fn infinite_data_loss_matches_least_squares_oracle(s in 2usize..10, p in 1usize..10, seed in any::<u64>(), subspace in any::<bool>()) {
        let p = p.min(s);
        let (fm, m) = relu_setup(s, seed);
        let proj = if subspace { random_subspace_projector(s, p, seed).unwrap() } else { random_projector(s, p, seed).unwrap() };
        let ours = loss_infinite_data(&fm, &proj, &m).unwrap().value;
        let oracle = infinite_data_oracle(&proj, &m.to_dense());
        prop_assert!((ours - oracle).abs() <= 1e-8 * scale(&m), "{} vs {}", ours, oracle);
    }

    #[test]
    fn losses_fall_along_nested_sizes(seed in any::<u64>()) {
        let (fm, m) = relu_setup(8, seed);
        let full = random_subspace_projector(8, 8, seed).unwrap();
        let lp: Vec<f64> = (1..=8).map(|p| loss_infinite_data(&fm, &full.leading_rows(p).unwrap(), &m).unwrap().value).collect();
        prop_assert!(lp.windows(2).all(|w| w[1] <= w[0] + 1e-8 * scale(&m)));
        let train = sample_manifold(fm.natural_manifold(), 12, seed).unwrap();
        let ld: Vec<f64> = (1..=12).map(|d| loss_infinite_params_exact(&fm, &train.prefix(d), &m).unwrap().value).collect();
        prop_assert!(ld.windows(2).all(|w| w[1] <= w[0] + 1e-8 * scale(&m)), "{:?}", ld);
    }

    #[test]
    fn point_projector_exchanges_data_and_parameters(n in 1usize..40, seed in any::<u64>()) {
        let fm = build_torus_features(2, 2.0, 4).unwrap();
        let m = fm.analytic_second_moment().unwrap();
        let pts = sample_manifold(fm.natural_manifold(), n, seed).unwrap();
        let ld = loss_infinite_params_exact(&fm, &pts, &m).unwrap().value;
        let proj = point_projector(&fm, &m, &pts.inputs).unwrap();
        let lp = loss_infinite_data(&fm, &proj, &m).unwrap().value;
        prop_assert!((ld - lp).abs() <= 1e-8 * scale(&m), "{} vs {}", ld, lp);
    }

    #[test]
    fn feature_maps_round_trip_through_csv(s in 1usize..20, dim in 1usize..5, seed in any::<u64>()) {
        for fm in [
            build_relu_features(dim, s, seed).unwrap(),
            build_torus_features(dim.min(3), 1.5, 2).unwrap(),
            random_explicit_features(s, 7, seed).unwrap(),
        ] {
            let back = feature_map_from_csv(&feature_map_to_csv(&fm)).unwrap();
            let pts = sample_manifold(fm.natural_manifold(), 5, seed).unwrap();
            prop_assert_eq!(fm.eval(&pts.inputs).unwrap(), back.eval(&pts.inputs).unwrap());
        }
    }

    #[test]
    fn datasets_round_trip_through_csv(n in 1usize..50, dim in 1usize..5, seed in any::<u64>(), torus in any::<bool>()) {
        let spec = if torus {
            scalinglab::features::ManifoldSpec::torus(dim).unwrap()
        } else {
            scalinglab::features::ManifoldSpec::hypercube(dim).unwrap()
        };
        let mut ds = sample_manifold(spec, n, seed).unwrap();
        ds.targets = Some(DVector::from_fn(n, |i, _| i as f64 * 0.1 - 1.0));
        let back = dataset_from_csv(&dataset_to_csv(&ds)).unwrap();
        prop_assert_eq!(back, ds);
    }
}

#[test]
fn nested_data_losses_fall_with_nearly_dependent_points() {
    let seed = 11_346_183_992_138_847_462;
    let (fm, m) = relu_setup(8, seed);
    let train = sample_manifold(fm.natural_manifold(), 12, seed).unwrap();
    let ld: Vec<f64> = (1..=12).map(|d| loss_infinite_params_exact(&fm, &train.prefix(d), &m).unwrap().value).collect();
    assert!(ld.windows(2).all(|w| w[1] <= w[0]), "{ld:?}");
}

#[test]
fn curves_round_trip_through_csv() {
    let mut c = SweepConfig::preset(Regime::VarianceD);
    c.s = 32;
    c.fixed_p = Size::Finite(8);
    c.d_grid = vec![8, 16, 32, 64];
    c.seeds = 3;
    let curve = run_sweep(&c).unwrap();
    assert!(curve.points[0].resonance);
    let back = curve_from_csv(&curve_to_csv(&curve)).unwrap();
    assert_eq!(back, curve);
}
