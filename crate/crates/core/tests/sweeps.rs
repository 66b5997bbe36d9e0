use scalinglab::exactloss::{loss_finite, loss_infinite_params_exact};
use scalinglab::features::{random_projector, sample_manifold, sample_teacher};
use scalinglab::fit::fit_line;
use scalinglab::harness::{
    fit_scaling_exponent, run_sweep, CurvePoint, Regime, ScalingCurve, Size, SizeKind, SweepConfig, TeacherMode, TAG_DATA,
    TAG_PROJECTOR, TAG_TEACHER, TAG_TEST,
};
use scalinglab::replica::{replica_curve, teacher_overlaps};
use scalinglab::rng::derive_seed;
use scalinglab::spectral::synth_spectrum;

fn small_variance_d() -> SweepConfig {
    let mut c = SweepConfig::preset(Regime::VarianceD);
    c.s = 32;
    c.fixed_p = Size::Finite(8);
    c.d_grid = vec![16, 32, 64, 128];
    c.test_points = 300;
    c
}

#[test]
fn sampled_teacher_point_equals_loss_finite() {
    let mut c = small_variance_d();
    c.teacher = TeacherMode::Sampled;
    c.subtract_asymptote = false;
    c.seeds = 1;
    c.base_seed = 42;
    let curve = run_sweep(&c).unwrap();

    let fm = c.build_features().unwrap();
    let spec = fm.natural_manifold();
    let teacher = sample_teacher(32, derive_seed(42, TAG_TEACHER, 0)).unwrap();
    let proj = random_projector(32, 8, derive_seed(42, TAG_PROJECTOR, 0)).unwrap();
    let train = sample_manifold(spec, 128, derive_seed(42, TAG_DATA, 0)).unwrap();
    let test = sample_manifold(spec, 300, derive_seed(42, TAG_TEST, 0)).unwrap();
    for p in &curve.points {
        let direct = loss_finite(&fm, &teacher, &proj, &train.prefix(p.size), &test).unwrap().value;
        assert!((p.mean_log_loss - direct.ln()).abs() < 1e-10, "D = {}", p.size);
        assert_eq!(p.stderr, 0.0);
    }
}

#[test]
fn nested_infinite_parameter_curve_matches_per_prefix_solve() {
    let mut c = SweepConfig::preset(Regime::ResolutionD);
    c.cutoff = 6;
    c.d_grid = vec![5, 10, 20, 40, 80];
    c.seeds = 1;
    let curve = run_sweep(&c).unwrap();
    let fm = c.build_features().unwrap();
    let moment = fm.analytic_second_moment().unwrap();
    let train = sample_manifold(fm.natural_manifold(), 80, derive_seed(c.base_seed, TAG_DATA, 0)).unwrap();
    for p in &curve.points {
        let direct = loss_infinite_params_exact(&fm, &train.prefix(p.size), &moment).unwrap().value;
        assert!((p.mean_log_loss - direct.ln()).abs() < 1e-8, "D = {}: {} vs {}", p.size, p.mean_log_loss.exp(), direct);
    }
}

#[test]
fn stderr_shrinks_as_root_seeds() {
    let mut c = small_variance_d();
    c.seeds = 8;
    let few = run_sweep(&c).unwrap();
    c.seeds = 32;
    let many = run_sweep(&c).unwrap();
    let ratio: f64 = few.points.iter().zip(&many.points).map(|(a, b)| (a.stderr / b.stderr).ln()).sum::<f64>() / 4.0;
    let ratio = ratio.exp();
    assert!((1.4..2.9).contains(&ratio), "stderr ratio {ratio}, expected about 2");
}

#[test]
fn resonance_points_are_flagged_and_left_out() {
    let mut c = small_variance_d();
    c.fixed_p = Size::Finite(32);
    c.subtract_asymptote = false;
    c.d_grid = vec![8, 16, 30, 64, 128, 256, 512];
    c.seeds = 4;
    let curve = run_sweep(&c).unwrap();
    let flagged: Vec<usize> = curve.points.iter().filter(|p| p.resonance).map(|p| p.size).collect();
    assert_eq!(flagged, vec![30]);
    assert!(curve.points[2].flags().contains("resonance"));
    let f = fit_scaling_exponent(&curve, Some((8, 512))).unwrap();
    assert_eq!(f.n_points, 6);
}

fn synthetic_curve(sizes: &[usize], loss: impl Fn(f64) -> f64) -> ScalingCurve {
    let points = sizes
        .iter()
        .map(|&n| CurvePoint {
            size: n,
            p: Size::Inf,
            d: Size::Finite(n),
            n_seeds: 10,
            mean_log_loss: loss(n as f64).ln(),
            stderr: 0.01,
            dropped: 0,
            resonance: false,
        })
        .collect();
    ScalingCurve { regime: Regime::VarianceD, size_kind: SizeKind::D, s: 1 << 20, points, config_hash: 0, seed_base: 0 }
}

#[test]
fn fit_recovers_exact_power_law() {
    let curve = synthetic_curve(&[100, 200, 400, 800, 1600, 3200], |d| 3.0 / d);
    let f = fit_scaling_exponent(&curve, None).unwrap();
    assert!((f.exponent - 1.0).abs() < 1e-12);
    assert!((f.intercept - 3f64.ln()).abs() < 1e-10);
    assert_eq!(f.window, (200, 1600));
    assert_eq!(f.n_points, 4);
}

#[test]
fn fit_needs_four_clean_points() {
    let curve = synthetic_curve(&[100, 200, 400, 800], |d| 1.0 / d);
    assert!(fit_scaling_exponent(&curve, None).is_err());
}

#[test]
fn replica_loss_curve_has_exponent_alpha_k() {
    let s = 1_000_000;
    let grid: Vec<f64> = (0..6).map(|i| 200.0 * 2f64.powi(i)).collect();
    let sols = replica_curve(&synth_spectrum(0.5, s).unwrap(), &teacher_overlaps(s), &grid).unwrap();
    let x: Vec<f64> = grid.iter().map(|d| d.ln()).collect();
    let y: Vec<f64> = sols.iter().map(|r| r.predicted_loss.ln()).collect();
    let f = fit_line(&x, &y, None).unwrap();
    assert!((f.slope + 0.5).abs() <= 0.05, "slope {}", f.slope);
}
