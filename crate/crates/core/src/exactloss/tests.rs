use super::*;
use crate::features::*;
use nalgebra::DVector;

fn relu_setup(d: usize, s: usize, seed: u64) -> (FeatureMap, ManifoldSpec) {
    (build_relu_features(d, s, seed).unwrap(), ManifoldSpec::hypercube(d).unwrap())
}

fn basis_teacher(s: usize, m: usize) -> TeacherWeights {
    let mut w = vec![0.0; s];
    w[m] = 1.0;
    TeacherWeights::from_vec(w)
}

/// Plain gradient descent on `(1/2D)|f theta - y|^2` from zero with step
/// `1/lambda_max`, run until the iterate stops moving.
fn gd_oracle(f: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let d = f.nrows() as f64;
    let h = f.transpose() * f / d;
    let lmax = crate::linalg::sym_eigen_desc(&h).0[0];
    let eta = 1.0 / lmax;
    let b = f.transpose() * y / d;
    let mut theta = DVector::zeros(f.ncols());
    for _ in 0..50_000_000u64 {
        let step = (&b - &h * &theta) * eta;
        theta += &step;
        if step.norm() <= 1e-16 * theta.norm().max(1e-300) {
            break;
        }
    }
    theta
}

#[test]
fn full_student_interpolates_on_train() {
    let (fm, spec) = relu_setup(3, 10, 1);
    let train = sample_manifold(spec, 25, 2).unwrap();
    let t = sample_teacher(10, 3).unwrap();
    let l = loss_finite(&fm, &t, &Projector::full(10), &train, &train).unwrap();
    assert!(l.value < 1e-10, "{}", l.value);
}

#[test]
fn empty_train_is_an_error() {
    let (fm, spec) = relu_setup(2, 4, 1);
    let test = sample_manifold(spec, 5, 2).unwrap();
    let mut empty = test.clone();
    empty.inputs = Points::new(2, vec![]).unwrap();
    let t = sample_teacher(4, 1).unwrap();
    assert!(loss_finite(&fm, &t, &Projector::full(4), &empty, &test).is_err());
}

#[test]
fn single_point_conditional_variance() {
    let (fm, spec) = relu_setup(2, 40, 4);
    let train = sample_manifold(spec, 1, 5).unwrap();
    let test = sample_manifold(spec, 3000, 6).unwrap();
    // Direct formula: ½ mean_x [K(x,x) - K(x,x1)^2 / K(x1,x1)].
    let f1 = fm.eval_point(train.inputs.row(0)).unwrap();
    let k11 = f1.norm_squared() / 40.0;
    let phi = fm.eval(&test.inputs).unwrap();
    let mut direct = 0.0;
    for r in phi.row_iter() {
        let kxx = r.norm_squared() / 40.0;
        let kx1 = r.transpose().dot(&f1) / 40.0;
        direct += kxx - kx1 * kx1 / k11;
    }
    direct *= 0.5 / 3000.0;
    let averaged = expected_loss_finite_mc(&fm, &Projector::full(40), &train, &test).unwrap().value;
    assert!((averaged - direct).abs() <= 1e-10 * direct);
    let lim = loss_infinite_params(&fm, &train, &test).unwrap().value;
    assert!((lim - direct).abs() <= 1e-10 * direct);
}

#[test]
fn matches_gradient_descent_oracle() {
    let (fm, spec) = relu_setup(2, 6, 7);
    let train = sample_manifold(spec, 4, 8).unwrap();
    let test = sample_manifold(spec, 500, 9).unwrap();
    let t = sample_teacher(6, 10).unwrap();
    let proj = random_projector(6, 3, 11).unwrap();
    let phi = fm.eval(&train.inputs).unwrap();
    let f = proj.student_features(&phi);
    let theta = gd_oracle(&f, &(&phi * &t.omega));
    let phi_t = fm.eval(&test.inputs).unwrap();
    let err = proj.student_features(&phi_t) * theta - &phi_t * &t.omega;
    let gd = 0.5 * err.norm_squared() / 500.0;
    let exact = loss_finite(&fm, &t, &proj, &train, &test).unwrap().value;
    assert!((gd - exact).abs() <= 1e-6 * exact, "{gd} vs {exact}");
}

#[test]
fn teacher_average_equals_basis_sum() {
    // E_omega over N(0, I/S) of a quadratic form is the basis sum over S.
    let (fm, spec) = relu_setup(3, 12, 12);
    let train = sample_manifold(spec, 9, 13).unwrap();
    let pool = sample_manifold(spec, 700, 14).unwrap();
    let moment = second_moment_features(&fm, &pool).unwrap();
    for proj in [random_projector(12, 5, 15).unwrap(), random_projector(12, 11, 16).unwrap(), Projector::full(12)] {
        let sum: f64 = (0..12).map(|m| loss_finite(&fm, &basis_teacher(12, m), &proj, &train, &pool).unwrap().value).sum();
        let oracle = sum / 12.0;
        let feat = expected_loss_finite(&fm, &proj, &train, &moment).unwrap().value;
        let data = expected_loss_finite_mc(&fm, &proj, &train, &pool).unwrap().value;
        assert!((feat - oracle).abs() <= 1e-8 * oracle, "{feat} vs {oracle}");
        assert!((data - oracle).abs() <= 1e-8 * oracle, "{data} vs {oracle}");
    }
}

#[test]
fn infinite_data_limits() {
    let lam = [3.0, 2.0, 1.0, 0.5, 0.25];
    let fm = build_spectral_features(&lam).unwrap();
    let moment = SecondMoment::diagonal(DVector::from_row_slice(&lam), MomentRole::FeatureFeature, usize::MAX);
    let full = loss_infinite_data(&fm, &Projector::full(5), &moment).unwrap().value;
    assert!(full.abs() < 1e-10);
    let one = loss_infinite_data(&fm, &Projector::select(5, vec![0]).unwrap(), &moment).unwrap().value;
    let hand = lam[1..].iter().sum::<f64>() / (2.0 * 5.0);
    assert!((one - hand).abs() < 1e-14);
}

#[test]
fn infinite_data_matches_large_d() {
    let (fm, spec) = relu_setup(4, 64, 17);
    let pool = sample_manifold(spec, 20_000, 18).unwrap();
    let moment = second_moment_features(&fm, &pool).unwrap();
    let proj = random_projector(64, 20, 19).unwrap();
    let lp = loss_infinite_data(&fm, &proj, &moment).unwrap().value;
    let train = sample_manifold(spec, 1_000_000, 20).unwrap();
    let ld = expected_loss_finite(&fm, &proj, &train, &moment).unwrap().value;
    assert!((ld - lp).abs() <= 0.02 * lp, "{ld} vs {lp}");
    let t = sample_teacher(64, 21).unwrap();
    let per = loss_infinite_data_for_teacher(&proj, &moment, &t);
    let fin = loss_finite(&fm, &t, &proj, &train.prefix(200_000), &pool).unwrap().value;
    assert!((fin - per).abs() <= 0.02 * per, "{fin} vs {per}");
}

#[test]
fn excess_identities() {
    let (fm, spec) = relu_setup(3, 16, 22);
    let pool = sample_manifold(spec, 2000, 23).unwrap();
    let moment = second_moment_features(&fm, &pool).unwrap();
    let proj = random_projector(16, 6, 24).unwrap();
    let train = sample_manifold(spec, 40, 25).unwrap();
    let l = expected_loss_finite(&fm, &proj, &train, &moment).unwrap().value;
    let lp = loss_infinite_data(&fm, &proj, &moment).unwrap().value;
    let ex = excess_over_infinite_data(&fm, &proj, &train, &moment).unwrap();
    assert!(ex >= 0.0);
    assert!((l - lp - ex).abs() <= 1e-9 * l);

    let small = sample_manifold(spec, 5, 26).unwrap();
    let l = expected_loss_finite_mc(&fm, &proj, &small, &pool).unwrap().value;
    let ld = loss_infinite_params(&fm, &small, &pool).unwrap().value;
    let ex = excess_over_infinite_params(&fm, &proj, &small, &pool).unwrap();
    assert!(ex >= 0.0);
    assert!((l - ld - ex).abs() <= 1e-9 * l);
}

#[test]
fn interpolation_at_training_points() {
    let (fm, spec) = relu_setup(2, 30, 27);
    let train = sample_manifold(spec, 6, 28).unwrap();
    let one = train.prefix(1);
    let l = loss_infinite_params(&fm, &train, &one).unwrap().value;
    assert!(l.abs() < 1e-10);
}

#[test]
fn single_point_integrand_nonnegative() {
    let (fm, spec) = relu_setup(3, 25, 29);
    let train = sample_manifold(spec, 1, 30).unwrap();
    let test = sample_manifold(spec, 200, 31).unwrap();
    for i in 0..200 {
        let l = loss_infinite_params(&fm, &train, &Dataset { inputs: test.inputs.slice(i, i + 1), ..test.clone() }).unwrap().value;
        assert!(l >= 0.0);
    }
}

#[test]
fn infinite_params_matches_teacher_average() {
    let (fm, spec) = relu_setup(3, 512, 32);
    let train = sample_manifold(spec, 30, 33).unwrap();
    let test = sample_manifold(spec, 2000, 34).unwrap();
    let ld = loss_infinite_params(&fm, &train, &test).unwrap().value;
    let n = 200;
    let vals: Vec<f64> = (0..n)
        .map(|k| {
            let t = sample_teacher(512, 1000 + k).unwrap();
            loss_finite(&fm, &t, &Projector::full(512), &train, &test).unwrap().value
        })
        .collect();
    let mean = vals.iter().sum::<f64>() / n as f64;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    assert!((mean - ld).abs() < 4.0 * se, "{mean} ± {se} vs {ld}");
}

#[test]
fn exact_and_sampled_infinite_params_agree_for_torus() {
    let fm = build_torus_features(2, 2.0, 6).unwrap();
    let moment = fm.analytic_second_moment().unwrap();
    let spec = fm.natural_manifold();
    let train = sample_manifold(spec, 20, 35).unwrap();
    let test = sample_manifold(spec, 40_000, 36).unwrap();
    let exact = loss_infinite_params_exact(&fm, &train, &moment).unwrap().value;
    let mc = loss_infinite_params(&fm, &train, &test).unwrap().value;
    assert!((exact - mc).abs() < 0.03 * exact, "{exact} vs {mc}");
}

#[test]
fn dense_projector_loss_matches_qr_oracle() {
    // With W = R 𝒞^{1/2}, the explained part of L(P) is sum_i c_i Π_ii where
    // Π projects onto the row space of W; Π comes from a QR factorization.
    let lam: Vec<f64> = (1..=30).map(|i| (i as f64).powi(-2)).collect();
    let fm = build_spectral_features(&lam).unwrap();
    let moment = SecondMoment::diagonal(DVector::from_vec(lam.clone()), MomentRole::FeatureFeature, usize::MAX);
    let proj = random_subspace_projector(30, 7, 37).unwrap();
    let lp = loss_infinite_data(&fm, &proj, &moment).unwrap().value;
    let r = proj.to_dense();
    let wt = DMatrix::from_fn(30, 7, |j, i| r[(i, j)] * lam[j].sqrt());
    let q = wt.qr().q();
    let explained: f64 = (0..30).map(|i| lam[i] * q.row(i).norm_squared()).sum();
    let oracle = (lam.iter().sum::<f64>() - explained) / 60.0;
    assert!((lp - oracle).abs() <= 1e-12 * oracle, "{lp} vs {oracle}");
}
