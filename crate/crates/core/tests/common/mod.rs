#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use scalinglab::features::{Dataset, FeatureMap, Projector, TeacherWeights};

/// Test MSE/2 of a student trained by full-batch gradient descent from zero
/// on the training MSE/2, run until the weights stop moving.
pub fn gd_oracle_loss(fm: &FeatureMap, teacher: &TeacherWeights, proj: &Projector, train: &Dataset, test: &Dataset) -> f64 {
    let phi = fm.eval(&train.inputs).unwrap();
    let f = proj.student_features(&phi);
    let y = &phi * &teacher.omega;
    let n = f.nrows() as f64;
    let h = f.transpose() * &f / n;
    let top = h.clone().symmetric_eigen().eigenvalues.amax();
    let mut theta = DVector::zeros(f.ncols());
    if top > 0.0 {
        let lr = 1.0 / top;
        let fty = f.transpose() * &y / n;
        for _ in 0..20_000_000 {
            let step = (&h * &theta - &fty) * lr;
            theta -= &step;
            if step.norm() <= 1e-17 * theta.norm().max(1e-300) {
                break;
            }
        }
    }
    let phi_t = fm.eval(&test.inputs).unwrap();
    let err = proj.student_features(&phi_t) * theta - &phi_t * &teacher.omega;
    0.5 * err.norm_squared() / err.len() as f64
}

/// Smallest nonzero over largest singular value of the student features.
pub fn conditioning(fm: &FeatureMap, proj: &Projector, train: &Dataset) -> f64 {
    let f: DMatrix<f64> = proj.student_features(&fm.eval(&train.inputs).unwrap());
    let sv = f.singular_values();
    let top = sv.amax();
    let small = sv.iter().copied().filter(|&s| s > 1e-12 * top).fold(f64::INFINITY, f64::min);
    small / top
}

pub fn verdict(n: usize, name: &str, pass: bool, detail: &str) {
    println!("criterion {n:>2} {name:<32} {}  {detail}", if pass { "PASS" } else { "FAIL" });
}

pub fn mean_and_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}
