use nalgebra::DMatrix;

use crate::error::{config, Result};
use crate::features::{Dataset, FeatureMap, Moment, Projector, SecondMoment};
use crate::linalg;

/// Hard cap on `S` for the `S^4` tensor.
pub const QUARTIC_S_MAX: usize = 16;

/// `T_{abcd} = E_x[F_a F_b F_c F_d]`, stored as an `S^2 × S^2` matrix with
/// row `a S + b` and column `c S + d`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuarticTensor {
    s: usize,
    pub values: DMatrix<f64>,
    pub sample_count: usize,
}

impl QuarticTensor {
    /// Build from an explicit `S^2 × S^2` table.
    pub fn from_matrix(s: usize, values: DMatrix<f64>, sample_count: usize) -> Result<Self> {
        if values.nrows() != s * s || values.ncols() != s * s {
            return config("quartic table must be S^2 × S^2");
        }
        Ok(Self { s, values, sample_count })
    }

    pub fn s(&self) -> usize {
        self.s
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize, c: usize, d: usize) -> f64 {
        self.values[(a * self.s + b, c * self.s + d)]
    }
}

/// Sample estimate of the quartic moment tensor over `data`.
pub fn quartic_tensor(fm: &FeatureMap, data: &Dataset, s_max: usize) -> Result<QuarticTensor> {
    let s = fm.n_features();
    let cap = s_max.min(QUARTIC_S_MAX);
    if s > cap {
        return config(format!("quartic tensor needs S <= {cap}, got S = {s}"));
    }
    if data.is_empty() {
        return config("quartic tensor needs at least one sample");
    }
    let n = data.len();
    let mut acc = DMatrix::<f64>::zeros(s * s, s * s);
    let block = 8192;
    let mut start = 0;
    while start < n {
        let end = (start + block).min(n);
        let phi = fm.eval(&data.inputs.slice(start, end))?;
        let pairs = DMatrix::from_fn(end - start, s * s, |r, k| phi[(r, k / s)] * phi[(r, k % s)]);
        acc += pairs.transpose() * &pairs;
        start = end;
    }
    acc /= n as f64;
    linalg::symmetrize(&mut acc);
    QuarticTensor::from_matrix(s, acc, n)
}

/// `G = P^T C^+ P` and `H = R R^T` with `R = I - G 𝒞`.
fn correction_operators(projector: &Projector, moment: &SecondMoment) -> (DMatrix<f64>, DMatrix<f64>) {
    let s = moment.dim();
    let p = projector.to_dense();
    let (c_inv, _) = linalg::pinv_sym(&projector.sandwich(moment));
    let g = p.transpose() * c_inv * &p;
    let gc = match &moment.moment {
        Moment::Dense(c) => &g * c,
        Moment::Diagonal(c) => {
            let mut m = g.clone();
            for (j, mut col) in m.column_iter_mut().enumerate() {
                col.scale_mut(c[j]);
            }
            m
        }
    };
    let r = DMatrix::identity(s, s) - gc;
    let h = &r * r.transpose();
    (g, h)
}

/// Coefficient `c` of the leading correction
/// `E[L(D, P)] - L(P) = c / D + O(D^{-2})`:
/// `c = (1/2S) sum_{abcd} T_{abcd} G_{bc} H_{da}`.
pub fn variance_correction(projector: &Projector, moment: &SecondMoment, t: &QuarticTensor) -> Result<f64> {
    let s = moment.dim();
    if t.s() != s || projector.s() != s {
        return config("projector, second moment and quartic tensor disagree on S");
    }
    let (g, h) = correction_operators(projector, moment);
    let mut terms = Vec::with_capacity(s.pow(4));
    for a in 0..s {
        for b in 0..s {
            for c in 0..s {
                let gbc = g[(b, c)];
                for d in 0..s {
                    terms.push(t.get(a, b, c, d) * gbc * h[(d, a)]);
                }
            }
        }
    }
    Ok(linalg::pairwise_sum(&terms) / (2.0 * s as f64))
}

/// Same coefficient without the tensor: `(1/2S) E[(F^T G F)(F^T H F)]`,
/// averaged over the feature rows `phi` (`n × S`).
pub fn variance_correction_direct(projector: &Projector, moment: &SecondMoment, phi: &DMatrix<f64>) -> Result<f64> {
    let s = moment.dim();
    if phi.ncols() != s || projector.s() != s || phi.nrows() == 0 {
        return config("feature rows do not match S");
    }
    let (g, h) = correction_operators(projector, moment);
    let fg = phi * &g;
    let fh = phi * &h;
    let terms: Vec<f64> = (0..phi.nrows())
        .map(|i| fg.row(i).dot(&phi.row(i)) * fh.row(i).dot(&phi.row(i)))
        .collect();
    Ok(linalg::pairwise_sum(&terms) / phi.nrows() as f64 / (2.0 * s as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exactloss::loss_infinite_data;
    use crate::features::*;
    use nalgebra::DVector;

    /// Isserlis: `E[F_a F_b F_c F_d] = Σ_ab Σ_cd + Σ_ac Σ_bd + Σ_ad Σ_bc`.
    fn gaussian_tensor(sigma: &DMatrix<f64>) -> QuarticTensor {
        let s = sigma.nrows();
        let m = DMatrix::from_fn(s * s, s * s, |r, k| {
            let (a, b, c, d) = (r / s, r % s, k / s, k % s);
            sigma[(a, b)] * sigma[(c, d)] + sigma[(a, c)] * sigma[(b, d)] + sigma[(a, d)] * sigma[(b, c)]
        });
        QuarticTensor::from_matrix(s, m, usize::MAX).unwrap()
    }

    #[test]
    fn full_student_has_no_correction() {
        let fm = build_relu_features(3, 6, 1).unwrap();
        let data = sample_manifold(ManifoldSpec::hypercube(3).unwrap(), 4000, 2).unwrap();
        let c = second_moment_features(&fm, &data).unwrap();
        let t = quartic_tensor(&fm, &data, 16).unwrap();
        let v = variance_correction(&Projector::full(6), &c, &t).unwrap();
        assert!(v.abs() <= 1e-8, "{v}");
    }

    #[test]
    fn wick_oracle() {
        // Diagonal Gaussian toy: the bracket reduces to P * L(P).
        let lam = DVector::from_vec(vec![1.0, 0.5, 0.25, 0.125]);
        let moment = SecondMoment::diagonal(lam.clone(), MomentRole::FeatureFeature, usize::MAX);
        let t = gaussian_tensor(&DMatrix::from_diagonal(&lam));
        let fm = build_spectral_features(&[1.0, 0.5, 0.25, 0.125]).unwrap();
        for (indices, p) in [(vec![0], 1.0), (vec![0, 2], 2.0), (vec![1, 2, 3], 3.0)] {
            let proj = Projector::select(4, indices).unwrap();
            let lp = loss_infinite_data(&fm, &proj, &moment).unwrap().value;
            let c = variance_correction(&proj, &moment, &t).unwrap();
            assert!((c - p * lp).abs() < 1e-12, "{c} vs {}", p * lp);
        }
    }

    #[test]
    fn tensor_symmetries() {
        let fm = build_relu_features(2, 4, 3).unwrap();
        let data = sample_manifold(ManifoldSpec::hypercube(2).unwrap(), 500, 4).unwrap();
        let t = quartic_tensor(&fm, &data, 16).unwrap();
        for a in 0..4 {
            for b in 0..4 {
                for c in 0..4 {
                    for d in 0..4 {
                        let v = t.get(a, b, c, d);
                        assert!((v - t.get(c, d, a, b)).abs() <= 1e-12 * v.abs().max(1.0));
                        assert!((v - t.get(b, a, c, d)).abs() <= 1e-12 * v.abs().max(1.0));
                        assert!((v - t.get(a, b, d, c)).abs() <= 1e-12 * v.abs().max(1.0));
                    }
                }
            }
        }
    }

    #[test]
    fn tensor_and_direct_forms_agree() {
        let fm = build_relu_features(3, 8, 5).unwrap();
        let data = sample_manifold(ManifoldSpec::hypercube(3).unwrap(), 3000, 6).unwrap();
        let c = second_moment_features(&fm, &data).unwrap();
        let t = quartic_tensor(&fm, &data, 16).unwrap();
        let proj = random_projector(8, 3, 7).unwrap();
        let a = variance_correction(&proj, &c, &t).unwrap();
        let b = variance_correction_direct(&proj, &c, &fm.eval(&data.inputs).unwrap()).unwrap();
        assert!((a - b).abs() <= 1e-10 * a.abs());
    }

    #[test]
    fn size_guard() {
        let fm = build_relu_features(2, 17, 3).unwrap();
        let data = sample_manifold(ManifoldSpec::hypercube(2).unwrap(), 10, 4).unwrap();
        assert!(quartic_tensor(&fm, &data, 64).is_err());
        let fm = build_relu_features(2, 9, 3).unwrap();
        assert!(quartic_tensor(&fm, &data, 8).is_err());
    }
}
