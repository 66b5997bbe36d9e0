use nalgebra::DMatrix;

use crate::error::{config, Result};
use crate::linalg;
use crate::spectral::Spectrum;

/// Tolerance on `O O^T = I` for the overlap rows.
pub const ORTHONORMAL_TOL: f64 = 1e-8;

/// `½ sum_i lambda_i (1 - sum_j (e_i · ebar_j)^2)` where row `j` of `overlaps`
/// holds the coefficients of the `j`-th data eigenvector in the spectrum's
/// eigenbasis (`overlaps[(j, i)] = e_i · ebar_j`).
pub fn eigen_loss(spectrum: &Spectrum, overlaps: &DMatrix<f64>) -> Result<f64> {
    let s = spectrum.len();
    if overlaps.nrows() > 0 && overlaps.ncols() != s {
        return config(format!("overlap matrix has {} columns for a spectrum of length {s}", overlaps.ncols()));
    }
    if overlaps.nrows() > 0 {
        let gram = overlaps * overlaps.transpose();
        let dev = (gram - DMatrix::identity(overlaps.nrows(), overlaps.nrows())).amax();
        if dev > ORTHONORMAL_TOL {
            return config(format!("overlap rows are not orthonormal (max deviation {dev:.3e})"));
        }
    }
    let terms = (0..s).map(|i| {
        let captured: f64 = if overlaps.nrows() > 0 { overlaps.column(i).norm_squared() } else { 0.0 };
        spectrum.eigenvalues[i] * (1.0 - captured)
    });
    Ok(0.5 * linalg::compensated_sum(terms).max(0.0))
}

/// `sum_{i > d} i^{-(1 + alpha_k)}`: explicit terms up to a cutover, then
/// the integral with Euler–Maclaurin corrections. The neglected remainder is
/// below `1e-13` relative for every `alpha_k > 0`.
pub fn tail_sum(alpha_k: f64, d: usize) -> Result<f64> {
    if !(alpha_k > 0.0 && alpha_k.is_finite()) {
        return config(format!("tail sums need alpha_K > 0, got {alpha_k}"));
    }
    if d < 1 {
        return config("tail sums need D >= 1");
    }
    let s = 1.0 + alpha_k;
    let n = (d + 1).max(64);
    let explicit = linalg::compensated_sum((d + 1..n).map(|i| (i as f64).powf(-s)));
    let nf = n as f64;
    let f = nf.powf(-s);
    // sum_{i >= n} f(i) = ∫_n^∞ f + f(n)/2 - f'(n)/12 + f'''(n)/720 - f^(5)(n)/30240
    let integral = nf.powf(-alpha_k) / alpha_k;
    let d1 = -s * f / nf;
    let d3 = -s * (s + 1.0) * (s + 2.0) * f / nf.powi(3);
    let d5 = -s * (s + 1.0) * (s + 2.0) * (s + 3.0) * (s + 4.0) * f / nf.powi(5);
    Ok(explicit + integral + 0.5 * f - d1 / 12.0 + d3 / 720.0 - d5 / 30240.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::synth_spectrum;
    use std::f64::consts::PI;

    #[test]
    fn empty_overlaps_give_half_trace() {
        let s = synth_spectrum(1.0, 20).unwrap();
        let l = eigen_loss(&s, &DMatrix::zeros(0, 20)).unwrap();
        assert!((l - 0.5 * s.sum()).abs() < 1e-14);
    }

    #[test]
    fn perfect_alignment_drops_head() {
        let s = synth_spectrum(1.0, 5000).unwrap();
        let d = 10;
        let mut o = DMatrix::zeros(d, 5000);
        for j in 0..d {
            o[(j, j)] = 1.0;
        }
        let l = eigen_loss(&s, &o).unwrap();
        let tail: f64 = s.eigenvalues[d..].iter().sum();
        assert!((l - 0.5 * tail).abs() < 1e-14);
    }

    #[test]
    fn perfect_alignment_infinite_tail() {
        // Head removed from zeta(2): sum_{i > 10} i^-2.
        let head: f64 = (1..=10).map(|i| 1.0 / (i * i) as f64).sum();
        let expected = PI * PI / 6.0 - head;
        assert!((tail_sum(1.0, 10).unwrap() - expected).abs() < 1e-13);
        assert!((expected - 0.095166).abs() < 1e-6);
    }

    #[test]
    fn non_orthonormal_rejected() {
        let s = synth_spectrum(1.0, 3).unwrap();
        let o = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.9, 0.1, 0.0]);
        assert!(eigen_loss(&s, &o).is_err());
    }

    #[test]
    fn tail_halves_when_d_doubles() {
        let r = tail_sum(1.0, 20_000).unwrap() / tail_sum(1.0, 10_000).unwrap();
        assert!((r - 0.5).abs() < 1e-4);
    }

    #[test]
    fn tail_slope_half() {
        let ds: Vec<f64> = (0..13).map(|k| 100.0 * 10f64.powf(k as f64 / 4.0)).collect();
        let x: Vec<f64> = ds.iter().map(|d| d.ln()).collect();
        let y: Vec<f64> = ds.iter().map(|&d| tail_sum(0.5, d as usize).unwrap().ln()).collect();
        let f = crate::fit::fit_line(&x, &y, None).unwrap();
        assert!((f.slope + 0.5).abs() < 0.01);
    }

    #[test]
    fn tail_matches_brute_force() {
        // Compensated direct sum up to 10^7, then the integral and the
        // trapezoid end correction beyond it.
        let a = 1.5;
        let n = 1e7f64;
        let brute = linalg::compensated_sum((4..10_000_000u64).map(|i| (i as f64).powf(-(1.0 + a))))
            + n.powf(-a) / a
            + 0.5 * n.powf(-(1.0 + a));
        assert!((tail_sum(a, 3).unwrap() - brute).abs() < 1e-12);
        assert!(tail_sum(0.0, 3).is_err());
    }
}
