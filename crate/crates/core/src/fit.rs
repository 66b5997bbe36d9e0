//! Straight-line least squares in log-log space.

use serde::{Deserialize, Serialize};

use crate::error::{config, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope, scaled by the residual variance.
    pub slope_stderr: f64,
    pub r2: f64,
    pub n: usize,
}

/// Fit `y = intercept + slope * x`, optionally with weights (inverse
/// variances). The reported stderr is scaled by the reduced chi-square, so an
/// exact line has stderr 0 whatever the weights.
pub fn fit_line(x: &[f64], y: &[f64], weights: Option<&[f64]>) -> Result<LineFit> {
    let n = x.len();
    if n != y.len() || weights.is_some_and(|w| w.len() != n) {
        return config("fit inputs have different lengths");
    }
    if n < 2 {
        return config("a line fit needs at least two points");
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return config("non-finite value in fit input");
    }
    let w: Vec<f64> = match weights {
        Some(w) if w.iter().all(|&v| v.is_finite() && v > 0.0) => w.to_vec(),
        _ => vec![1.0; n],
    };
    let sw: f64 = w.iter().sum();
    let xm = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let ym = y.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for i in 0..n {
        let dx = x[i] - xm;
        let dy = y[i] - ym;
        sxx += w[i] * dx * dx;
        sxy += w[i] * dx * dy;
        syy += w[i] * dy * dy;
    }
    if sxx <= 0.0 {
        return config("fit abscissae are all equal");
    }
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let ssr: f64 = (0..n).map(|i| w[i] * (y[i] - intercept - slope * x[i]).powi(2)).sum();
    let slope_stderr = if n > 2 { (ssr / (n - 2) as f64 / sxx).sqrt() } else { 0.0 };
    let r2 = if syy > 0.0 { 1.0 - ssr / syy } else { 1.0 };
    Ok(LineFit { slope, intercept, slope_stderr, r2, n })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 0.5 * v).collect();
        let f = fit_line(&x, &y, None).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-14);
        assert!((f.intercept - 2.0).abs() < 1e-14);
        assert!(f.slope_stderr < 1e-14);
    }

    #[test]
    fn weights_pull_toward_trusted_points() {
        let x = [0.0, 1.0, 2.0];
        let y = [0.0, 1.0, 5.0];
        let flat = fit_line(&x, &y, None).unwrap();
        let w = fit_line(&x, &y, Some(&[1e6, 1e6, 1e-6])).unwrap();
        assert!((w.slope - 1.0).abs() < 1e-3);
        assert!(flat.slope > 2.0);
    }

    #[test]
    fn rejects_degenerate() {
        assert!(fit_line(&[1.0], &[1.0], None).is_err());
        assert!(fit_line(&[1.0, 1.0], &[1.0, 2.0], None).is_err());
    }
}
