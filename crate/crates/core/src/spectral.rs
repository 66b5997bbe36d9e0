//! Spectra of second moments and kernels, power-law fits, and synthetic
//! power-law spectra.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::features::io::format_float;
use crate::features::{Moment, SecondMoment};
use crate::fit::fit_line;
use crate::linalg;

/// Largest relative asymmetry accepted by [`eig_spectrum`].
pub const SYMMETRY_TOL: f64 = 1e-8;

/// Largest dense matrix [`eig_spectrum`] will decompose.
pub const MAX_DENSE_DIM: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpectrumSource {
    Empirical,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq)]
enum Basis {
    /// Eigenvectors as columns, aligned with `eigenvalues`.
    Dense(DMatrix<f64>),
    /// Diagonal input: eigenvector `i` is the unit vector `e_{order[i]}`.
    Permutation(Vec<usize>),
}

/// Nonincreasing, nonnegative eigenvalues with optional eigenvectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    pub source: SpectrumSource,
    pub alpha_k: Option<f64>,
    /// Number of slightly negative eigenvalues clamped to zero.
    pub clamped: usize,
    basis: Option<Basis>,
}

impl Spectrum {
    /// Wrap a list of eigenvalues; it is sorted and clamped at zero.
    pub fn from_values(mut values: Vec<f64>, source: SpectrumSource) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return config("spectrum contains non-finite values");
        }
        values.sort_by(|a, b| b.total_cmp(a));
        let clamped = clamp(&mut values);
        Ok(Self { eigenvalues: values, source, alpha_k: None, clamped, basis: None })
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn sum(&self) -> f64 {
        linalg::compensated_sum(self.eigenvalues.iter().copied())
    }

    pub fn has_eigenvectors(&self) -> bool {
        self.basis.is_some()
    }

    /// Eigenvector `i` (unit norm), when the spectrum came from a matrix.
    pub fn eigenvector(&self, i: usize) -> Option<DVector<f64>> {
        match self.basis.as_ref()? {
            Basis::Dense(v) => Some(v.column(i).into_owned()),
            Basis::Permutation(order) => {
                let mut e = DVector::zeros(order.len());
                e[order[i]] = 1.0;
                Some(e)
            }
        }
    }

    /// Coefficients of `v` in the eigenbasis, `c_i = e_i · v`.
    pub fn project(&self, v: &DVector<f64>) -> Option<DVector<f64>> {
        match self.basis.as_ref()? {
            Basis::Dense(b) => Some(b.tr_mul(v)),
            Basis::Permutation(order) => Some(DVector::from_iterator(order.len(), order.iter().map(|&j| v[j]))),
        }
    }

    /// Same eigenvalues times `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.eigenvalues.iter_mut().for_each(|v| *v *= c);
        out
    }

    /// Two-column CSV `index,eigenvalue`, indices starting at 1.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,eigenvalue\n");
        for (i, v) in self.eigenvalues.iter().enumerate() {
            let _ = writeln!(out, "{},{}", i + 1, format_float(*v));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let mut values = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let v = rec.get(1).ok_or_else(|| Error::Format("spectrum row needs two columns".into()))?;
            values.push(v.parse().map_err(|_| Error::Format(format!("bad eigenvalue `{v}`")))?);
        }
        Self::from_values(values, SpectrumSource::Empirical)
    }
}

fn clamp(values: &mut [f64]) -> usize {
    let mut n = 0;
    for v in values.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
            n += 1;
        }
    }
    n
}

/// Eigen-decomposition of a symmetric second moment.
pub fn eig_spectrum(m: &SecondMoment) -> Result<Spectrum> {
    match &m.moment {
        Moment::Diagonal(d) => {
            let mut order: Vec<usize> = (0..d.len()).collect();
            order.sort_by(|&a, &b| d[b].total_cmp(&d[a]));
            let mut values: Vec<f64> = order.iter().map(|&i| d[i]).collect();
            let clamped = clamp(&mut values);
            Ok(Spectrum {
                eigenvalues: values,
                source: SpectrumSource::Empirical,
                alpha_k: None,
                clamped,
                basis: Some(Basis::Permutation(order)),
            })
        }
        Moment::Dense(a) => {
            if a.nrows() != a.ncols() {
                return config("eigen-decomposition needs a square matrix");
            }
            if a.nrows() > MAX_DENSE_DIM {
                return config(format!("matrix of size {} exceeds the {MAX_DENSE_DIM} cap", a.nrows()));
            }
            let asym = linalg::asymmetry(a);
            if asym > SYMMETRY_TOL {
                return config(format!("matrix is not symmetric (relative asymmetry {asym:.3e})"));
            }
            let mut sym = a.clone();
            linalg::symmetrize(&mut sym);
            let (mut values, vectors) = linalg::sym_eigen_desc(&sym);
            let clamped = clamp(&mut values);
            Ok(Spectrum {
                eigenvalues: values,
                source: SpectrumSource::Empirical,
                alpha_k: None,
                clamped,
                basis: Some(Basis::Dense(vectors)),
            })
        }
    }
}

/// `lambda_i = i^{-(1 + alpha_k)}` for `i = 1..=s`.
pub fn synth_spectrum(alpha_k: f64, s: usize) -> Result<Spectrum> {
    if !(alpha_k > 0.0 && alpha_k.is_finite()) {
        return config(format!("alpha_K must be positive, got {alpha_k}"));
    }
    if s == 0 {
        return config("a spectrum needs at least one eigenvalue");
    }
    let p = -(1.0 + alpha_k);
    let eigenvalues = (1..=s).map(|i| (i as f64).powf(p)).collect();
    Ok(Spectrum { eigenvalues, source: SpectrumSource::Synthetic, alpha_k: Some(alpha_k), clamped: 0, basis: None })
}

/// Result of a power-law fit. `exponent` is reported in the convention of
/// the caller (for spectra, `alpha_K = -slope - 1`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub exponent: f64,
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
    /// Inclusive range of 1-based indices (or sizes) used.
    pub window: (usize, usize),
    pub r2: f64,
    pub n_points: usize,
    /// Set when the requested window had to be shrunk.
    pub shrunk: bool,
}

impl ExponentFit {
    pub const CSV_HEADER: &'static str = "exponent,slope,intercept,stderr,window_lo,window_hi,r2,n_points,shrunk";

    pub fn csv_record(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            format_float(self.exponent),
            format_float(self.slope),
            format_float(self.intercept),
            format_float(self.stderr),
            self.window.0,
            self.window.1,
            format_float(self.r2),
            self.n_points,
            self.shrunk
        )
    }

    /// Header plus the one-line record.
    pub fn to_csv(&self) -> String {
        format!("{}\n{}\n", Self::CSV_HEADER, self.csv_record())
    }
}

/// Minimum number of indices in a spectral fit window.
pub const MIN_WINDOW: usize = 10;

/// Default window `[max(10, 0.02 S), 0.5 S]` (1-based, inclusive).
pub fn default_spectral_window(s: usize) -> (usize, usize) {
    let lo = 10usize.max((0.02 * s as f64).round() as usize);
    let hi = (s / 2).max(lo);
    (lo, hi)
}

fn check_window(s: usize, window: (usize, usize)) -> Result<()> {
    let (lo, hi) = window;
    if lo < 1 || hi > s || hi < lo {
        return config(format!("fit window [{lo}, {hi}] is outside 1..={s}"));
    }
    if hi - lo + 1 < MIN_WINDOW {
        return config(format!("fit window [{lo}, {hi}] has fewer than {MIN_WINDOW} points"));
    }
    Ok(())
}

/// Least-squares slope of `log lambda_i` against `log i` over the window.
/// Nonpositive eigenvalues inside the window shrink it to the positive
/// prefix (flagged).
pub fn fit_spectral_exponent(s: &Spectrum, window: Option<(usize, usize)>) -> Result<ExponentFit> {
    let (lo, mut hi) = window.unwrap_or_else(|| default_spectral_window(s.len()));
    check_window(s.len(), (lo, hi))?;
    let mut shrunk = false;
    if let Some(bad) = (lo..=hi).find(|&i| s.eigenvalues[i - 1] <= 0.0) {
        hi = bad - 1;
        shrunk = true;
        if hi < lo || hi - lo + 1 < MIN_WINDOW {
            return config(format!("fewer than {MIN_WINDOW} positive eigenvalues from index {lo}"));
        }
    }
    let x: Vec<f64> = (lo..=hi).map(|i| (i as f64).ln()).collect();
    let y: Vec<f64> = (lo..=hi).map(|i| s.eigenvalues[i - 1].ln()).collect();
    let f = fit_line(&x, &y, None)?;
    Ok(ExponentFit {
        exponent: -f.slope - 1.0,
        slope: f.slope,
        intercept: f.intercept,
        stderr: f.slope_stderr,
        window: (lo, hi),
        r2: f.r2,
        n_points: f.n,
        shrunk,
    })
}

/// Default window for [`partial_sum_exponent`]: well inside the spectrum so
/// that truncation at `S` barely bends the tail.
pub fn default_partial_sum_window(s: usize) -> (usize, usize) {
    let lo = 30usize.max(s / 10_000);
    let hi = (s / 1000).max(10 * lo).min(s / 2);
    (lo, hi)
}

/// Fit of `log(sum_{i>n} lambda_i / sum lambda)` against `log n`; the
/// exponent is `-slope`, an estimate of `alpha_K` that stays usable when
/// `alpha_K` is small.
pub fn partial_sum_exponent(s: &Spectrum, window: Option<(usize, usize)>) -> Result<ExponentFit> {
    if s.is_empty() {
        return config("partial sums of an empty spectrum");
    }
    let (lo, mut hi) = window.unwrap_or_else(|| default_partial_sum_window(s.len()));
    check_window(s.len(), (lo, hi))?;
    let total = s.sum();
    if total <= 0.0 {
        return config("spectrum has zero total weight");
    }
    // tails[n] = sum_{i > n} lambda_i, accumulated from the small end.
    let mut tails = vec![0.0; s.len() + 1];
    let mut acc = 0.0;
    let mut comp = 0.0;
    for n in (0..s.len()).rev() {
        let v = s.eigenvalues[n];
        let t = acc + v;
        comp += if acc.abs() >= v.abs() { (acc - t) + v } else { (v - t) + acc };
        acc = t;
        tails[n] = acc + comp;
    }
    let mut shrunk = false;
    if let Some(bad) = (lo..=hi).find(|&n| tails[n] <= 0.0) {
        hi = bad - 1;
        shrunk = true;
        if hi < lo || hi - lo + 1 < MIN_WINDOW {
            return config("partial sums vanish inside the fit window");
        }
    }
    let x: Vec<f64> = (lo..=hi).map(|n| (n as f64).ln()).collect();
    let y: Vec<f64> = (lo..=hi).map(|n| (tails[n] / total).ln()).collect();
    let f = fit_line(&x, &y, None)?;
    Ok(ExponentFit {
        exponent: -f.slope,
        slope: f.slope,
        intercept: f.intercept,
        stderr: f.slope_stderr,
        window: (lo, hi),
        r2: f.r2,
        n_points: f.n,
        shrunk,
    })
}
