//! Ridgeless, noise-free replica prediction of the infinite-feature loss.
//!
//! `kappa` is the nontrivial root of `sum_i lambda_i / (kappa + D lambda_i) = 1`,
//! `gamma = sum_i D lambda_i^2 / (kappa + D lambda_i)^2`, and the predicted
//! mean squared error is
//! `E = kappa^2 / (1 - gamma) * sum_i lambda_i wbar_i^2 / (kappa + D lambda_i)^2`.
//! [`ReplicaSolution::predicted_loss`] reports `E / 2`, the same half-MSE
//! units as the rest of the crate.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, numeric, Result};
use crate::exactloss::{loss_infinite_params, loss_infinite_params_exact};
use crate::features::io::format_float;
use crate::features::{sample_manifold, second_moment_features, FeatureMap, SecondMoment, TeacherWeights};
use crate::rng;
use crate::spectral::{eig_spectrum, Spectrum};

/// Default residual tolerance on the fixed point.
pub const KAPPA_TOL: f64 = 1e-10;

/// Squared target coefficients in the eigenbasis.
#[derive(Debug, Clone, PartialEq)]
pub enum Overlaps {
    /// Every mode gets the same value (teacher-student mode uses `1/S`).
    Uniform(f64),
    PerMode(Vec<f64>),
}

impl Overlaps {
    #[inline]
    fn get(&self, i: usize) -> f64 {
        match self {
            Overlaps::Uniform(v) => *v,
            Overlaps::PerMode(v) => v[i],
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReplicaInput<'a> {
    pub spectrum: &'a Spectrum,
    pub overlaps: Overlaps,
    pub d: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaSolution {
    pub kappa: f64,
    /// `D >= S`: only the trivial root `kappa = 0` exists.
    pub saturated: bool,
    pub residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicaSolution {
    pub kappa: f64,
    pub gamma: f64,
    /// Half the predicted mean squared error.
    pub predicted_loss: f64,
    pub saturated: bool,
}

/// Teacher-student overlaps `wbar_i^2 = 1/S`.
pub fn teacher_overlaps(s: usize) -> Overlaps {
    Overlaps::Uniform(1.0 / s as f64)
}

/// Overlaps of a specific teacher: `wbar_i^2 = (e_i · omega)^2` with `e_i`
/// the eigenvectors of the feature second moment.
pub fn empirical_overlaps(spectrum: &Spectrum, teacher: &TeacherWeights) -> Result<Overlaps> {
    if teacher.len() != spectrum.len() {
        return config("teacher length does not match the spectrum");
    }
    match spectrum.project(&teacher.omega) {
        Some(c) => Ok(Overlaps::PerMode(c.iter().map(|v| v * v).collect())),
        None => config("empirical overlaps need a spectrum with eigenvectors"),
    }
}

/// `g(kappa) = sum lambda/(kappa + D lambda) - 1` and its derivative, with
/// compensated accumulation (spectra can hold ~10^8 entries).
fn g_and_slope(eigs: &[f64], d: f64, kappa: f64) -> (f64, f64) {
    let (mut s, mut cs) = (0.0f64, 0.0f64);
    let (mut t, mut ct) = (0.0f64, 0.0f64);
    for &l in eigs {
        if l <= 0.0 {
            continue;
        }
        let q = 1.0 / (kappa + d * l);
        let v = l * q;
        let y = s + v;
        cs += if s.abs() >= v.abs() { (s - y) + v } else { (v - y) + s };
        s = y;
        let w = v * q;
        let z = t + w;
        ct += if t.abs() >= w.abs() { (t - z) + w } else { (w - z) + t };
        t = z;
    }
    ((s + cs) - 1.0, -(t + ct))
}

/// Nontrivial root of `sum lambda_i / (kappa + D lambda_i) = 1`.
///
/// Log-space bisection on `[eps * lambda_min * D, lambda_1 * S]` down to a
/// relative bracket width of `1e-3`, then Newton steps kept inside the
/// bracket until the residual drops below `tol`.
pub fn solve_kappa(spectrum: &Spectrum, d: f64, tol: f64) -> Result<KappaSolution> {
    let eigs = &spectrum.eigenvalues;
    let top = eigs.first().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return config("replica equations need lambda_1 > 0");
    }
    if !(d > 0.0 && d.is_finite()) {
        return config(format!("dataset size must be positive, got {d}"));
    }
    let n_pos = eigs.iter().filter(|&&l| l > 0.0).count();
    if d >= n_pos as f64 {
        return Ok(KappaSolution { kappa: 0.0, saturated: true, residual: 0.0, iterations: 0 });
    }
    let smallest = eigs.iter().rev().copied().find(|&l| l > 0.0).unwrap_or(top);
    let mut hi = top * n_pos as f64;
    let mut lo = 1e-6 * smallest * d;
    let mut iterations = 0;
    while g_and_slope(eigs, d, lo).0 <= 0.0 {
        lo *= 1e-6;
        iterations += 1;
        if lo < f64::MIN_POSITIVE || iterations > 40 {
            return numeric("could not bracket the replica fixed point");
        }
    }
    while hi / lo > 1.0 + 1e-3 {
        let mid = (lo * hi).sqrt();
        if g_and_slope(eigs, d, mid).0 > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        iterations += 1;
    }
    let mut kappa = (lo * hi).sqrt();
    for _ in 0..200 {
        let (g, dg) = g_and_slope(eigs, d, kappa);
        iterations += 1;
        if g.abs() < tol {
            return Ok(KappaSolution { kappa, saturated: false, residual: g.abs(), iterations });
        }
        if g > 0.0 {
            lo = kappa;
        } else {
            hi = kappa;
        }
        let newton = kappa - g / dg;
        kappa = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            let (g, _) = g_and_slope(eigs, d, kappa);
            if g.abs() < tol {
                return Ok(KappaSolution { kappa, saturated: false, residual: g.abs(), iterations });
            }
            return numeric(format!("replica fixed point stalled with residual {:.3e}", g.abs()));
        }
    }
    numeric("replica fixed point did not converge")
}

/// `gamma = sum_i D lambda_i^2 / (kappa + D lambda_i)^2`.
pub fn gamma(spectrum: &Spectrum, d: f64, kappa: f64) -> Result<f64> {
    if kappa < 0.0 {
        return config("kappa must be nonnegative");
    }
    let terms = spectrum.eigenvalues.iter().filter(|&&l| l > 0.0).map(|&l| {
        let q = l / (kappa + d * l);
        d * q * q
    });
    Ok(crate::linalg::compensated_sum(terms))
}

/// Full replica solution for one dataset size.
pub fn replica_loss(input: &ReplicaInput<'_>) -> Result<ReplicaSolution> {
    if let Overlaps::PerMode(v) = &input.overlaps {
        if v.len() != input.spectrum.len() {
            return config("overlap vector length does not match the spectrum");
        }
        if v.iter().any(|&x| x < 0.0) {
            return config("overlaps must be nonnegative");
        }
    }
    let sol = solve_kappa(input.spectrum, input.d, KAPPA_TOL)?;
    if sol.saturated {
        let g = gamma(input.spectrum, input.d, 0.0)?;
        return Ok(ReplicaSolution { kappa: 0.0, gamma: g, predicted_loss: 0.0, saturated: true });
    }
    let g = gamma(input.spectrum, input.d, sol.kappa)?;
    if g >= 1.0 {
        return numeric(format!("replica fixed point gives gamma = {g} >= 1"));
    }
    let k = sol.kappa;
    let terms = input.spectrum.eigenvalues.iter().enumerate().map(|(i, &l)| {
        let q = 1.0 / (k + input.d * l);
        l * input.overlaps.get(i) * q * q
    });
    let sum = crate::linalg::compensated_sum(terms);
    Ok(ReplicaSolution { kappa: k, gamma: g, predicted_loss: 0.5 * k * k / (1.0 - g) * sum, saturated: false })
}

/// Solve a grid of dataset sizes (in parallel; results in grid order).
pub fn replica_curve(spectrum: &Spectrum, overlaps: &Overlaps, d_grid: &[f64]) -> Result<Vec<ReplicaSolution>> {
    d_grid
        .par_iter()
        .map(|&d| replica_loss(&ReplicaInput { spectrum, overlaps: overlaps.clone(), d }))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub d: usize,
    pub kappa: f64,
    pub gamma: f64,
    /// Replica prediction in half-MSE units.
    pub l_replica: f64,
    /// Seed-averaged exact infinite-feature loss.
    pub l_exact_mc: f64,
    /// Standard error of `l_exact_mc` across seeds.
    pub l_exact_stderr: f64,
    /// `(l_replica - l_exact_mc) / l_exact_mc`.
    pub rel_dev: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub const CSV_HEADER: &'static str = "D,kappa,gamma,L_replica,L_exact_mc,rel_dev";

    pub fn max_abs_rel_dev(&self) -> f64 {
        self.rows.iter().map(|r| r.rel_dev.abs()).fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.d,
                format_float(r.kappa),
                format_float(r.gamma),
                format_float(r.l_replica),
                format_float(r.l_exact_mc),
                format_float(r.rel_dev)
            );
        }
        out
    }
}

/// Test-pool size used when the feature map has no closed-form moment.
pub const MC_POOL: usize = 10_000;

/// Replica prediction against the seed-averaged infinite-feature loss.
///
/// The spectrum is that of `E[F F^T]`: exact for Fourier features, otherwise
/// estimated on a pool of [`MC_POOL`] points. With `teacher = None` the
/// teacher-averaged loss is compared with uniform overlaps `1/S`; with a
/// teacher, its own overlaps are used. The input expectation of the exact
/// side is taken in closed form when the moment is known and over the pool
/// otherwise. Deviations are reported as computed, never clipped.
pub fn replica_vs_exact(
    fm: &FeatureMap,
    teacher: Option<&TeacherWeights>,
    d_grid: &[usize],
    seeds: usize,
    base_seed: u64,
) -> Result<ComparisonTable> {
    if seeds == 0 || d_grid.is_empty() {
        return config("replica comparison needs seeds >= 1 and a nonempty grid");
    }
    let s = fm.n_features();
    let spec = fm.natural_manifold();
    let pool = sample_manifold(spec, MC_POOL, rng::derive_seed(base_seed, "replica-pool", 0))?;
    let analytic = fm.analytic_second_moment();
    let moment: SecondMoment = match &analytic {
        Some(m) => m.clone(),
        None => second_moment_features(fm, &pool)?,
    };
    let spectrum = eig_spectrum(&moment)?;
    let overlaps = match teacher {
        Some(t) => empirical_overlaps(&spectrum, t)?,
        None => teacher_overlaps(s),
    };
    let sizes: Vec<f64> = d_grid.iter().map(|&d| d as f64).collect();
    let predictions = replica_curve(&spectrum, &overlaps, &sizes)?;
    let tasks: Vec<(usize, usize)> = (0..d_grid.len()).flat_map(|i| (0..seeds).map(move |k| (i, k))).collect();
    let losses: Vec<f64> = tasks
        .par_iter()
        .map(|&(i, k)| -> Result<f64> {
            let d = d_grid[i];
            let train = sample_manifold(spec, d, rng::derive_seed(base_seed, "replica-train", (i * seeds + k) as u64))?;
            match (teacher, &analytic) {
                (None, Some(m)) => Ok(loss_infinite_params_exact(fm, &train, m)?.value),
                (None, None) => Ok(loss_infinite_params(fm, &train, &pool)?.value),
                (Some(t), _) => crate::exactloss::loss_infinite_params_for_teacher(fm, t, &train, &pool),
            }
        })
        .collect::<Result<_>>()?;
    let rows = d_grid
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            let vals = &losses[i * seeds..(i + 1) * seeds];
            let mean = vals.iter().sum::<f64>() / seeds as f64;
            let se = if seeds > 1 {
                (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / ((seeds - 1) * seeds) as f64).sqrt()
            } else {
                0.0
            };
            let p = predictions[i];
            ComparisonRow {
                d,
                kappa: p.kappa,
                gamma: p.gamma,
                l_replica: p.predicted_loss,
                l_exact_mc: mean,
                l_exact_stderr: se,
                rel_dev: (p.predicted_loss - mean) / mean,
            }
        })
        .collect();
    Ok(ComparisonTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::fit_line;
    use crate::spectral::{synth_spectrum, SpectrumSource};

    fn two_level() -> Spectrum {
        Spectrum::from_values(vec![1.0, 0.25], SpectrumSource::Synthetic).unwrap()
    }

    #[test]
    fn two_level_closed_form() {
        let s = two_level();
        let k = solve_kappa(&s, 1.0, 1e-12).unwrap();
        assert!((k.kappa - 0.5).abs() < 1e-10);
        let g = gamma(&s, 1.0, 0.5).unwrap();
        assert!((g - 5.0 / 9.0).abs() < 1e-14);
        let sol = replica_loss(&ReplicaInput { spectrum: &s, overlaps: Overlaps::PerMode(vec![0.5, 0.5]), d: 1.0 }).unwrap();
        // Full MSE 0.25, reported as half.
        assert!((2.0 * sol.predicted_loss - 0.25).abs() < 1e-10);
    }

    #[test]
    fn saturated_cases() {
        let one = Spectrum::from_values(vec![1.0], SpectrumSource::Synthetic).unwrap();
        let k = solve_kappa(&one, 1.0, 1e-12).unwrap();
        assert!(k.saturated && k.kappa == 0.0);
        let sol = replica_loss(&ReplicaInput { spectrum: &two_level(), overlaps: teacher_overlaps(2), d: 3.0 }).unwrap();
        assert_eq!(sol.predicted_loss, 0.0);
    }

    #[test]
    fn gamma_vanishes_for_large_kappa() {
        assert!(gamma(&two_level(), 1.0, 1e12).unwrap() < 1e-20);
    }

    #[test]
    fn residual_and_monotonicity() {
        let s = synth_spectrum(1.0, 10_000).unwrap();
        let grid: Vec<f64> = (0..12).map(|k| 2f64.powi(k)).collect();
        let mut prev_k = f64::INFINITY;
        let mut prev_l = f64::INFINITY;
        for &d in &grid {
            let k = solve_kappa(&s, d, KAPPA_TOL).unwrap();
            let (g, _) = g_and_slope(&s.eigenvalues, d, k.kappa);
            assert!(g.abs() < 1e-10);
            let sol = replica_loss(&ReplicaInput { spectrum: &s, overlaps: teacher_overlaps(10_000), d }).unwrap();
            assert!(sol.gamma < 1.0);
            assert!(k.kappa < prev_k && sol.predicted_loss < prev_l);
            prev_k = k.kappa;
            prev_l = sol.predicted_loss;
        }
    }

    #[test]
    fn kappa_slope_alpha_one() {
        let s = synth_spectrum(1.0, 10_000).unwrap();
        let ds: Vec<f64> = (0..8).map(|k| 100.0 * 10f64.powf(k as f64 / 7.0)).collect();
        let ks: Vec<f64> = ds.iter().map(|&d| solve_kappa(&s, d, KAPPA_TOL).unwrap().kappa.ln()).collect();
        let x: Vec<f64> = ds.iter().map(|d| d.ln()).collect();
        let f = fit_line(&x, &ks, None).unwrap();
        assert!((f.slope + 1.0).abs() < 0.05, "{}", f.slope);
    }

    #[test]
    fn permutation_invariance() {
        let vals = vec![0.9, 0.5, 0.3, 0.2, 0.05, 0.01];
        let w = vec![0.1, 0.3, 0.05, 0.2, 0.15, 0.2];
        let a = Spectrum::from_values(vals.clone(), SpectrumSource::Synthetic).unwrap();
        let sol_a = replica_loss(&ReplicaInput { spectrum: &a, overlaps: Overlaps::PerMode(w.clone()), d: 2.5 }).unwrap();
        // Build the same pairs in another order; from_values sorts, so bypass
        // it by permuting after construction.
        let mut b = a.clone();
        let perm = [3, 0, 5, 1, 4, 2];
        b.eigenvalues = perm.iter().map(|&i| vals[i]).collect();
        let wb: Vec<f64> = perm.iter().map(|&i| w[i]).collect();
        let sol_b = replica_loss(&ReplicaInput { spectrum: &b, overlaps: Overlaps::PerMode(wb), d: 2.5 }).unwrap();
        assert!((sol_a.kappa - sol_b.kappa).abs() < 1e-12);
        assert!((sol_a.gamma - sol_b.gamma).abs() < 1e-12);
        assert!((sol_a.predicted_loss - sol_b.predicted_loss).abs() < 1e-12);
    }

    #[test]
    fn single_point_matches_conditional_variance() {
        let fm = crate::features::build_torus_features(1, 2.0, 8).unwrap();
        let t = replica_vs_exact(&fm, None, &[1], 400, 5).unwrap();
        let r = t.rows[0];
        // Both reduce to the one-point conditional variance; allow MC error.
        assert!((r.l_replica - r.l_exact_mc).abs() < 5.0 * r.l_exact_stderr + 0.05 * r.l_exact_mc, "{r:?}");
    }

    #[test]
    fn table_csv_has_header_and_rows() {
        let fm = crate::features::build_torus_features(1, 2.0, 4).unwrap();
        let t = replica_vs_exact(&fm, None, &[2, 4], 3, 1).unwrap();
        let csv = t.to_csv();
        assert!(csv.starts_with(ComparisonTable::CSV_HEADER));
        assert_eq!(csv.lines().count(), 3);
    }
}
