//! Paired dataset-size and student-size curves under the exchange of
//! training points and projection points.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Regime, Size, SizeKind};
use super::sweep::{feature_moment, fit_scaling_exponent, mean_stderr, CurvePoint, ScalingCurve};
use crate::error::{config, Result};
use crate::exactloss::{nested_span_explained, loss_infinite_data_for_teacher};
use crate::features::io::format_float;
use crate::features::{point_projector, sample_manifold, FeatureMap, Moment, SecondMoment, TeacherWeights};
use crate::linalg;
use crate::rng::{derive_seed, fnv1a};
use crate::spectral::ExponentFit;

/// Per-seed `L(D)` and `L(P)` along the size grid.
type SeedCurves = (Vec<f64>, Vec<f64>);

/// Pool size for estimating the second moment of features without a
/// closed form.
pub const DUALITY_MOMENT_SAMPLES: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualityRow {
    pub size: usize,
    /// `mean_log_loss` of the D curve minus that of the P curve.
    pub deviation: f64,
    /// `sqrt(stderr_D^2 + stderr_P^2)`.
    pub joint_stderr: f64,
    pub resonance: bool,
}

impl DualityRow {
    pub fn within(&self, k: f64) -> bool {
        self.deviation.abs() <= k * self.joint_stderr
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualityReport {
    /// `L(D)` with every teacher feature.
    pub d_curve: ScalingCurve,
    /// `L(P)` with infinite data and students projecting onto `P` random
    /// manifold points.
    pub p_curve: ScalingCurve,
    pub rows: Vec<DualityRow>,
    pub max_abs_deviation: f64,
    pub fit_d: Option<ExponentFit>,
    pub fit_p: Option<ExponentFit>,
}

impl DualityReport {
    pub const CSV_HEADER: &'static str = "size,mean_log_loss_D,stderr_D,mean_log_loss_P,stderr_P,deviation,joint_stderr,resonance";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for ((r, a), b) in self.rows.iter().zip(&self.d_curve.points).zip(&self.p_curve.points) {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.size,
                format_float(a.mean_log_loss),
                format_float(a.stderr),
                format_float(b.mean_log_loss),
                format_float(b.stderr),
                format_float(r.deviation),
                format_float(r.joint_stderr),
                r.resonance
            );
        }
        out
    }

    /// Rows outside the resonance band whose deviation exceeds `k` joint
    /// standard errors.
    pub fn violations(&self, k: f64) -> Vec<&DualityRow> {
        self.rows.iter().filter(|r| !r.resonance && !r.within(k)).collect()
    }
}

fn quad_form(m: &SecondMoment, w: &nalgebra::DVector<f64>) -> f64 {
    match &m.moment {
        Moment::Dense(c) => w.dot(&(c * w)),
        Moment::Diagonal(c) => w.iter().zip(c.iter()).map(|(a, b)| a * a * b).sum(),
    }
}

/// Both curves on the shared `sizes` grid, `seeds` independent draws each.
/// The D curve trains all `S` features on `D` random points; the P curve
/// learns from infinite data with students built on `P` other random points.
/// With `teacher = None` the losses are teacher-averaged.
pub fn duality_report(
    fm: &FeatureMap,
    teacher: Option<&TeacherWeights>,
    sizes: &[usize],
    seeds: usize,
    base_seed: u64,
) -> Result<DualityReport> {
    if sizes.is_empty() || sizes[0] == 0 || sizes.windows(2).any(|w| w[0] >= w[1]) {
        return config("duality sizes must be positive and strictly increasing");
    }
    if seeds == 0 {
        return config("seeds must be at least 1");
    }
    let s = fm.n_features();
    if let Some(t) = teacher {
        if t.len() != s {
            return config("teacher length does not match the feature count");
        }
    }
    let spec = fm.natural_manifold();
    let moment = feature_moment(fm, spec, DUALITY_MOMENT_SAMPLES, base_seed)?;
    let nmax = *sizes.last().unwrap();
    let tr = moment.trace();
    let norm = 2.0 * s as f64;

    let per_seed: Vec<SeedCurves> = (0..seeds)
        .into_par_iter()
        .map(|k| {
            let k = k as u64;
            let data = sample_manifold(spec, nmax, derive_seed(base_seed, "duality-D", k))?;
            let anchors = sample_manifold(spec, nmax, derive_seed(base_seed, "duality-P", k))?;
            let phi = fm.eval(&data.inputs)?;
            let proj = point_projector(fm, &moment, &anchors.inputs)?;
            let rows = proj.to_dense();
            match teacher {
                None => {
                    let ld = nested_span_explained(&phi, &moment, sizes)?.into_iter().map(|(e, _)| (tr - e) / norm).collect();
                    let half = moment.half_right_apply(&rows);
                    let lp = nested_span_explained(&half, &moment, sizes)?.into_iter().map(|(e, _)| (tr - e) / norm).collect();
                    Ok((ld, lp))
                }
                Some(t) => {
                    let mut ld = Vec::with_capacity(sizes.len());
                    let mut lp = Vec::with_capacity(sizes.len());
                    for &n in sizes {
                        let sub = phi.rows(0, n).into_owned();
                        let y = DMatrix::from_column_slice(n, 1, (&sub * &t.omega).as_slice());
                        let (theta, _) = linalg::lstsq_min_norm(&sub, &y);
                        let w = theta.column(0) - &t.omega;
                        ld.push(0.5 * quad_form(&moment, &w));
                        lp.push(loss_infinite_data_for_teacher(&proj.leading_rows(n)?, &moment, t));
                    }
                    Ok((ld, lp))
                }
            }
        })
        .collect::<Result<_>>()?;

    let hash = fnv1a(&format!("duality:{s}:{sizes:?}:{seeds}:{}", teacher.is_some()));
    let build = |regime: Regime, kind: SizeKind, pick: &dyn Fn(&SeedCurves) -> &Vec<f64>| -> ScalingCurve {
        let points = sizes
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                let logs: Vec<f64> = per_seed.iter().map(|v| pick(v)[i]).filter(|v| *v > 0.0 && v.is_finite()).map(f64::ln).collect();
                let (mean, stderr) = mean_stderr(&logs);
                let (p, d) = match kind {
                    SizeKind::D => (Size::Inf, Size::Finite(n)),
                    SizeKind::P => (Size::Finite(n), Size::Inf),
                };
                CurvePoint {
                    size: n,
                    p,
                    d,
                    n_seeds: logs.len(),
                    mean_log_loss: mean,
                    stderr,
                    dropped: seeds - logs.len(),
                    resonance: (n as f64) >= 0.9 * s as f64,
                }
            })
            .collect();
        ScalingCurve { regime, size_kind: kind, s, points, config_hash: hash, seed_base: base_seed }
    };
    let d_curve = build(Regime::ResolutionD, SizeKind::D, &|v| &v.0);
    let p_curve = build(Regime::ResolutionP, SizeKind::P, &|v| &v.1);
    let rows: Vec<DualityRow> = d_curve
        .points
        .iter()
        .zip(&p_curve.points)
        .map(|(a, b)| DualityRow {
            size: a.size,
            deviation: a.mean_log_loss - b.mean_log_loss,
            joint_stderr: (a.stderr * a.stderr + b.stderr * b.stderr).sqrt(),
            resonance: a.resonance || b.resonance,
        })
        .collect();
    let max_abs_deviation = rows.iter().map(|r| r.deviation.abs()).fold(0.0, f64::max);
    let fit_d = fit_scaling_exponent(&d_curve, None).ok();
    let fit_p = fit_scaling_exponent(&p_curve, None).ok();
    Ok(DualityReport { d_curve, p_curve, rows, max_abs_deviation, fit_d, fit_p })
}
