//! Seeded sweeps over dataset or student size, and exponent fits.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ProjectorKind, Regime, Size, SizeKind, SweepConfig, TeacherMode};
use crate::error::{config, Result};
use crate::exactloss::{
    data_route_block, excess_over_infinite_params, expected_loss_finite_mc, feature_route_excess, feature_route_loss,
    infinite_data_solution, nested_span_explained, loss_finite, loss_infinite_data_for_teacher,
    loss_infinite_params_for_teacher, student_solution, KernelBlock,
};
use crate::features::{
    point_projector, random_projector, random_subspace_projector, sample_manifold, sample_teacher, second_moment_features,
    selection_order, Dataset, FeatureMap, ManifoldSpec, Projector, SecondMoment, EVAL_BLOCK,
};
use crate::fit::fit_line;
use crate::linalg;
use crate::manifold::nn_predictor_loss;
use crate::rng::derive_seed;
use crate::spectral::ExponentFit;

/// Stream tags for the per-seed draws of a sweep. Seed `k` of a sweep with
/// base seed `b` draws its training set from `derive_seed(b, TAG_DATA, k)`.
pub const TAG_DATA: &str = "sweep-data";
pub const TAG_TEST: &str = "sweep-test";
pub const TAG_PROJECTOR: &str = "sweep-projector";
pub const TAG_TEACHER: &str = "sweep-teacher";
pub const TAG_MOMENT: &str = "sweep-moment";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub size: usize,
    pub p: Size,
    pub d: Size,
    /// Seeds that contributed (after drops).
    pub n_seeds: usize,
    pub mean_log_loss: f64,
    /// Standard error of the mean log-loss.
    pub stderr: f64,
    /// Seeds dropped because the subtracted loss was not positive.
    pub dropped: usize,
    /// Within the resonance band around `D = P`.
    pub resonance: bool,
}

impl CurvePoint {
    /// Usable in a fit.
    pub fn is_clean(&self) -> bool {
        !self.resonance && self.n_seeds > 0 && self.mean_log_loss.is_finite()
    }

    pub fn flags(&self) -> String {
        let mut f = Vec::new();
        if self.resonance {
            f.push("resonance".to_string());
        }
        if self.dropped > 0 {
            f.push(format!("dropped={}", self.dropped));
        }
        f.join(";")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingCurve {
    pub regime: Regime,
    pub size_kind: SizeKind,
    /// Teacher feature count.
    pub s: usize,
    pub points: Vec<CurvePoint>,
    pub config_hash: u64,
    pub seed_base: u64,
}

impl ScalingCurve {
    pub fn sizes(&self) -> Vec<usize> {
        self.points.iter().map(|p| p.size).collect()
    }
}

/// Serde support for the enums used in curves.
mod serde_impls {
    use super::super::config::{Regime, Size, SizeKind};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    macro_rules! via_str {
        ($t:ty, $to:expr, $from:expr) => {
            impl Serialize for $t {
                fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                    s.serialize_str(&$to(self))
                }
            }
            impl<'de> Deserialize<'de> for $t {
                fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                    let s = String::deserialize(d)?;
                    $from(&s).map_err(serde::de::Error::custom)
                }
            }
        };
    }

    via_str!(Regime, |r: &Regime| r.as_str().to_string(), |s: &str| s.parse::<Regime>());
    via_str!(Size, |v: &Size| v.to_string(), |s: &str| s.parse::<Size>());
    via_str!(SizeKind, |k: &SizeKind| k.as_str().to_string(), |s: &str| match s {
        "D" => Ok(SizeKind::D),
        "P" => Ok(SizeKind::P),
        _ => Err(format!("unknown size kind '{s}'")),
    });
}

/// Exact second moment when available, otherwise a pool estimate.
pub fn feature_moment(fm: &FeatureMap, spec: ManifoldSpec, samples: usize, seed: u64) -> Result<SecondMoment> {
    if let Some(m) = fm.analytic_second_moment() {
        return Ok(m);
    }
    let pool = sample_manifold(spec, samples, derive_seed(seed, TAG_MOMENT, 0))?;
    second_moment_features(fm, &pool)
}

fn resonance(size: usize, other: Size, s: usize, margin: f64) -> bool {
    let other = match other {
        Size::Finite(n) => n,
        Size::Inf => s,
    };
    (size as f64 - other as f64).abs() <= margin * size.max(other) as f64
}

struct Context<'a> {
    cfg: &'a SweepConfig,
    fm: &'a FeatureMap,
    spec: ManifoldSpec,
    moment: Option<&'a SecondMoment>,
    s: usize,
}

impl Context<'_> {
    fn seed(&self, tag: &str, k: usize) -> u64 {
        derive_seed(self.cfg.base_seed, tag, k as u64)
    }

    fn moment(&self) -> &SecondMoment {
        self.moment.expect("moment prepared for this regime")
    }

    /// Nested projectors of sizes `sizes` for seed `k`.
    fn projectors(&self, sizes: &[usize], k: usize) -> Result<Vec<Projector>> {
        let seed = self.seed(TAG_PROJECTOR, k);
        let pmax = *sizes.last().expect("nonempty grid");
        match self.cfg.projector {
            ProjectorKind::Select => sizes.iter().map(|&p| random_projector(self.s, p, seed)).collect(),
            ProjectorKind::Subspace => {
                let full = random_subspace_projector(self.s, pmax, seed)?;
                sizes.iter().map(|&p| full.leading_rows(p)).collect()
            }
            ProjectorKind::Points => {
                let pts = sample_manifold(self.spec, pmax, seed)?;
                let full = point_projector(self.fm, self.moment(), &pts.inputs)?;
                sizes.iter().map(|&p| full.leading_rows(p)).collect()
            }
        }
    }

    fn projector(&self, p: Size, k: usize) -> Result<Projector> {
        match p {
            Size::Inf => Ok(Projector::full(self.s)),
            Size::Finite(p) => Ok(self.projectors(&[p], k)?.remove(0)),
        }
    }

    fn teacher(&self, k: usize) -> Result<crate::features::TeacherWeights> {
        sample_teacher(self.s, self.seed(TAG_TEACHER, k))
    }

    fn train(&self, n: usize, k: usize) -> Result<Dataset> {
        sample_manifold(self.spec, n, self.seed(TAG_DATA, k))
    }

    fn test(&self, k: usize) -> Result<Dataset> {
        sample_manifold(self.spec, self.cfg.test_points, self.seed(TAG_TEST, k))
    }
}

fn positive(v: f64) -> Option<f64> {
    (v > 0.0 && v.is_finite()).then_some(v)
}

/// Losses of seed `k` at every grid point (`None` marks a dropped seed).
fn seed_losses(ctx: &Context<'_>, k: usize) -> Result<Vec<Option<f64>>> {
    let cfg = ctx.cfg;
    let grid = cfg.grid();
    let sub = cfg.subtract_asymptote;
    let averaged = cfg.teacher == TeacherMode::Averaged;
    match cfg.regime {
        Regime::VarianceD | Regime::ResolutionD if averaged => {
            let train = ctx.train(*grid.last().unwrap(), k)?;
            let phi = ctx.fm.eval(&train.inputs)?;
            if cfg.fixed_p == Size::Inf {
                let explained = nested_span(&phi, ctx.moment(), grid)?;
                let tr = ctx.moment().trace();
                return Ok(explained.into_iter().map(|e| positive((tr - e) / (2.0 * ctx.s as f64))).collect());
            }
            let proj = ctx.projector(cfg.fixed_p, k)?;
            let x_star = sub.then(|| infinite_data_solution(&proj, ctx.moment()).0);
            grid.iter()
                .map(|&d| {
                    let (x, _) = student_solution(&phi.rows(0, d).into_owned(), &proj);
                    Ok(positive(match &x_star {
                        Some(xs) => feature_route_excess(&x, xs, &proj, ctx.moment()),
                        None => feature_route_loss(&x, &proj, ctx.moment()),
                    }))
                })
                .collect()
        }
        Regime::VarianceD | Regime::ResolutionD | Regime::NnScaling => {
            let train = ctx.train(*grid.last().unwrap(), k)?;
            let test = ctx.test(k)?;
            let teacher = ctx.teacher(k)?;
            let proj = ctx.projector(cfg.fixed_p, k)?;
            let limit = if sub && cfg.regime != Regime::NnScaling && cfg.fixed_p != Size::Inf {
                loss_infinite_data_for_teacher(&proj, ctx.moment(), &teacher)
            } else {
                0.0
            };
            grid.iter()
                .map(|&d| {
                    let tr = train.prefix(d);
                    let v = match cfg.regime {
                        Regime::NnScaling => nn_predictor_loss(ctx.fm, &teacher, &tr, &test)?.value,
                        _ if cfg.fixed_p == Size::Inf => loss_infinite_params_for_teacher(ctx.fm, &teacher, &tr, &test)?,
                        _ => loss_finite(ctx.fm, &teacher, &proj, &tr, &test)?.value - limit,
                    };
                    Ok(positive(v))
                })
                .collect()
        }
        Regime::VarianceP | Regime::ResolutionP => p_sweep_seed(ctx, k),
        Regime::Duality => config("the duality regime runs through duality_report"),
    }
}

/// `Tr[Π_d 𝒞]` for the span of the first `d` rows of `phi`, for each `d`.
fn nested_span(phi: &DMatrix<f64>, moment: &SecondMoment, sizes: &[usize]) -> Result<Vec<f64>> {
    Ok(nested_span_explained(phi, moment, sizes)?.into_iter().map(|(e, _)| e).collect())
}

fn p_sweep_seed(ctx: &Context<'_>, k: usize) -> Result<Vec<Option<f64>>> {
    let cfg = ctx.cfg;
    let grid = &cfg.p_grid;
    let sub = cfg.subtract_asymptote;
    let averaged = cfg.teacher == TeacherMode::Averaged;
    match (cfg.fixed_d, averaged) {
        (Size::Inf, true) => {
            // L(P) for nested projectors from the leading rows of the largest.
            let m = ctx.moment();
            let rows = ctx.projectors(&[*grid.last().unwrap()], k)?.remove(0).to_dense();
            // Tr[C P^T (P C P^T)^+ P C] is the trace of C on the span of P C^{1/2}.
            let tr = m.trace();
            Ok(nested_span_explained(&m.half_right_apply(&rows), m, grid)?
                .into_iter()
                .map(|(e, _)| positive((tr - e) / (2.0 * ctx.s as f64)))
                .collect())
        }
        (Size::Inf, false) => {
            let teacher = ctx.teacher(k)?;
            let projs = ctx.projectors(grid, k)?;
            Ok(projs.iter().map(|p| positive(loss_infinite_data_for_teacher(p, ctx.moment(), &teacher))).collect())
        }
        (Size::Finite(d), true) if cfg.projector == ProjectorKind::Select && ctx.moment.is_none() => {
            nested_selection_data_route(ctx, d, k)
        }
        (Size::Finite(d), true) => {
            let train = ctx.train(d, k)?;
            let projs = ctx.projectors(grid, k)?;
            if let Some(m) = ctx.moment {
                let phi = ctx.fm.eval(&train.inputs)?;
                let full = Projector::full(ctx.s);
                let x_inf = sub.then(|| student_solution(&phi, &full).0);
                projs
                    .iter()
                    .map(|p| {
                        let (x, _) = student_solution(&phi, p);
                        let loss = feature_route_loss(&x, p, m);
                        let limit = x_inf.as_ref().map_or(0.0, |xi| feature_route_loss(xi, &full, m));
                        Ok(positive(loss - limit))
                    })
                    .collect()
            } else {
                let test = ctx.test(k)?;
                projs
                    .iter()
                    .map(|p| {
                        Ok(positive(if sub {
                            excess_over_infinite_params(ctx.fm, p, &train, &test)?
                        } else {
                            expected_loss_finite_mc(ctx.fm, p, &train, &test)?.value
                        }))
                    })
                    .collect()
            }
        }
        (Size::Finite(d), false) => {
            let train = ctx.train(d, k)?;
            let test = ctx.test(k)?;
            let teacher = ctx.teacher(k)?;
            let limit = if sub { loss_infinite_params_for_teacher(ctx.fm, &teacher, &train, &test)? } else { 0.0 };
            ctx.projectors(grid, k)?
                .iter()
                .map(|p| Ok(positive(loss_finite(ctx.fm, &teacher, p, &train, &test)?.value - limit)))
                .collect()
        }
    }
}

/// Teacher-averaged `L(D, P)` (or its excess over `L(D)`) for every `P` of
/// the grid at once. Features are permuted into selection order so each
/// student kernel is a running sum over feature columns; the test average
/// runs over blocks so only one block of test features is held at a time.
fn nested_selection_data_route(ctx: &Context<'_>, d: usize, k: usize) -> Result<Vec<Option<f64>>> {
    let grid = &ctx.cfg.p_grid;
    let s = ctx.s as f64;
    let order = selection_order(ctx.s, ctx.seed(TAG_PROJECTOR, k));
    let train = ctx.train(d, k)?;
    let test = ctx.test(k)?;
    let phi = ctx.fm.eval(&train.inputs)?.select_columns(order.iter());
    let mut teacher_gram = &phi * phi.transpose() / s;
    linalg::symmetrize(&mut teacher_gram);
    let mut grams = Vec::with_capacity(grid.len());
    let mut acc = DMatrix::zeros(d, d);
    let mut prev = 0;
    for &p in grid {
        let cols = phi.columns(prev, p - prev);
        acc += cols * cols.transpose();
        grams.push(acc.clone());
        prev = p;
    }
    let mut err = vec![0.0; grid.len()];
    let mut exc = vec![0.0; grid.len()];
    let mut start = 0;
    while start < test.len() {
        let end = (start + EVAL_BLOCK).min(test.len());
        let phi_t = ctx.fm.eval(&test.inputs.slice(start, end))?.select_columns(order.iter());
        let teacher_cross = &phi * phi_t.transpose() / s;
        let diag: Vec<f64> = phi_t.row_iter().map(|r| r.norm_squared() / s).collect();
        let mut cross = DMatrix::zeros(d, end - start);
        let mut prev = 0;
        for (i, &p) in grid.iter().enumerate() {
            cross += phi.columns(prev, p - prev) * phi_t.columns(prev, p - prev).transpose();
            prev = p;
            let sums = data_route_block(&KernelBlock {
                student_gram: &grams[i],
                student_cross: &cross,
                teacher_gram: &teacher_gram,
                teacher_cross: &teacher_cross,
                teacher_diag: &diag,
            });
            err[i] += sums.error;
            exc[i] += sums.excess;
        }
        start = end;
    }
    let n = test.len() as f64;
    let pick = if ctx.cfg.subtract_asymptote { exc } else { err };
    Ok(pick.into_iter().map(|v| positive(0.5 * v / n)).collect())
}

fn needs_moment(cfg: &SweepConfig, fm: &FeatureMap) -> bool {
    if fm.analytic_second_moment().is_some() {
        return true;
    }
    match cfg.regime {
        Regime::VarianceD => cfg.teacher == TeacherMode::Averaged || cfg.subtract_asymptote,
        Regime::ResolutionD => cfg.teacher == TeacherMode::Averaged,
        Regime::ResolutionP => cfg.fixed_d == Size::Inf || cfg.teacher == TeacherMode::Averaged,
        Regime::VarianceP => cfg.projector == ProjectorKind::Points,
        Regime::Duality | Regime::NnScaling => false,
    }
}

/// Run a sweep: for each grid point, the loss (or its excess over the
/// matching infinite limit) averaged in log space over seeds.
pub fn run_sweep(cfg: &SweepConfig) -> Result<ScalingCurve> {
    cfg.validate()?;
    if cfg.regime == Regime::Duality {
        return config("the duality regime runs through duality_report");
    }
    let fm = cfg.build_features()?;
    let spec = cfg.manifold_spec(&fm)?;
    let s = fm.n_features();
    let moment = if needs_moment(cfg, &fm) { Some(feature_moment(&fm, spec, cfg.moment_samples, cfg.base_seed)?) } else { None };
    let ctx = Context { cfg, fm: &fm, spec, moment: moment.as_ref(), s };
    let per_seed: Vec<Vec<Option<f64>>> = (0..cfg.seeds).into_par_iter().map(|k| seed_losses(&ctx, k)).collect::<Result<_>>()?;
    let grid = cfg.grid();
    let kind = cfg.regime.size_kind();
    let points = grid
        .iter()
        .enumerate()
        .map(|(i, &size)| {
            let logs: Vec<f64> = per_seed.iter().filter_map(|v| v[i]).map(f64::ln).collect();
            let (p, d) = match kind {
                SizeKind::D => (cfg.fixed_p, Size::Finite(size)),
                SizeKind::P => (Size::Finite(size), cfg.fixed_d),
            };
            let other = match kind {
                SizeKind::D => cfg.fixed_p,
                SizeKind::P => cfg.fixed_d,
            };
            let (mean, stderr) = mean_stderr(&logs);
            CurvePoint {
                size,
                p,
                d,
                n_seeds: logs.len(),
                mean_log_loss: mean,
                stderr,
                dropped: cfg.seeds - logs.len(),
                resonance: cfg.regime != Regime::NnScaling && resonance(size, other, s, cfg.resonance_margin),
            }
        })
        .collect();
    Ok(ScalingCurve { regime: cfg.regime, size_kind: kind, s, points, config_hash: cfg.hash(), seed_base: cfg.base_seed })
}

/// Mean and standard error of the mean (`NaN` mean for no values).
pub fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len();
    if n == 0 {
        return (f64::NAN, 0.0);
    }
    let mean = linalg::pairwise_sum(v) / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Default fit window: the grid without its first and last point.
pub fn default_fit_window(curve: &ScalingCurve) -> Option<(usize, usize)> {
    let n = curve.points.len();
    (n >= 3).then(|| (curve.points[1].size, curve.points[n - 2].size))
}

/// Weighted least squares of `mean_log_loss` on `log size` over clean points
/// in the window (inclusive). Reports `alpha` with `L ∝ size^-alpha`.
pub fn fit_scaling_exponent(curve: &ScalingCurve, window: Option<(usize, usize)>) -> Result<ExponentFit> {
    let (lo, hi) = match window {
        Some(w) => w,
        None => default_fit_window(curve).ok_or_else(|| crate::Error::Config("curve too short for the default window".into()))?,
    };
    let pts: Vec<&CurvePoint> = curve.points.iter().filter(|p| p.is_clean() && p.size >= lo && p.size <= hi).collect();
    if pts.len() < 4 {
        return config(format!("need at least 4 unflagged points in [{lo}, {hi}], found {}", pts.len()));
    }
    let x: Vec<f64> = pts.iter().map(|p| (p.size as f64).ln()).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.mean_log_loss).collect();
    let w: Vec<f64> = pts.iter().map(|p| 1.0 / (p.stderr * p.stderr)).collect();
    let f = fit_line(&x, &y, Some(&w))?;
    Ok(ExponentFit {
        exponent: -f.slope,
        slope: f.slope,
        intercept: f.intercept,
        stderr: f.slope_stderr,
        window: (lo, hi),
        r2: f.r2,
        n_points: f.n,
        shrunk: false,
    })
}
