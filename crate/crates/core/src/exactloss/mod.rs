//! Test losses of the converged (minimum-norm) linear student.
//!
//! Conventions: the loss is half the mean squared error, teacher features are
//! `F(x) ∈ R^S`, student features are `f(x) = P F(x) ∈ R^P`, and the teacher
//! weights are `omega ~ N(0, I/S)`. Functions named `expected_*` average over
//! the teacher in closed form, which removes teacher sampling noise from
//! sweeps while keeping the data randomness.

mod eigen;
mod quartic;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::features::{Dataset, FeatureMap, Moment, Projector, SecondMoment, TeacherWeights};
use crate::linalg::{self, PinvInfo};

pub use eigen::{eigen_loss, tail_sum};
pub use quartic::{quartic_tensor, variance_correction, variance_correction_direct, QuarticTensor, QUARTIC_S_MAX};

/// A loss value with its averaging provenance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossEstimate {
    pub value: f64,
    pub n_teacher_seeds: usize,
    pub n_data_seeds: usize,
    /// Standard error of the log-loss across seeds (0 for a single value).
    pub spread: f64,
    /// Absolute pseudo-inverse cutoff applied.
    pub pinv_cutoff: f64,
    /// A pseudo-inverse dropped at least one direction.
    pub rank_deficient: bool,
}

impl LossEstimate {
    fn single(value: f64, info: Option<PinvInfo>) -> Self {
        Self {
            value: value.max(0.0),
            n_teacher_seeds: 1,
            n_data_seeds: 1,
            spread: 0.0,
            pinv_cutoff: info.map_or(0.0, |i| i.cutoff),
            rank_deficient: info.is_some_and(|i| i.rank_deficient()),
        }
    }
}

fn check_dims(fm: &FeatureMap, projector: Option<&Projector>, sets: &[&Dataset]) -> Result<()> {
    for d in sets {
        if d.is_empty() {
            return config("datasets must be nonempty");
        }
        if d.dim() != fm.input_dim {
            return config(format!("dataset dimension {} does not match feature map input {}", d.dim(), fm.input_dim));
        }
    }
    if let Some(p) = projector {
        if p.s() != fm.n_features() {
            return config(format!("projector expects S = {} but the feature map has {}", p.s(), fm.n_features()));
        }
    }
    Ok(())
}

fn check_moment(fm: &FeatureMap, moment: &SecondMoment) -> Result<()> {
    if moment.dim() != fm.n_features() {
        return config(format!("second moment is {0}×{0} but S = {1}", moment.dim(), fm.n_features()));
    }
    Ok(())
}

/// Test MSE/2 of the minimum-norm least-squares student trained on `train`
/// for one teacher.
pub fn loss_finite(
    fm: &FeatureMap,
    teacher: &TeacherWeights,
    projector: &Projector,
    train: &Dataset,
    test: &Dataset,
) -> Result<LossEstimate> {
    check_dims(fm, Some(projector), &[train, test])?;
    if teacher.len() != fm.n_features() {
        return config("teacher length does not match the feature count");
    }
    let phi = fm.eval(&train.inputs)?;
    let f = projector.student_features(&phi);
    let y = DMatrix::from_column_slice(phi.nrows(), 1, (&phi * &teacher.omega).as_slice());
    let (theta, info) = linalg::lstsq_min_norm(&f, &y);
    let phi_t = fm.eval(&test.inputs)?;
    let pred = projector.student_features(&phi_t) * theta.column(0);
    let truth = &phi_t * &teacher.omega;
    let sq: Vec<f64> = (pred - truth).iter().map(|e| e * e).collect();
    let mse = linalg::pairwise_sum(&sq) / sq.len() as f64;
    Ok(LossEstimate::single(0.5 * mse, Some(info)))
}

/// Minimum-norm student weights for every teacher basis direction:
/// `X = f^+ F`, a `P × S` matrix, from training features `phi` (`D × S`).
pub fn student_solution(phi: &DMatrix<f64>, projector: &Projector) -> (DMatrix<f64>, PinvInfo) {
    let f = projector.student_features(phi);
    linalg::lstsq_min_norm(&f, phi)
}

/// Infinite-data student weights `X* = C^+ P 𝒞` with `C = P 𝒞 P^T`.
pub fn infinite_data_solution(projector: &Projector, moment: &SecondMoment) -> (DMatrix<f64>, PinvInfo) {
    let (c_inv, info) = linalg::pinv_sym(&projector.sandwich(moment));
    (c_inv * projector.left(moment), info)
}

/// `Tr[(P^T X - I)^T 𝒞 (P^T X - I)] / 2S`: teacher-averaged test loss of
/// the student whose weights are `X omega`.
pub fn feature_route_loss(x: &DMatrix<f64>, projector: &Projector, moment: &SecondMoment) -> f64 {
    let s = moment.dim() as f64;
    let pc = projector.left(moment);
    let c = projector.sandwich(moment);
    let cross: f64 = x.iter().zip(pc.iter()).map(|(a, b)| a * b).sum();
    let cx = &c * x;
    let quad: f64 = x.iter().zip(cx.iter()).map(|(a, b)| a * b).sum();
    ((moment.trace() - 2.0 * cross + quad) / (2.0 * s)).max(0.0)
}

/// `Tr[(X - X*)^T C (X - X*)] / 2S`, the exact (nonnegative) teacher-averaged
/// excess of a student over the infinite-data limit.
pub fn feature_route_excess(x: &DMatrix<f64>, x_star: &DMatrix<f64>, projector: &Projector, moment: &SecondMoment) -> f64 {
    let s = moment.dim() as f64;
    let c = projector.sandwich(moment);
    let dx = x - x_star;
    let cdx = &c * &dx;
    dx.iter().zip(cdx.iter()).map(|(a, b)| a * b).sum::<f64>().max(0.0) / (2.0 * s)
}

/// Teacher-averaged `L(D, P)` with the input expectation taken under
/// `moment` (exact or estimated `E[F F^T]`).
pub fn expected_loss_finite(
    fm: &FeatureMap,
    projector: &Projector,
    train: &Dataset,
    moment: &SecondMoment,
) -> Result<LossEstimate> {
    check_dims(fm, Some(projector), &[train])?;
    check_moment(fm, moment)?;
    let (x, info) = student_solution(&fm.eval(&train.inputs)?, projector);
    Ok(LossEstimate::single(feature_route_loss(&x, projector, moment), Some(info)))
}

/// Teacher-averaged `L(D, P) - L(P)` for one training set.
pub fn excess_over_infinite_data(
    fm: &FeatureMap,
    projector: &Projector,
    train: &Dataset,
    moment: &SecondMoment,
) -> Result<f64> {
    check_dims(fm, Some(projector), &[train])?;
    check_moment(fm, moment)?;
    let (x, _) = student_solution(&fm.eval(&train.inputs)?, projector);
    let (x_star, _) = infinite_data_solution(projector, moment);
    Ok(feature_route_excess(&x, &x_star, projector, moment))
}

/// `L(P) = Tr[𝒞 - 𝒞 P^T (P 𝒞 P^T)^+ P 𝒞] / 2S`.
pub fn loss_infinite_data(fm: &FeatureMap, projector: &Projector, moment: &SecondMoment) -> Result<LossEstimate> {
    check_dims(fm, Some(projector), &[])?;
    check_moment(fm, moment)?;
    let s = moment.dim() as f64;
    let pc = projector.left(moment);
    let (c_inv, info) = linalg::pinv_sym(&projector.sandwich(moment));
    let explained: f64 = (&c_inv * &pc).iter().zip(pc.iter()).map(|(a, b)| a * b).sum();
    Ok(LossEstimate::single((moment.trace() - explained) / (2.0 * s), Some(info)))
}

/// Per-point kernel quantities of a teacher-averaged data-route evaluation.
///
/// With `A = Kbar^+ K(x)` the student's interpolation coefficients, the
/// teacher-averaged error at `x` is
/// `𝒦(x,x) + A^T 𝒦bar A - 2 A^T 𝒦(x)`, and its excess over the
/// infinite-feature student (`A* = 𝒦bar^+ 𝒦(x)`) is
/// `(A - A*)^T 𝒦bar (A - A*)`.
pub struct KernelBlock<'a> {
    /// `D × D` student Gram matrix (any positive scale).
    pub student_gram: &'a DMatrix<f64>,
    /// `D × n` student cross kernel, same scale as `student_gram`.
    pub student_cross: &'a DMatrix<f64>,
    /// `D × D` teacher Gram `F F^T / S`.
    pub teacher_gram: &'a DMatrix<f64>,
    /// `D × n` teacher cross kernel `F F(x) / S`.
    pub teacher_cross: &'a DMatrix<f64>,
    /// `𝒦(x, x)` for each of the `n` test points.
    pub teacher_diag: &'a [f64],
}

/// Sums over the block's test points of the teacher-averaged squared error
/// and of its excess over the infinite-feature limit (both without the ½).
pub struct BlockSums {
    pub error: f64,
    pub excess: f64,
    pub info: PinvInfo,
}

pub fn data_route_block(b: &KernelBlock<'_>) -> BlockSums {
    let (k_inv, info) = linalg::pinv_sym(b.student_gram);
    let (t_inv, _) = linalg::pinv_sym(b.teacher_gram);
    let a = &k_inv * b.student_cross;
    let a_star = &t_inv * b.teacher_cross;
    let ga = b.teacher_gram * &a;
    let da = &a - &a_star;
    let gda = b.teacher_gram * &da;
    let mut errs = Vec::with_capacity(a.ncols());
    let mut excess = Vec::with_capacity(a.ncols());
    for j in 0..a.ncols() {
        let quad = a.column(j).dot(&ga.column(j));
        let cross = a.column(j).dot(&b.teacher_cross.column(j));
        errs.push((b.teacher_diag[j] + quad - 2.0 * cross).max(0.0));
        excess.push(da.column(j).dot(&gda.column(j)).max(0.0));
    }
    BlockSums { error: linalg::pairwise_sum(&errs), excess: linalg::pairwise_sum(&excess), info }
}

fn evaluate_blocks(
    fm: &FeatureMap,
    projector: &Projector,
    train: &Dataset,
    test: &Dataset,
) -> Result<(f64, f64, PinvInfo)> {
    check_dims(fm, Some(projector), &[train, test])?;
    let s = fm.n_features() as f64;
    let phi = fm.eval(&train.inputs)?;
    let f = projector.student_features(&phi);
    let student_gram = &f * f.transpose();
    let mut teacher_gram = &phi * phi.transpose() / s;
    linalg::symmetrize(&mut teacher_gram);
    let mut err = 0.0;
    let mut exc = 0.0;
    let mut info = PinvInfo { cutoff: 0.0, truncated: 0 };
    let block = 4 * crate::features::EVAL_BLOCK;
    let mut start = 0;
    while start < test.len() {
        let end = (start + block).min(test.len());
        let phi_t = fm.eval(&test.inputs.slice(start, end))?;
        let f_t = projector.student_features(&phi_t);
        let student_cross = &f * f_t.transpose();
        let teacher_cross = &phi * phi_t.transpose() / s;
        let diag: Vec<f64> = phi_t.row_iter().map(|r| r.norm_squared() / s).collect();
        let sums = data_route_block(&KernelBlock {
            student_gram: &student_gram,
            student_cross: &student_cross,
            teacher_gram: &teacher_gram,
            teacher_cross: &teacher_cross,
            teacher_diag: &diag,
        });
        err += sums.error;
        exc += sums.excess;
        info = sums.info;
        start = end;
    }
    let n = test.len() as f64;
    Ok((0.5 * err / n, 0.5 * exc / n, info))
}

/// Teacher-averaged `L(D, P)` with the input expectation taken as a Monte
/// Carlo average over `test`. Works in data space, so `S` and `P` may be
/// large as long as `D` is moderate.
pub fn expected_loss_finite_mc(
    fm: &FeatureMap,
    projector: &Projector,
    train: &Dataset,
    test: &Dataset,
) -> Result<LossEstimate> {
    let (loss, _, info) = evaluate_blocks(fm, projector, train, test)?;
    Ok(LossEstimate::single(loss, Some(info)))
}

/// Teacher-averaged `L(D, P) - L(D)` over the test sample (nonnegative).
pub fn excess_over_infinite_params(
    fm: &FeatureMap,
    projector: &Projector,
    train: &Dataset,
    test: &Dataset,
) -> Result<f64> {
    Ok(evaluate_blocks(fm, projector, train, test)?.1)
}

/// `L(D) = ½ E_x[𝒦(x,x) - 𝒦(x)^T 𝒦bar^+ 𝒦(x)]`, Monte Carlo over `test`.
pub fn loss_infinite_params(fm: &FeatureMap, train: &Dataset, test: &Dataset) -> Result<LossEstimate> {
    let (loss, _, info) = evaluate_blocks(fm, &Projector::full(fm.n_features()), train, test)?;
    Ok(LossEstimate::single(loss, Some(info)))
}

/// `L(D) = Tr[(I - Π) 𝒞] / 2S` with `Π` the orthogonal projector onto the
/// span of the training feature vectors: the input average done exactly
/// under `moment`.
pub fn loss_infinite_params_exact(fm: &FeatureMap, train: &Dataset, moment: &SecondMoment) -> Result<LossEstimate> {
    check_dims(fm, None, &[train])?;
    check_moment(fm, moment)?;
    let phi = fm.eval(&train.inputs)?;
    let (value, info) = span_residual_trace(&phi, moment);
    Ok(LossEstimate::single(value / (2.0 * moment.dim() as f64), Some(info)))
}

/// `Tr[(I - Π) 𝒞]` where `Π` projects onto the row space of `rows`.
pub fn span_residual_trace(rows: &DMatrix<f64>, moment: &SecondMoment) -> (f64, PinvInfo) {
    if rows.nrows() == 0 {
        return (moment.trace(), PinvInfo { cutoff: 0.0, truncated: 0 });
    }
    let (explained, info) = nested_span_explained(rows, moment, &[rows.nrows()]).expect("full size is in range")[0];
    ((moment.trace() - explained).max(0.0), info)
}

/// `Tr[Π_k 𝒞]` with `Π_k` the projector onto the span of the first `k` rows
/// of `rows`, for each `k` in `sizes`. Each prefix extends the orthonormal
/// basis of the shorter ones, so the values never decrease along `sizes`.
pub fn nested_span_explained(rows: &DMatrix<f64>, moment: &SecondMoment, sizes: &[usize]) -> Result<Vec<(f64, PinvInfo)>> {
    let n = rows.nrows();
    if rows.ncols() != moment.dim() {
        return config("rows and moment disagree on the feature count");
    }
    if let Some(&k) = sizes.iter().find(|&&k| k == 0 || k > n) {
        return config(format!("prefix size {k} outside 1..={n}"));
    }
    let nb = linalg::nested_row_basis(rows);
    let q = nb.basis.transpose();
    let qc = moment.right_apply(&q);
    let mut running = Vec::with_capacity(q.nrows() + 1);
    running.push(0.0);
    let mut acc = 0.0;
    for j in 0..q.nrows() {
        acc += q.row(j).dot(&qc.row(j));
        running.push(acc);
    }
    Ok(sizes.iter().map(|&k| (running[nb.rank[k - 1]], nb.info[k - 1])).collect())
}

/// Per-teacher infinite-data loss `½ (w* - omega)^T 𝒞 (w* - omega)`.
pub fn loss_infinite_data_for_teacher(projector: &Projector, moment: &SecondMoment, teacher: &TeacherWeights) -> f64 {
    let (x_star, _) = infinite_data_solution(projector, moment);
    let w = projector.to_dense().tr_mul(&(&x_star * &teacher.omega)) - &teacher.omega;
    let cw = match &moment.moment {
        Moment::Dense(c) => c * &w,
        Moment::Diagonal(c) => w.component_mul(c),
    };
    0.5 * w.dot(&cw)
}

/// Per-teacher infinite-feature loss over a test sample:
/// `½ mean_x (A*(x)^T y_train - y(x))^2`.
pub fn loss_infinite_params_for_teacher(
    fm: &FeatureMap,
    teacher: &TeacherWeights,
    train: &Dataset,
    test: &Dataset,
) -> Result<f64> {
    check_dims(fm, None, &[train, test])?;
    let phi = fm.eval(&train.inputs)?;
    let y = &phi * &teacher.omega;
    // Interpolating the teacher with all features is the P = S student.
    let (theta, _) = linalg::lstsq_min_norm(&phi, &DMatrix::from_column_slice(y.len(), 1, y.as_slice()));
    let phi_t = fm.eval(&test.inputs)?;
    let diff: DVector<f64> = &phi_t * theta.column(0) - &phi_t * &teacher.omega;
    let sq: Vec<f64> = diff.iter().map(|e| e * e).collect();
    Ok(0.5 * linalg::pairwise_sum(&sq) / sq.len() as f64)
}

#[cfg(test)]
mod tests;
