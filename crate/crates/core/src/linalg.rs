//! Dense linear algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{config, Result};

/// Relative singular-value cutoff used for every pseudo-inverse.
pub const PINV_RCOND: f64 = 1e-10;

/// Outcome of a truncated pseudo-inverse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinvInfo {
    /// Absolute cutoff applied to singular values (or eigenvalue magnitudes).
    pub cutoff: f64,
    /// Number of directions dropped below the cutoff.
    pub truncated: usize,
}

impl PinvInfo {
    pub fn rank_deficient(&self) -> bool {
        self.truncated > 0
    }
}

/// Largest relative asymmetry `max|a_ij - a_ji| / max|a_ij|`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    if n != m.ncols() {
        return f64::INFINITY;
    }
    let scale = m.amax();
    if scale == 0.0 {
        return 0.0;
    }
    let mut worst: f64 = 0.0;
    for j in 0..n {
        for i in (j + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst / scale
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues sorted descending.
/// Eigenvectors are returned as the columns of the second element.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Moore–Penrose pseudo-inverse of a symmetric matrix.
pub fn pinv_sym(m: &DMatrix<f64>) -> (DMatrix<f64>, PinvInfo) {
    let n = m.nrows();
    if n == 0 {
        return (DMatrix::zeros(0, 0), PinvInfo { cutoff: 0.0, truncated: 0 });
    }
    let eig = SymmetricEigen::new(m.clone());
    let top = eig.eigenvalues.amax();
    let cutoff = top * PINV_RCOND;
    let mut scaled = eig.eigenvectors.clone();
    let mut truncated = 0;
    for (j, &lam) in eig.eigenvalues.iter().enumerate() {
        let inv = if lam.abs() > cutoff && lam != 0.0 {
            1.0 / lam
        } else {
            truncated += 1;
            0.0
        };
        scaled.column_mut(j).scale_mut(inv);
    }
    let out = &scaled * eig.eigenvectors.transpose();
    (out, PinvInfo { cutoff, truncated })
}

/// Minimum-norm least-squares solution of `a x = b` (columns of `b` solved
/// independently) with the same relative cutoff as [`pinv_sym`].
pub fn lstsq_min_norm(a: &DMatrix<f64>, b: &DMatrix<f64>) -> (DMatrix<f64>, PinvInfo) {
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("svd computed with u");
    let v_t = svd.v_t.expect("svd computed with v_t");
    let top = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cutoff = top * PINV_RCOND;
    let mut utb = u.transpose() * b;
    let mut truncated = 0;
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            utb.row_mut(i).scale_mut(1.0 / s);
        } else {
            truncated += 1;
            utb.row_mut(i).fill(0.0);
        }
    }
    (v_t.transpose() * utb, PinvInfo { cutoff, truncated })
}

/// Orthonormal bases for the spans of the leading rows of a matrix, grown
/// one row at a time so every prefix shares the basis of the shorter ones.
#[derive(Debug, Clone)]
pub struct NestedBasis {
    /// Basis vectors as columns, in the order they were added.
    pub basis: DMatrix<f64>,
    /// `rank[i]` basis vectors span rows `0..=i`.
    pub rank: Vec<usize>,
    /// Cutoff and dropped rows for each prefix.
    pub info: Vec<PinvInfo>,
}

/// Gram–Schmidt (two passes) over the rows of `rows`. A row adds a basis
/// vector when its residual exceeds [`PINV_RCOND`] times the largest row norm
/// seen so far.
pub fn nested_row_basis(rows: &DMatrix<f64>) -> NestedBasis {
    let (n, s) = rows.shape();
    let mut basis = DMatrix::<f64>::zeros(s, n.min(s));
    let mut rank = Vec::with_capacity(n);
    let mut info = Vec::with_capacity(n);
    let mut r = 0;
    let mut largest: f64 = 0.0;
    for i in 0..n {
        let mut v = rows.row(i).transpose();
        largest = largest.max(v.norm());
        let cutoff = largest * PINV_RCOND;
        if r < s {
            for _ in 0..2 {
                let q = basis.columns(0, r);
                let c = q.tr_mul(&v);
                v -= q * c;
            }
            let norm = v.norm();
            if norm > cutoff && norm > 0.0 {
                basis.set_column(r, &(v / norm));
                r += 1;
            }
        }
        rank.push(r);
        info.push(PinvInfo { cutoff, truncated: i + 1 - r });
    }
    basis.resize_horizontally_mut(r, 0.0);
    NestedBasis { basis, rank, info }
}

/// `Tr(a b)` without forming the product.
pub fn trace_of_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    debug_assert_eq!(a.ncols(), b.nrows());
    debug_assert_eq!(a.nrows(), b.ncols());
    let mut acc = 0.0;
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

/// `p × s` matrix with orthonormal rows spanning a uniformly random
/// `p`-dimensional subspace (Gram–Schmidt on Gaussian rows).
pub fn random_orthonormal_rows<R: Rng + ?Sized>(p: usize, s: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    if p > s {
        return config(format!("cannot draw {p} orthonormal rows in dimension {s}"));
    }
    // Stored transposed so each basis vector is a contiguous column.
    let mut basis = DMatrix::<f64>::zeros(s, p);
    for j in 0..p {
        loop {
            let mut v = DVector::<f64>::from_fn(s, |_, _| rng.sample(StandardNormal));
            // Two passes of modified Gram–Schmidt keep orthogonality at roundoff.
            for _ in 0..2 {
                for k in 0..j {
                    let q = basis.column(k);
                    let c = q.dot(&v);
                    v.axpy(-c, &q, 1.0);
                }
            }
            let norm = v.norm();
            if norm > 1e-8 {
                basis.set_column(j, &(v / norm));
                break;
            }
        }
    }
    Ok(basis.transpose())
}

/// Sum with Neumaier compensation, used where long reductions matter
/// (spectra with millions of entries).
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Pairwise (cascade) summation; the result depends only on the order of
/// `values`, never on how work was scheduled.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 16 {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn nested_basis_skips_dependent_rows() {
        let rows = DMatrix::from_row_slice(4, 3, &[1.0, 0.0, 1.0, 2.0, 0.0, 2.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0]);
        let nb = nested_row_basis(&rows);
        assert_eq!(nb.rank, vec![1, 1, 2, 3]);
        assert_eq!(nb.info[1].truncated, 1);
        assert_relative_eq!(nb.basis.tr_mul(&nb.basis), DMatrix::identity(3, 3), epsilon = 1e-14);
    }

    #[test]
    fn pinv_of_invertible_is_inverse() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let (p, info) = pinv_sym(&m);
        assert_eq!(info.truncated, 0);
        let id = &m * &p;
        assert_relative_eq!(id, DMatrix::identity(2, 2), epsilon = 1e-12);
    }

    #[test]
    fn pinv_truncates_null_direction() {
        let v = DVector::from_vec(vec![1.0, 2.0, 2.0]);
        let m = &v * v.transpose();
        let (p, info) = pinv_sym(&m);
        assert_eq!(info.truncated, 2);
        assert_relative_eq!(&m * &p * &m, m, epsilon = 1e-12);
    }

    #[test]
    fn lstsq_picks_min_norm() {
        // One equation, two unknowns: x + y = 2 -> (1, 1).
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let b = DMatrix::from_row_slice(1, 1, &[2.0]);
        let (x, _) = lstsq_min_norm(&a, &b);
        assert_relative_eq!(x[(0, 0)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(x[(1, 0)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn orthonormal_rows() {
        let mut rng = crate::rng::stream(1, "test", 0);
        let q = random_orthonormal_rows(5, 12, &mut rng).unwrap();
        let g = &q * q.transpose();
        assert_relative_eq!(g, DMatrix::identity(5, 5), epsilon = 1e-12);
    }

    #[test]
    fn eigen_sorted_descending() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 3.0, 1.0]));
        let (vals, vecs) = sym_eigen_desc(&m);
        assert_eq!(vals, vec![3.0, 1.0, 0.5]);
        assert_relative_eq!(vecs.column(0).abs()[1], 1.0);
    }
}
