use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::linalg;

use super::{Dataset, FeatureMap, Projector, EVAL_BLOCK};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MomentRole {
    /// `E_x[F F^T]` or its sample estimate (`S × S`, or `P × P` for students).
    FeatureFeature,
    /// Normalized data-data Gram matrix.
    DataData,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Moment {
    Dense(DMatrix<f64>),
    /// Exactly diagonal moment, stored without the zeros.
    Diagonal(DVector<f64>),
}

/// A second-moment or Gram matrix together with how it was formed.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondMoment {
    pub moment: Moment,
    pub role: MomentRole,
    /// Number of points (or features) averaged; `usize::MAX` for exact moments.
    pub sample_count: usize,
}

impl SecondMoment {
    pub fn dense(matrix: DMatrix<f64>, role: MomentRole, sample_count: usize) -> Self {
        Self { moment: Moment::Dense(matrix), role, sample_count }
    }

    pub fn diagonal(values: DVector<f64>, role: MomentRole, sample_count: usize) -> Self {
        Self { moment: Moment::Diagonal(values), role, sample_count }
    }

    pub fn nrows(&self) -> usize {
        match &self.moment {
            Moment::Dense(m) => m.nrows(),
            Moment::Diagonal(v) => v.len(),
        }
    }

    pub fn dim(&self) -> usize {
        self.nrows()
    }

    pub fn is_exact(&self) -> bool {
        self.sample_count == usize::MAX
    }

    pub fn trace(&self) -> f64 {
        match &self.moment {
            Moment::Dense(m) => m.trace(),
            Moment::Diagonal(v) => v.sum(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match &self.moment {
            Moment::Dense(m) => m.clone(),
            Moment::Diagonal(v) => DMatrix::from_diagonal(v),
        }
    }

    pub fn diagonal_values(&self) -> Vec<f64> {
        match &self.moment {
            Moment::Dense(m) => m.diagonal().iter().copied().collect(),
            Moment::Diagonal(v) => v.iter().copied().collect(),
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        let moment = match &self.moment {
            Moment::Dense(m) => Moment::Dense(m * c),
            Moment::Diagonal(v) => Moment::Diagonal(v * c),
        };
        Self { moment, role: self.role, sample_count: self.sample_count }
    }

    /// `rows · m` for an `n × S` matrix of feature rows.
    pub fn right_apply(&self, rows: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.moment {
            Moment::Dense(m) => rows * m,
            Moment::Diagonal(v) => {
                let mut out = rows.clone();
                for (j, mut col) in out.column_iter_mut().enumerate() {
                    col.scale_mut(v[j]);
                }
                out
            }
        }
    }

    /// `rows · m^{1/2}`, with negative eigenvalues clamped to zero.
    pub fn half_right_apply(&self, rows: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.moment {
            Moment::Dense(m) => {
                let eig = nalgebra::SymmetricEigen::new(m.clone());
                let v = &eig.eigenvectors;
                let scaled = rows * v * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
                scaled * v.transpose()
            }
            Moment::Diagonal(v) => {
                let mut out = rows.clone();
                for (j, mut col) in out.column_iter_mut().enumerate() {
                    col.scale_mut(v[j].max(0.0).sqrt());
                }
                out
            }
        }
    }

    /// Relative asymmetry; zero for diagonal storage.
    pub fn asymmetry(&self) -> f64 {
        match &self.moment {
            Moment::Dense(m) => linalg::asymmetry(m),
            Moment::Diagonal(_) => 0.0,
        }
    }

    /// `-min(λ) / max(λ)`, positive when the matrix fails to be PSD.
    pub fn psd_violation(&self) -> f64 {
        let vals = match &self.moment {
            Moment::Dense(m) => linalg::sym_eigen_desc(m).0,
            Moment::Diagonal(v) => {
                let mut vals: Vec<f64> = v.iter().copied().collect();
                vals.sort_by(|a, b| b.total_cmp(a));
                vals
            }
        };
        match (vals.first(), vals.last()) {
            (Some(&top), Some(&bottom)) if top > 0.0 => -bottom / top,
            (Some(_), Some(&bottom)) => -bottom,
            _ => 0.0,
        }
    }
}

/// Sample feature second moment `(1/D) sum_a F(x_a) F(x_a)^T`.
pub fn second_moment_features(fm: &FeatureMap, data: &Dataset) -> Result<SecondMoment> {
    if data.is_empty() {
        return config("second moment needs at least one sample");
    }
    let s = fm.n_features();
    let n = data.len();
    let mut acc = DMatrix::<f64>::zeros(s, s);
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_BLOCK * 8).min(n);
        let phi = fm.eval(&data.inputs.slice(start, end))?;
        acc += phi.transpose() * &phi;
        start = end;
    }
    acc /= n as f64;
    linalg::symmetrize(&mut acc);
    Ok(SecondMoment::dense(acc, MomentRole::FeatureFeature, n))
}

/// Normalized kernel between two datasets: `(1/S) F(a)^T F(b)` for the
/// teacher (no projector) or `(1/P) f(a)^T f(b)` for a student.
pub fn gram_matrix(fm: &FeatureMap, student: Option<&Projector>, a: &Dataset, b: &Dataset) -> Result<SecondMoment> {
    if let Some(p) = student {
        if p.s() != fm.n_features() {
            return config(format!("projector expects S = {} but the feature map has {}", p.s(), fm.n_features()));
        }
    }
    let featurize = |d: &Dataset| -> Result<DMatrix<f64>> {
        let phi = fm.eval(&d.inputs)?;
        Ok(match student {
            Some(p) => p.student_features(&phi),
            None => phi,
        })
    };
    let fa = featurize(a)?;
    let norm = fa.ncols() as f64;
    let mut g = if std::ptr::eq(a, b) {
        let mut g = &fa * fa.transpose();
        linalg::symmetrize(&mut g);
        g
    } else {
        &fa * featurize(b)?.transpose()
    };
    g /= norm;
    Ok(SecondMoment::dense(g, MomentRole::DataData, fa.ncols()))
}
