use nalgebra::DMatrix;
use rand::seq::SliceRandom;

use crate::error::{config, Result};
use crate::linalg;
use crate::rng;

use super::{FeatureMap, Moment, Points, SecondMoment};

/// Map from the `S` teacher features to `P` student features,
/// `f_mu = sum_M P_{mu M} F_M`.
#[derive(Debug, Clone, PartialEq)]
pub enum Projector {
    /// Row selection: `f_mu = F_{indices[mu]}`, indices strictly increasing.
    Select { s: usize, indices: Vec<usize> },
    /// General `P × S` matrix (random subspaces, point projectors).
    Dense { matrix: DMatrix<f64> },
}

impl Projector {
    pub fn select(s: usize, indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() || indices.len() > s {
            return config(format!("projector needs 1 <= P <= S, got P = {} with S = {s}", indices.len()));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) || indices.iter().any(|&i| i >= s) {
            return config("projector indices must be strictly increasing and below S");
        }
        Ok(Projector::Select { s, indices })
    }

    /// Keep every teacher feature.
    pub fn full(s: usize) -> Self {
        Projector::Select { s, indices: (0..s).collect() }
    }

    pub fn p(&self) -> usize {
        match self {
            Projector::Select { indices, .. } => indices.len(),
            Projector::Dense { matrix } => matrix.nrows(),
        }
    }

    pub fn s(&self) -> usize {
        match self {
            Projector::Select { s, .. } => *s,
            Projector::Dense { matrix } => matrix.ncols(),
        }
    }

    pub fn is_full_selection(&self) -> bool {
        matches!(self, Projector::Select { s, indices } if indices.len() == *s)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            Projector::Select { s, indices } => {
                let mut m = DMatrix::zeros(indices.len(), *s);
                for (mu, &i) in indices.iter().enumerate() {
                    m[(mu, i)] = 1.0;
                }
                m
            }
            Projector::Dense { matrix } => matrix.clone(),
        }
    }

    /// Student features from teacher features: `n × S -> n × P`.
    pub fn student_features(&self, teacher: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Projector::Select { indices, .. } => teacher.select_columns(indices),
            Projector::Dense { matrix } => teacher * matrix.transpose(),
        }
    }

    /// `P m` for an `S × S` moment: a `P × S` matrix.
    pub fn left(&self, m: &SecondMoment) -> DMatrix<f64> {
        match (&m.moment, self) {
            (Moment::Dense(c), Projector::Select { indices, .. }) => c.select_rows(indices),
            (Moment::Dense(c), Projector::Dense { matrix }) => matrix * c,
            (Moment::Diagonal(c), _) => {
                let mut out = self.to_dense();
                for (j, mut col) in out.column_iter_mut().enumerate() {
                    col.scale_mut(c[j]);
                }
                out
            }
        }
    }

    /// `P m P^T`: a `P × P` matrix.
    pub fn sandwich(&self, m: &SecondMoment) -> DMatrix<f64> {
        let mut out = match (&m.moment, self) {
            (Moment::Dense(c), Projector::Select { indices, .. }) => c.select_rows(indices).select_columns(indices),
            (Moment::Diagonal(c), Projector::Select { indices, .. }) => {
                DMatrix::from_diagonal(&c.select_rows(indices))
            }
            (_, Projector::Dense { matrix }) => self.left(m) * matrix.transpose(),
        };
        linalg::symmetrize(&mut out);
        out
    }

    /// First `p` rows of a dense projector. Nested index selections come
    /// from calling [`random_projector`] with the same seed instead.
    pub fn leading_rows(&self, p: usize) -> Result<Projector> {
        match self {
            Projector::Dense { matrix } if p >= 1 && p <= matrix.nrows() => {
                Ok(Projector::Dense { matrix: matrix.rows(0, p).into_owned() })
            }
            Projector::Dense { .. } => config(format!("leading_rows({p}) out of range for P = {}", self.p())),
            Projector::Select { .. } => config("leading_rows applies to dense projectors only"),
        }
    }
}

/// `P` distinct indices drawn uniformly without replacement, sorted.
pub fn random_projector(s: usize, p: usize, seed: u64) -> Result<Projector> {
    if p == 0 || p > s {
        return config(format!("random projector needs 1 <= P <= S, got P = {p}, S = {s}"));
    }
    let order = selection_order(s, seed);
    let mut indices = order[..p].to_vec();
    indices.sort_unstable();
    Projector::select(s, indices)
}

/// A random permutation of `0..s`; [`random_projector`] keeps its first `P`
/// entries, so projectors with the same seed are nested in `P`.
pub fn selection_order(s: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..s).collect();
    order.shuffle(&mut rng::stream(seed, "projector", 0));
    order
}

/// Projector with orthonormal rows spanning a uniformly random
/// `P`-dimensional subspace of feature space.
pub fn random_subspace_projector(s: usize, p: usize, seed: u64) -> Result<Projector> {
    if p == 0 || p > s {
        return config(format!("random subspace needs 1 <= P <= S, got P = {p}, S = {s}"));
    }
    let matrix = linalg::random_orthonormal_rows(p, s, &mut rng::stream(seed, "subspace", 0))?;
    Ok(Projector::Dense { matrix })
}

/// Projector onto random points of the input manifold: row `mu` is the
/// whitened feature vector `C^{-1/2} F(z_mu)`, so the student feature is
/// `f_mu(x) = F(x)^T C^{-1/2} F(z_mu)`. Exchanging the training points of
/// the infinite-feature loss with these projection points maps the
/// infinite-data loss onto it exactly.
pub fn point_projector(fm: &FeatureMap, moment: &SecondMoment, points: &Points) -> Result<Projector> {
    if points.is_empty() {
        return config("point projector needs at least one point");
    }
    if moment.dim() != fm.n_features() {
        return config("second moment size does not match the feature map");
    }
    let phi = fm.eval(points)?;
    let matrix = match &moment.moment {
        Moment::Diagonal(c) => {
            let mut m = phi;
            for (j, mut col) in m.column_iter_mut().enumerate() {
                let w = if c[j] > 0.0 { c[j].sqrt().recip() } else { 0.0 };
                col.scale_mut(w);
            }
            m
        }
        Moment::Dense(c) => {
            let (vals, vecs) = linalg::sym_eigen_desc(c);
            let cutoff = vals.first().copied().unwrap_or(0.0).abs() * linalg::PINV_RCOND;
            let mut scaled = vecs.clone();
            for (j, mut col) in scaled.column_iter_mut().enumerate() {
                let w = if vals[j] > cutoff { vals[j].sqrt().recip() } else { 0.0 };
                col.scale_mut(w);
            }
            let inv_sqrt = &scaled * vecs.transpose();
            phi * inv_sqrt
        }
    };
    Ok(Projector::Dense { matrix })
}
