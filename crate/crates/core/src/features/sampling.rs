use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::rng;

use super::{FeatureMap, TeacherWeights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ManifoldKind {
    /// `[0, 1)^d` with the Euclidean metric.
    UnitHypercube,
    /// `[0, 2π)^d` with per-coordinate wrapped distances.
    FlatTorus,
}

/// Distance used for neighbor queries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Metric {
    Euclidean,
    /// Flat torus with the given period on every coordinate.
    Torus { period: f64 },
}

impl Metric {
    #[inline]
    pub fn coord_delta(&self, a: f64, b: f64) -> f64 {
        match *self {
            Metric::Euclidean => a - b,
            Metric::Torus { period } => {
                let mut d = (a - b).rem_euclid(period);
                if d > 0.5 * period {
                    d -= period;
                }
                d
            }
        }
    }

    #[inline]
    pub fn dist2(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(&x, &y)| {
                let d = self.coord_delta(x, y);
                d * d
            })
            .sum()
    }

    pub fn dist(&self, a: &[f64], b: &[f64]) -> f64 {
        self.dist2(a, b).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ManifoldSpec {
    pub kind: ManifoldKind,
    pub dim: usize,
}

impl ManifoldSpec {
    pub fn new(kind: ManifoldKind, dim: usize) -> Result<Self> {
        if dim == 0 {
            return config("manifold dimension must be at least 1");
        }
        Ok(Self { kind, dim })
    }

    pub fn hypercube(dim: usize) -> Result<Self> {
        Self::new(ManifoldKind::UnitHypercube, dim)
    }

    pub fn torus(dim: usize) -> Result<Self> {
        Self::new(ManifoldKind::FlatTorus, dim)
    }

    /// Side length of the coordinate box.
    pub fn extent(&self) -> f64 {
        match self.kind {
            ManifoldKind::UnitHypercube => 1.0,
            ManifoldKind::FlatTorus => TAU,
        }
    }

    pub fn metric(&self) -> Metric {
        match self.kind {
            ManifoldKind::UnitHypercube => Metric::Euclidean,
            ManifoldKind::FlatTorus => Metric::Torus { period: TAU },
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        let hi = self.extent();
        x.len() == self.dim && x.iter().all(|&v| (0.0..hi).contains(&v))
    }
}

/// Row-major point cloud.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Points {
    dim: usize,
    coords: Vec<f64>,
}

impl Points {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return config("points need at least one coordinate");
        }
        if !coords.len().is_multiple_of(dim) {
            return config(format!("{} coordinates do not split into rows of {dim}", coords.len()));
        }
        Ok(Self { dim, coords })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return config("ragged point rows");
        }
        Self::new(dim, rows.concat())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn prefix(&self, n: usize) -> Points {
        let n = n.min(self.len());
        Points { dim: self.dim, coords: self.coords[..n * self.dim].to_vec() }
    }

    pub fn slice(&self, start: usize, end: usize) -> Points {
        Points { dim: self.dim, coords: self.coords[start * self.dim..end * self.dim].to_vec() }
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.len(), self.dim, &self.coords)
    }
}

/// Inputs sampled from a manifold, optionally labelled by a teacher.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Points,
    pub targets: Option<DVector<f64>>,
    pub manifold: ManifoldSpec,
    pub seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.dim()
    }

    /// First `n` rows. Samples are drawn sequentially, so the prefix of a
    /// large draw equals a smaller draw with the same seed.
    pub fn prefix(&self, n: usize) -> Dataset {
        Dataset {
            inputs: self.inputs.prefix(n),
            targets: self.targets.as_ref().map(|t| t.rows(0, n.min(t.len())).into_owned()),
            manifold: self.manifold,
            seed: self.seed,
        }
    }

    /// Attach teacher labels `y_a = sum_M omega_M F_M(x_a)`.
    pub fn with_targets(mut self, fm: &FeatureMap, teacher: &TeacherWeights) -> Result<Self> {
        if teacher.len() != fm.n_features() {
            return config(format!(
                "teacher has {} weights but the feature map has {} features",
                teacher.len(),
                fm.n_features()
            ));
        }
        let phi = fm.eval(&self.inputs)?;
        self.targets = Some(phi * &teacher.omega);
        Ok(self)
    }
}

/// Draw `n` i.i.d. uniform points from the manifold.
pub fn sample_manifold(spec: ManifoldSpec, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return config("cannot sample an empty dataset");
    }
    let spec = ManifoldSpec::new(spec.kind, spec.dim)?;
    let extent = spec.extent();
    let mut rng = rng::stream(seed, "manifold", 0);
    let coords = (0..n * spec.dim).map(|_| rng.random::<f64>() * extent).collect();
    Ok(Dataset { inputs: Points::new(spec.dim, coords)?, targets: None, manifold: spec, seed })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hypercube_range() {
        let spec = ManifoldSpec::hypercube(3).unwrap();
        let ds = sample_manifold(spec, 5, 7).unwrap();
        assert_eq!(ds.len(), 5);
        assert_eq!(ds.dim(), 3);
        assert!(ds.inputs.rows().all(|r| spec.contains(r)));
    }

    #[test]
    fn torus_range() {
        let spec = ManifoldSpec::torus(2).unwrap();
        let ds = sample_manifold(spec, 4, 1).unwrap();
        assert!(ds.inputs.coords().iter().all(|&v| (0.0..TAU).contains(&v)));
    }

    #[test]
    fn coordinate_means_converge() {
        let spec = ManifoldSpec::hypercube(2).unwrap();
        let ds = sample_manifold(spec, 100_000, 3).unwrap();
        for c in 0..2 {
            let mean = ds.inputs.rows().map(|r| r[c]).sum::<f64>() / ds.len() as f64;
            assert!((mean - 0.5).abs() < 0.01, "coordinate {c} mean {mean}");
        }
    }

    #[test]
    fn prefix_matches_smaller_draw() {
        let spec = ManifoldSpec::torus(3).unwrap();
        let big = sample_manifold(spec, 50, 11).unwrap();
        let small = sample_manifold(spec, 20, 11).unwrap();
        assert_eq!(big.prefix(20), small);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(ManifoldSpec::hypercube(0).is_err());
        assert!(sample_manifold(ManifoldSpec::torus(1).unwrap(), 0, 1).is_err());
    }

    #[test]
    fn torus_wraps_distances() {
        let m = ManifoldSpec::torus(1).unwrap().metric();
        let d = m.dist(&[0.1], &[TAU - 0.1]);
        assert!((d - 0.2).abs() < 1e-12);
    }
}
