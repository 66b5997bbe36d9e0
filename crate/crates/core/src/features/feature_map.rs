use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::rng;

use super::{ManifoldSpec, MomentRole, Points, SecondMoment};

/// Rows of points evaluated per block when feature matrices get large.
pub(crate) const EVAL_BLOCK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Trig {
    Sin,
    Cos,
}

/// One Fourier feature `sqrt(coeff) * trig(freq · x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierMode {
    pub freq: Vec<i32>,
    pub trig: Trig,
    pub coeff: f64,
}

impl FourierMode {
    pub fn is_constant(&self) -> bool {
        self.freq.iter().all(|&n| n == 0)
    }

    /// `E_x[F(x)^2]` under the uniform measure on the torus.
    pub fn mean_square(&self) -> f64 {
        match (self.is_constant(), self.trig) {
            (true, Trig::Cos) => self.coeff,
            (true, Trig::Sin) => 0.0,
            (false, _) => 0.5 * self.coeff,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureKind {
    /// `F_M(x) = max(0, w_M · x + b_M)`; `weights` is `S × d`.
    RandomRelu { weights: DMatrix<f64>, bias: DVector<f64> },
    /// Fourier features on the flat torus. `smoothness` is recorded when the
    /// coefficients were generated from a smoothness order.
    FourierTorus { smoothness: Option<f64>, modes: Vec<FourierMode> },
    /// Tabulated features on `[0, 1)` split into `values.ncols()` cells;
    /// `values` is `S × grid`.
    Explicit { values: DMatrix<f64> },
}

/// A pool of `S` scalar feature functions.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub kind: FeatureKind,
    pub input_dim: usize,
    pub seed: u64,
}

impl FeatureMap {
    pub fn n_features(&self) -> usize {
        match &self.kind {
            FeatureKind::RandomRelu { weights, .. } => weights.nrows(),
            FeatureKind::FourierTorus { modes, .. } => modes.len(),
            FeatureKind::Explicit { values } => values.nrows(),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            FeatureKind::RandomRelu { .. } => "random-relu",
            FeatureKind::FourierTorus { .. } => "fourier-torus",
            FeatureKind::Explicit { .. } => "explicit",
        }
    }

    /// Manifold the features are meant to be evaluated on.
    pub fn natural_manifold(&self) -> ManifoldSpec {
        match self.kind {
            FeatureKind::FourierTorus { .. } => ManifoldSpec::torus(self.input_dim),
            _ => ManifoldSpec::hypercube(self.input_dim),
        }
        .expect("feature maps always have input_dim >= 1")
    }

    /// Evaluate all features at every point: an `n × S` matrix.
    pub fn eval(&self, points: &Points) -> Result<DMatrix<f64>> {
        if points.dim() != self.input_dim {
            return config(format!(
                "points have dimension {} but the feature map expects {}",
                points.dim(),
                self.input_dim
            ));
        }
        let n = points.len();
        let s = self.n_features();
        Ok(match &self.kind {
            FeatureKind::RandomRelu { weights, bias } => {
                let mut out = points.to_matrix() * weights.transpose();
                for (j, mut col) in out.column_iter_mut().enumerate() {
                    let b = bias[j];
                    col.apply(|v| *v = (*v + b).max(0.0));
                }
                out
            }
            FeatureKind::FourierTorus { modes, .. } => {
                let amps: Vec<f64> = modes.iter().map(|m| m.coeff.sqrt()).collect();
                let mut out = DMatrix::zeros(n, s);
                for (i, x) in points.rows().enumerate() {
                    for (j, m) in modes.iter().enumerate() {
                        let phase: f64 = m.freq.iter().zip(x).map(|(&k, &xi)| f64::from(k) * xi).sum();
                        let v = match m.trig {
                            Trig::Sin => phase.sin(),
                            Trig::Cos => phase.cos(),
                        };
                        out[(i, j)] = amps[j] * v;
                    }
                }
                out
            }
            FeatureKind::Explicit { values } => {
                let grid = values.ncols();
                let mut out = DMatrix::zeros(n, s);
                for (i, x) in points.rows().enumerate() {
                    let cell = ((x[0] * grid as f64).floor().max(0.0) as usize).min(grid - 1);
                    out.row_mut(i).copy_from(&values.column(cell).transpose());
                }
                out
            }
        })
    }

    /// Features at a single point.
    pub fn eval_point(&self, x: &[f64]) -> Result<DVector<f64>> {
        let m = self.eval(&Points::new(x.len().max(1), x.to_vec())?)?;
        Ok(m.row(0).transpose())
    }

    /// Exact `E_x[F F^T]` when it is known in closed form: Fourier features
    /// under the uniform torus measure are orthogonal, so the moment is
    /// diagonal. Assumes at most one of each `±freq` pair per trig function.
    pub fn analytic_second_moment(&self) -> Option<SecondMoment> {
        match &self.kind {
            FeatureKind::FourierTorus { modes, .. } => Some(SecondMoment::diagonal(
                DVector::from_iterator(modes.len(), modes.iter().map(FourierMode::mean_square)),
                MomentRole::FeatureFeature,
                usize::MAX,
            )),
            _ => None,
        }
    }

    /// Same map with every ReLU bias set to zero.
    pub fn with_zero_bias(mut self) -> Self {
        if let FeatureKind::RandomRelu { bias, .. } = &mut self.kind {
            bias.fill(0.0);
        }
        self
    }
}

/// Random ReLU features with `w ~ N(0, 2/d)` and `b ~ N(0, 0.01)`.
pub fn build_relu_features(input_dim: usize, s: usize, seed: u64) -> Result<FeatureMap> {
    if input_dim == 0 || s == 0 {
        return config("relu features need input_dim >= 1 and S >= 1");
    }
    let w_dist = Normal::new(0.0, (2.0 / input_dim as f64).sqrt()).expect("finite std");
    let b_dist = Normal::new(0.0, 0.1).expect("finite std");
    let mut w_rng = rng::stream(seed, "relu-weights", 0);
    let mut b_rng = rng::stream(seed, "relu-bias", 0);
    // Row-major draw so feature M always gets the same weights regardless of S.
    let weights = DMatrix::from_row_iterator(s, input_dim, (0..s * input_dim).map(|_| w_dist.sample(&mut w_rng)));
    let bias = DVector::from_iterator(s, (0..s).map(|_| b_dist.sample(&mut b_rng)));
    Ok(FeatureMap { kind: FeatureKind::RandomRelu { weights, bias }, input_dim, seed })
}

/// Fourier features on the `d`-torus with every integer mode
/// `max_i |n_i| <= cutoff`. One representative of each `±n` pair is kept
/// (first nonzero component positive) and contributes a sin and a cos
/// feature; the zero mode contributes the constant. Coefficients are
/// `|n|^{-(d+t)}` (and 1 for the constant), so the induced kernel is `C^t`.
pub fn build_torus_features(d: usize, t: f64, cutoff: usize) -> Result<FeatureMap> {
    if d == 0 {
        return config("torus dimension must be at least 1");
    }
    if !(t > 0.0) || cutoff == 0 {
        return config("torus features need t > 0 and mode_cutoff >= 1");
    }
    let c = cutoff as i32;
    let side = 2 * cutoff + 1;
    let total = side.pow(d as u32);
    let mut modes = vec![FourierMode { freq: vec![0; d], trig: Trig::Cos, coeff: 1.0 }];
    let mut freq = vec![0i32; d];
    for mut code in 0..total {
        for f in freq.iter_mut() {
            *f = (code % side) as i32 - c;
            code /= side;
        }
        let Some(&lead) = freq.iter().find(|&&n| n != 0) else { continue };
        if lead < 0 {
            continue;
        }
        let norm = freq.iter().map(|&n| f64::from(n * n)).sum::<f64>().sqrt();
        let coeff = norm.powf(-(d as f64 + t));
        modes.push(FourierMode { freq: freq.clone(), trig: Trig::Sin, coeff });
        modes.push(FourierMode { freq: freq.clone(), trig: Trig::Cos, coeff });
    }
    Ok(FeatureMap { kind: FeatureKind::FourierTorus { smoothness: Some(t), modes }, input_dim: d, seed: 0 })
}

/// Orthogonal Fourier features on the circle whose second moment is exactly
/// `diag(eigenvalues)`: the constant carries the first eigenvalue, then
/// features alternate sin/cos with increasing frequency.
pub fn build_spectral_features(eigenvalues: &[f64]) -> Result<FeatureMap> {
    if eigenvalues.is_empty() {
        return config("spectral features need at least one eigenvalue");
    }
    if eigenvalues.iter().any(|&l| !(l >= 0.0) || !l.is_finite()) {
        return config("spectral features need finite nonnegative eigenvalues");
    }
    let modes = eigenvalues
        .iter()
        .enumerate()
        .map(|(i, &lam)| {
            if i == 0 {
                FourierMode { freq: vec![0], trig: Trig::Cos, coeff: lam }
            } else {
                let k = i.div_ceil(2) as i32;
                let trig = if i % 2 == 1 { Trig::Sin } else { Trig::Cos };
                FourierMode { freq: vec![k], trig, coeff: 2.0 * lam }
            }
        })
        .collect();
    Ok(FeatureMap { kind: FeatureKind::FourierTorus { smoothness: None, modes }, input_dim: 1, seed: 0 })
}

/// Tabulated features; `values` is `S × grid`.
pub fn build_explicit_features(values: DMatrix<f64>) -> Result<FeatureMap> {
    if values.nrows() == 0 || values.ncols() == 0 {
        return config("explicit features need a nonempty value table");
    }
    if values.iter().any(|v| !v.is_finite()) {
        return config("explicit feature values must be finite");
    }
    Ok(FeatureMap { kind: FeatureKind::Explicit { values }, input_dim: 1, seed: 0 })
}

/// Random explicit table, mostly useful for tests.
pub fn random_explicit_features(s: usize, grid: usize, seed: u64) -> Result<FeatureMap> {
    let mut r = rng::stream(seed, "explicit", 0);
    let values = DMatrix::from_fn(s, grid, |_, _| r.random::<f64>() * 2.0 - 1.0);
    let mut fm = build_explicit_features(values)?;
    fm.seed = seed;
    Ok(fm)
}
