//! Nearest-neighbor geometry: distance scaling, intrinsic dimension, and
//! the 1-NN interpolating predictor.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::exactloss::LossEstimate;
use crate::features::io::format_float;
use crate::features::{sample_manifold, Dataset, FeatureMap, ManifoldSpec, Metric, Points, TeacherWeights};
use crate::fit::fit_line;
use crate::rng;
use crate::spectral::ExponentFit;

/// Point sets up to this size are searched by brute force.
pub const BRUTE_FORCE_MAX: usize = 20_000;

/// Grid search is used only up to this dimension; above it brute force
/// is cheaper than enumerating neighbor cells.
const GRID_MAX_DIM: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NNReport {
    /// Mean of `log r_k` over queries.
    pub mean_log_distance: f64,
    pub k: usize,
    pub n_points: usize,
    /// `r_k` for each query, in query order.
    pub distances: Vec<f64>,
}

/// Sorted distances (ascending) from one query to its `k` nearest points.
fn push_candidate(best: &mut Vec<(f64, usize)>, k: usize, d2: f64, j: usize) {
    if best.len() == k && d2 >= best[k - 1].0 {
        return;
    }
    let pos = best.partition_point(|&(v, _)| v <= d2);
    best.insert(pos, (d2, j));
    best.truncate(k);
}

/// Exact k-nearest-neighbor structure over a fixed point set.
pub struct NeighborIndex<'a> {
    points: &'a Points,
    metric: Metric,
    grid: Option<Grid>,
}

struct Grid {
    lo: Vec<f64>,
    cell: f64,
    m: usize,
    periodic: bool,
    /// Point indices bucketed by flattened cell id.
    starts: Vec<usize>,
    members: Vec<usize>,
}

impl Grid {
    fn cell_coord(&self, v: f64, dim: usize) -> usize {
        let c = ((v - self.lo[dim]) / self.cell).floor();
        if self.periodic {
            (c as i64).rem_euclid(self.m as i64) as usize
        } else {
            (c.max(0.0) as usize).min(self.m - 1)
        }
    }

    fn flat(&self, coords: &[usize]) -> usize {
        coords.iter().fold(0, |acc, &c| acc * self.m + c)
    }
}

impl<'a> NeighborIndex<'a> {
    pub fn new(points: &'a Points, metric: Metric) -> Self {
        let n = points.len();
        let d = points.dim();
        let grid = (n > BRUTE_FORCE_MAX && d <= GRID_MAX_DIM).then(|| Self::build_grid(points, metric));
        Self { points, metric, grid }
    }

    fn build_grid(points: &Points, metric: Metric) -> Grid {
        let n = points.len();
        let d = points.dim();
        let (lo, extent, periodic) = match metric {
            Metric::Torus { period } => (vec![0.0; d], period, true),
            Metric::Euclidean => {
                let mut lo = vec![f64::INFINITY; d];
                let mut hi = vec![f64::NEG_INFINITY; d];
                for r in points.rows() {
                    for j in 0..d {
                        lo[j] = lo[j].min(r[j]);
                        hi[j] = hi[j].max(r[j]);
                    }
                }
                let ext = (0..d).map(|j| hi[j] - lo[j]).fold(0.0, f64::max).max(1e-300);
                (lo, ext * (1.0 + 1e-9), false)
            }
        };
        // About two points per cell.
        let m = ((n as f64 / 2.0).powf(1.0 / d as f64).floor() as usize).max(1);
        let cell = extent / m as f64;
        let mut grid = Grid { lo, cell, m, periodic, starts: Vec::new(), members: Vec::new() };
        let n_cells = m.pow(d as u32);
        let mut ids = Vec::with_capacity(n);
        let mut counts = vec![0usize; n_cells + 1];
        let mut coords = vec![0usize; d];
        for r in points.rows() {
            for j in 0..d {
                coords[j] = grid.cell_coord(r[j], j);
            }
            let id = grid.flat(&coords);
            ids.push(id);
            counts[id + 1] += 1;
        }
        for c in 0..n_cells {
            counts[c + 1] += counts[c];
        }
        let mut fill = counts.clone();
        let mut members = vec![0usize; n];
        for (i, &id) in ids.iter().enumerate() {
            members[fill[id]] = i;
            fill[id] += 1;
        }
        grid.starts = counts;
        grid.members = members;
        grid
    }

    /// Squared distances to the `k` nearest points of `q`, ascending,
    /// skipping index `exclude` and (when `skip_coincident`) exact copies.
    fn query(&self, q: &[f64], k: usize, exclude: Option<usize>, skip_coincident: bool) -> Vec<(f64, usize)> {
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        let consider = |j: usize, best: &mut Vec<(f64, usize)>| {
            if Some(j) == exclude {
                return;
            }
            let d2 = self.metric.dist2(q, self.points.row(j));
            if skip_coincident && d2 == 0.0 {
                return;
            }
            push_candidate(best, k, d2, j);
        };
        let Some(g) = &self.grid else {
            for j in 0..self.points.len() {
                consider(j, &mut best);
            }
            return best;
        };
        let d = self.points.dim();
        let centre: Vec<i64> = (0..d).map(|j| g.cell_coord(q[j], j) as i64).collect();
        let max_r = g.m as i64;
        let mut offset = vec![0i64; d];
        let mut coords = vec![0usize; d];
        for r in 0..=max_r {
            // Visit every cell at Chebyshev distance exactly r.
            let side = 2 * r + 1;
            let total = (side as u64).pow(d as u32);
            for code in 0..total {
                let mut c = code;
                let mut on_shell = false;
                let mut valid = true;
                for o in offset.iter_mut() {
                    *o = (c % side as u64) as i64 - r;
                    c /= side as u64;
                    on_shell |= o.abs() == r;
                }
                if !on_shell {
                    continue;
                }
                for j in 0..d {
                    let v = centre[j] + offset[j];
                    if g.periodic {
                        // Skip offsets that wrap onto an already visited cell.
                        if 2 * offset[j].abs() > g.m as i64 || (2 * offset[j] == g.m as i64) {
                            valid = false;
                            break;
                        }
                        coords[j] = v.rem_euclid(g.m as i64) as usize;
                    } else {
                        if v < 0 || v >= g.m as i64 {
                            valid = false;
                            break;
                        }
                        coords[j] = v as usize;
                    }
                }
                if !valid {
                    continue;
                }
                let id = g.flat(&coords);
                for &j in &g.members[g.starts[id]..g.starts[id + 1]] {
                    consider(j, &mut best);
                }
            }
            let covered = r as f64 * g.cell;
            let all_covered = if g.periodic { 2 * r >= g.m as i64 } else { r >= max_r };
            if all_covered || (best.len() == k && best[k - 1].0 <= covered * covered) {
                break;
            }
        }
        best
    }

    /// The `k` smallest distances from each query (ascending per row).
    /// Without `queries`, every indexed point queries all the others.
    pub fn knn(&self, queries: Option<&Points>, k: usize) -> Vec<Vec<f64>> {
        let run = |q: &[f64], exclude: Option<usize>, skip: bool| -> Vec<f64> {
            self.query(q, k, exclude, skip).into_iter().map(|(d2, _)| d2.sqrt()).collect()
        };
        match queries {
            None => (0..self.points.len()).into_par_iter().map(|i| run(self.points.row(i), Some(i), false)).collect(),
            Some(qs) => (0..qs.len()).into_par_iter().map(|i| run(qs.row(i), None, true)).collect(),
        }
    }

    /// Index of the nearest point to each query (ties to the lower index).
    pub fn nearest(&self, queries: &Points) -> Vec<usize> {
        (0..queries.len())
            .into_par_iter()
            .map(|i| self.query(queries.row(i), 1, None, false).first().map_or(0, |&(_, j)| j))
            .collect()
    }
}

/// Exact `k`-th nearest-neighbor distances. With `queries = None` each point
/// queries the rest of the set; explicit queries ignore points that coincide
/// with them exactly.
pub fn nn_distances(points: &Points, queries: Option<&Points>, k: usize, metric: Metric) -> Result<NNReport> {
    if k == 0 {
        return config("neighbor rank k must be at least 1");
    }
    if points.len() < k + usize::from(queries.is_none()) {
        return config(format!("need at least {} points for k = {k}", k + 1));
    }
    if let Some(q) = queries {
        if q.dim() != points.dim() {
            return config("queries and points differ in dimension");
        }
    }
    let idx = NeighborIndex::new(points, metric);
    let all = idx.knn(queries, k);
    let distances: Vec<f64> = all.iter().map(|r| r.get(k - 1).copied().unwrap_or(f64::INFINITY)).collect();
    if distances.iter().any(|d| !d.is_finite()) {
        return config("some query has fewer than k distinct neighbors");
    }
    let logs: Vec<f64> = distances.iter().map(|d| d.ln()).collect();
    let mean_log_distance = crate::linalg::pairwise_sum(&logs) / logs.len() as f64;
    Ok(NNReport { mean_log_distance, k, n_points: points.len(), distances })
}

/// Slope of the seed-averaged mean log 1-NN distance against `log D`.
/// `exponent` is `-slope`, which should approach `1/d`.
pub fn fit_nn_scaling(spec: ManifoldSpec, d_grid: &[usize], seeds: usize, base_seed: u64) -> Result<ExponentFit> {
    check_grid(d_grid)?;
    if seeds == 0 {
        return config("seeds must be at least 1");
    }
    let tasks: Vec<(usize, usize)> = (0..d_grid.len()).flat_map(|i| (0..seeds).map(move |s| (i, s))).collect();
    let vals: Vec<f64> = tasks
        .par_iter()
        .map(|&(i, s)| {
            let ds = sample_manifold(spec, d_grid[i], rng::derive_seed(base_seed, "nn-points", (i * seeds + s) as u64))?;
            Ok(nn_distances(&ds.inputs, None, 1, spec.metric())?.mean_log_distance)
        })
        .collect::<Result<_>>()?;
    let x: Vec<f64> = d_grid.iter().map(|&d| (d as f64).ln()).collect();
    let y: Vec<f64> = (0..d_grid.len()).map(|i| vals[i * seeds..(i + 1) * seeds].iter().sum::<f64>() / seeds as f64).collect();
    let f = fit_line(&x, &y, None)?;
    Ok(ExponentFit {
        exponent: -f.slope,
        slope: f.slope,
        intercept: f.intercept,
        stderr: f.slope_stderr,
        window: (d_grid[0], *d_grid.last().unwrap()),
        r2: f.r2,
        n_points: f.n,
        shrunk: false,
    })
}

fn check_grid(grid: &[usize]) -> Result<()> {
    if grid.len() < 4 {
        return config("scaling fits need at least 4 grid points");
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) || grid[0] == 0 {
        return config("grid must be positive and strictly increasing");
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimEstimate {
    pub d_hat: f64,
    pub per_k: BTreeMap<usize, f64>,
    pub n_points: usize,
    /// Number of points nudged off exact duplicates.
    pub jittered: usize,
    /// Small sample or disagreeing per-k estimates.
    pub wide_spread: bool,
}

impl DimEstimate {
    /// Keyed CSV record: one `key,value` line per field.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("key,value\n");
        let _ = writeln!(out, "d_hat,{}", format_float(self.d_hat));
        for (k, v) in &self.per_k {
            let _ = writeln!(out, "d_k{k},{}", format_float(*v));
        }
        let _ = writeln!(out, "n_points,{}", self.n_points);
        let _ = writeln!(out, "jittered,{}", self.jittered);
        let _ = writeln!(out, "wide_spread,{}", self.wide_spread);
        out
    }
}

/// Minimum sample size for [`estimate_dim`].
pub const DIM_MIN_POINTS: usize = 100;
/// Below this size the estimate is always flagged as wide.
pub const DIM_STABLE_POINTS: usize = 1000;

/// Maximum-likelihood intrinsic dimension from `k = 2, 3, 4` neighbors:
/// `d_k = [mean_x (1/(k-1)) sum_{j<k} log(r_k / r_j)]^{-1}`, averaged over k.
pub fn estimate_dim(points: &Points, metric: Metric) -> Result<DimEstimate> {
    let n = points.len();
    if n < DIM_MIN_POINTS {
        return config(format!("intrinsic dimension needs at least {DIM_MIN_POINTS} points, got {n}"));
    }
    let kmax = 4;
    let mut pts = points.clone();
    let mut jittered = 0;
    let mut knn = NeighborIndex::new(&pts, metric).knn(None, kmax);
    let dup: Vec<usize> = (0..n).filter(|&i| knn[i][0] == 0.0).collect();
    if !dup.is_empty() {
        let mut r = rng::stream(0, "dim-jitter", 0);
        let d = pts.dim();
        let mut coords = pts.coords().to_vec();
        for &i in &dup {
            for j in 0..d {
                coords[i * d + j] += 1e-12 * (2.0 * r.random::<f64>() - 1.0);
            }
        }
        jittered = dup.len();
        pts = Points::new(d, coords)?;
        knn = NeighborIndex::new(&pts, metric).knn(None, kmax);
    }
    let mut per_k = BTreeMap::new();
    for k in 2..=kmax {
        let terms: Vec<f64> = knn
            .iter()
            .map(|r| (0..k - 1).map(|j| (r[k - 1] / r[j]).ln()).sum::<f64>() / (k - 1) as f64)
            .collect();
        let mean = crate::linalg::pairwise_sum(&terms) / n as f64;
        if !(mean > 0.0 && mean.is_finite()) {
            return config("degenerate neighbor distances; points may be coincident");
        }
        per_k.insert(k, 1.0 / mean);
    }
    let vals: Vec<f64> = per_k.values().copied().collect();
    let d_hat = vals.iter().sum::<f64>() / vals.len() as f64;
    let range = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max) - vals.iter().copied().fold(f64::INFINITY, f64::min);
    let wide_spread = n < DIM_STABLE_POINTS || range > 0.25 * d_hat;
    Ok(DimEstimate { d_hat, per_k, n_points: n, jittered, wide_spread })
}

/// Half the mean squared error of predicting each test target by the
/// teacher value at its nearest training point.
pub fn nn_predictor_loss(fm: &FeatureMap, teacher: &TeacherWeights, train: &Dataset, test: &Dataset) -> Result<LossEstimate> {
    if train.is_empty() || test.is_empty() {
        return config("1-NN predictor needs nonempty train and test sets");
    }
    if teacher.len() != fm.n_features() {
        return config("teacher length does not match the feature count");
    }
    let metric = train.manifold.metric();
    let idx = NeighborIndex::new(&train.inputs, metric);
    let nearest = idx.nearest(&test.inputs);
    let y_train = fm.eval(&train.inputs)? * &teacher.omega;
    let y_test = fm.eval(&test.inputs)? * &teacher.omega;
    let sq: Vec<f64> = nearest.iter().enumerate().map(|(i, &j)| (y_test[i] - y_train[j]).powi(2)).collect();
    let value = 0.5 * crate::linalg::pairwise_sum(&sq) / sq.len() as f64;
    Ok(LossEstimate { value, n_teacher_seeds: 1, n_data_seeds: 1, spread: 0.0, pinv_cutoff: 0.0, rank_deficient: false })
}

/// Seed-averaged log 1-NN predictor loss over a size grid, with the slope
/// of `log L` against `log D` (`exponent = -slope`, expected `2/d`).
pub fn fit_nn_predictor_scaling(
    fm: &FeatureMap,
    d_grid: &[usize],
    seeds: usize,
    test_size: usize,
    base_seed: u64,
) -> Result<(Vec<f64>, ExponentFit)> {
    check_grid(d_grid)?;
    let spec = fm.natural_manifold();
    let s = fm.n_features();
    let tasks: Vec<(usize, usize)> = (0..d_grid.len()).flat_map(|i| (0..seeds).map(move |k| (i, k))).collect();
    let vals: Vec<f64> = tasks
        .par_iter()
        .map(|&(i, k)| {
            let teacher = crate::features::sample_teacher(s, rng::derive_seed(base_seed, "nn-teacher", k as u64))?;
            let test = sample_manifold(spec, test_size, rng::derive_seed(base_seed, "nn-test", k as u64))?;
            let train = sample_manifold(spec, d_grid[i], rng::derive_seed(base_seed, "nn-train", (i * seeds + k) as u64))?;
            Ok(nn_predictor_loss(fm, &teacher, &train, &test)?.value.ln())
        })
        .collect::<Result<_>>()?;
    let x: Vec<f64> = d_grid.iter().map(|&d| (d as f64).ln()).collect();
    let y: Vec<f64> = (0..d_grid.len()).map(|i| vals[i * seeds..(i + 1) * seeds].iter().sum::<f64>() / seeds as f64).collect();
    let f = fit_line(&x, &y, None)?;
    let fit = ExponentFit {
        exponent: -f.slope,
        slope: f.slope,
        intercept: f.intercept,
        stderr: f.slope_stderr,
        window: (d_grid[0], *d_grid.last().unwrap()),
        r2: f.r2,
        n_points: f.n,
        shrunk: false,
    };
    Ok((y, fit))
}
