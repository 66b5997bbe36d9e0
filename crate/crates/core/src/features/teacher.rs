use nalgebra::DVector;
use rand_distr::{Distribution, Normal};

use crate::error::{config, Result};
use crate::rng;

/// Teacher weights `omega ~ N(0, 1/S)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherWeights {
    pub omega: DVector<f64>,
    pub seed: u64,
}

impl TeacherWeights {
    /// Wrap an explicit weight vector (seed recorded as 0).
    pub fn from_vec(omega: Vec<f64>) -> Self {
        Self { omega: DVector::from_vec(omega), seed: 0 }
    }

    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }
}

pub fn sample_teacher(s: usize, seed: u64) -> Result<TeacherWeights> {
    if s == 0 {
        return config("teacher needs S >= 1");
    }
    let dist = Normal::new(0.0, (1.0 / s as f64).sqrt()).expect("finite std");
    let mut r = rng::stream(seed, "teacher", 0);
    Ok(TeacherWeights { omega: DVector::from_iterator(s, (0..s).map(|_| dist.sample(&mut r))), seed })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_weight_is_standard_normal_draw() {
        let t = sample_teacher(1, 4).unwrap();
        assert_eq!(t.len(), 1);
        assert!(t.omega[0].is_finite());
    }

    #[test]
    fn norm_concentrates() {
        // sum omega^2 ~ chi^2_S / S with sd sqrt(2/S) = 0.014 at S = 1e4.
        let t = sample_teacher(10_000, 21).unwrap();
        let sq = t.omega.norm_squared();
        assert!((sq - 1.0).abs() < 0.05, "{sq}");
    }

    #[test]
    fn mean_norm_over_seeds() {
        let s = 64;
        let mean: f64 = (0..1000).map(|k| sample_teacher(s, k).unwrap().omega.norm_squared()).sum::<f64>() / 1000.0;
        assert!((mean - 1.0).abs() < 0.05, "{mean}");
    }

    #[test]
    fn reproducible() {
        assert_eq!(sample_teacher(50, 3).unwrap(), sample_teacher(50, 3).unwrap());
    }
}
