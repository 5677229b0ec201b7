//! Kernel functions and dense Gram matrices.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    Linear,
    Polynomial,
    Gaussian,
}

/// A kernel family together with its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum KernelSpec {
    /// `<x, y>`
    Linear,
    /// `(<x, y> + coef0)^degree`
    Polynomial { degree: u32, coef0: f64 },
    /// `exp(-gamma * |x - y|^2)`
    Gaussian { gamma: f64 },
}

impl KernelSpec {
    pub fn polynomial(degree: u32) -> Self {
        KernelSpec::Polynomial { degree, coef0: 1.0 }
    }

    pub fn gaussian(gamma: f64) -> Self {
        KernelSpec::Gaussian { gamma }
    }

    pub fn family(&self) -> KernelFamily {
        match self {
            KernelSpec::Linear => KernelFamily::Linear,
            KernelSpec::Polynomial { .. } => KernelFamily::Polynomial,
            KernelSpec::Gaussian { .. } => KernelFamily::Gaussian,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Linear => Ok(()),
            KernelSpec::Polynomial { degree, coef0 } => {
                if degree < 1 {
                    Err(Error::InvalidArgument("polynomial degree must be >= 1".into()))
                } else if !coef0.is_finite() {
                    Err(Error::NonFinite)
                } else {
                    Ok(())
                }
            }
            KernelSpec::Gaussian { gamma } => {
                if gamma > 0.0 && gamma.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidArgument(format!(
                        "gaussian bandwidth must be positive, got {gamma}"
                    )))
                }
            }
        }
    }

    /// Kernel value with dimension and finiteness checks.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                got: y.len(),
            });
        }
        if x.is_empty() {
            return Err(Error::InvalidArgument("empty feature vector".into()));
        }
        if x.iter().chain(y).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        self.validate()?;
        Ok(self.eval_unchecked(x, y))
    }

    /// Kernel value for inputs already known to be valid.
    #[inline]
    pub fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match *self {
            KernelSpec::Linear => dot(x, y),
            KernelSpec::Polynomial { degree, coef0 } => (dot(x, y) + coef0).powi(degree as i32),
            KernelSpec::Gaussian { gamma } => {
                (-gamma * sq_dist_via_norms(dot(x, x), dot(y, y), dot(x, y))).exp()
            }
        }
    }

    /// Same as `eval_unchecked` with precomputed squared norms (used on hot paths).
    #[inline]
    pub(crate) fn eval_with_norms(&self, x: &[f64], y: &[f64], xx: f64, yy: f64) -> f64 {
        match *self {
            KernelSpec::Gaussian { gamma } => (-gamma * sq_dist_via_norms(xx, yy, dot(x, y))).exp(),
            _ => self.eval_unchecked(x, y),
        }
    }
}

#[inline]
pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// `|x|^2 + |y|^2 - 2<x, y>`, clamped at zero against round-off.
#[inline]
fn sq_dist_via_norms(xx: f64, yy: f64, xy: f64) -> f64 {
    (xx + yy - 2.0 * xy).max(0.0)
}

/// Free function form of [`KernelSpec::eval`].
pub fn kernel_eval(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    spec.eval(x, y)
}

/// Dense symmetric kernel matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    n: usize,
    values: Vec<f64>,
}

impl GramMatrix {
    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// Principal submatrix on `indices` (in the given order).
    pub fn submatrix(&self, indices: &[usize]) -> GramMatrix {
        let m = indices.len();
        let mut values = Vec::with_capacity(m * m);
        for &i in indices {
            let row = self.row(i);
            values.extend(indices.iter().map(|&j| row[j]));
        }
        GramMatrix { n: m, values }
    }
}

/// Kernel matrix of a dataset. Only the upper triangle is evaluated and then
/// mirrored, so the result is exactly symmetric.
pub fn gram_matrix(spec: &KernelSpec, data: &Dataset) -> Result<GramMatrix> {
    spec.validate()?;
    let n = data.len();
    let norms: Vec<f64> = data.rows().map(|r| dot(r, r)).collect();
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = data.row(i);
            (i..n)
                .map(|j| spec.eval_with_norms(xi, data.row(j), norms[i], norms[j]))
                .collect()
        })
        .collect();
    let mut values = vec![0.0; n * n];
    for (i, row) in upper.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            let j = i + off;
            values[i * n + j] = v;
            values[j * n + i] = v;
        }
    }
    Ok(GramMatrix { n, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    #[test]
    fn scalar_examples() {
        let g1 = KernelSpec::gaussian(1.0);
        assert_eq!(g1.eval(&[0.3, -1.2], &[0.3, -1.2]).unwrap(), 1.0);
        assert_eq!(KernelSpec::Linear.eval(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 11.0);
        let v = KernelSpec::gaussian(0.5).eval(&[0.0, 0.0], &[2.0, 0.0]).unwrap();
        // exp(-0.5 * 4)
        assert!((v - (-2.0f64).exp()).abs() < 1e-15);
        assert!((v - 0.135_335).abs() < 1e-6);
        let poly = KernelSpec::Polynomial { degree: 2, coef0: 1.0 };
        assert_eq!(poly.eval(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 144.0);
    }

    #[test]
    fn eval_errors() {
        assert!(matches!(
            KernelSpec::Linear.eval(&[1.0], &[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            KernelSpec::Linear.eval(&[f64::NAN], &[1.0]),
            Err(Error::NonFinite)
        ));
        assert!(KernelSpec::gaussian(0.0).validate().is_err());
        assert!(KernelSpec::gaussian(-1.0).validate().is_err());
        assert!(KernelSpec::Polynomial { degree: 0, coef0: 1.0 }.validate().is_err());
    }

    #[test]
    fn two_point_linear_gram() {
        let d = Dataset::from_rows(&[vec![1.0, 2.0], vec![3.0, -1.0]], vec![1, -1]).unwrap();
        let g = gram_matrix(&KernelSpec::Linear, &d).unwrap();
        assert_eq!(g.row(0), &[5.0, 1.0]);
        assert_eq!(g.row(1), &[1.0, 10.0]);
    }

    fn dataset_strategy(max_n: usize) -> impl Strategy<Value = Dataset> {
        (2..=max_n, 1usize..5).prop_flat_map(|(n, p)| {
            prop::collection::vec(-3.0f64..3.0, n * p).prop_map(move |feats| {
                let labels = (0..n).map(|i| if i % 2 == 0 { 1 } else { -1 }).collect();
                Dataset::from_flat(feats, labels, p).unwrap()
            })
        })
    }

    fn kernel_strategy() -> impl Strategy<Value = KernelSpec> {
        prop_oneof![
            Just(KernelSpec::Linear),
            (1u32..4, 0.0f64..2.0).prop_map(|(degree, coef0)| KernelSpec::Polynomial { degree, coef0 }),
            (0.01f64..5.0).prop_map(KernelSpec::gaussian),
        ]
    }

    proptest! {
        #[test]
        fn gram_is_symmetric_with_unit_gaussian_diagonal(data in dataset_strategy(20), spec in kernel_strategy()) {
            let g = gram_matrix(&spec, &data).unwrap();
            for i in 0..data.len() {
                for j in 0..data.len() {
                    prop_assert_eq!(g.get(i, j).to_bits(), g.get(j, i).to_bits());
                    let direct = spec.eval(data.row(i), data.row(j)).unwrap();
                    prop_assert!((g.get(i, j) - direct).abs() <= 1e-12 * (1.0 + direct.abs()));
                }
                if let KernelSpec::Gaussian { .. } = spec {
                    prop_assert_eq!(g.get(i, i), 1.0);
                }
            }
        }

        #[test]
        fn gaussian_gram_is_psd(data in dataset_strategy(50), gamma in 0.01f64..5.0) {
            let g = gram_matrix(&KernelSpec::gaussian(gamma), &data).unwrap();
            let n = g.size();
            let m = DMatrix::from_fn(n, n, |i, j| g.get(i, j));
            let min_eig = m.symmetric_eigen().eigenvalues.min();
            prop_assert!(min_eig >= -1e-8 * n as f64, "min eigenvalue {}", min_eig);
        }

        #[test]
        fn coordinate_permutation_invariance(
            xy in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 1..6),
            spec in kernel_strategy(),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let (x, y): (Vec<f64>, Vec<f64>) = xy.into_iter().unzip();
            let mut perm: Vec<usize> = (0..x.len()).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let px: Vec<f64> = perm.iter().map(|&i| x[i]).collect();
            let py: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
            let a = spec.eval(&x, &y).unwrap();
            let b = spec.eval(&px, &py).unwrap();
            prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
        }
    }
}
