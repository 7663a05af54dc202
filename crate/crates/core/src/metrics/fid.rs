use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::numerics::linalg::{matrix_sqrt_psd, trace_sqrt_psd};
use crate::numerics::Tensor;
use crate::{Error, Result};

/// Mean and unbiased covariance of a feature sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianStats {
    pub mean: Vec<f64>,
    /// `F × F`, symmetric.
    pub cov: Tensor<f64>,
    pub count: usize,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Fits `N(μ, Σ)` to `features`, `n` rows of `dim` values. Requires more
/// samples than dimensions; the covariance divisor is `n − 1`.
pub fn fit_stats(features: &[f64], dim: usize) -> Result<GaussianStats> {
    if dim == 0 || features.len() % dim != 0 {
        return Err(Error::shape(dim, features.len()));
    }
    let n = features.len() / dim;
    if n <= dim {
        return Err(Error::InsufficientSamples { needed: dim + 1, got: n });
    }
    let mut mean = alloc::vec![0.0; dim];
    for row in features.chunks(dim) {
        mean.iter_mut().zip(row).for_each(|(m, &v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = alloc::vec![0.0; dim * dim];
    let mut centered = alloc::vec![0.0; dim];
    for row in features.chunks(dim) {
        centered.iter_mut().zip(row.iter().zip(&mean)).for_each(|(c, (&v, &m))| *c = v - m);
        for i in 0..dim {
            let ci = centered[i];
            for j in i..dim {
                cov[i * dim + j] += ci * centered[j];
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..dim {
        for j in i..dim {
            let v = cov[i * dim + j] / denom;
            cov[i * dim + j] = v;
            cov[j * dim + i] = v;
        }
    }
    Ok(GaussianStats { mean, cov: Tensor::new([dim, dim], cov)?, count: n })
}

/// `Tr((ΣaΣb)^{1/2})` through the symmetric form `√Σa Σb √Σa`.
fn trace_sqrt_product(a: &Tensor<f64>, b: &Tensor<f64>) -> Result<f64> {
    let root = matrix_sqrt_psd(a)?;
    let m = root.matmul(b)?.matmul(&root)?;
    let sym = m.zip_map(&m.transpose()?, |x, y| 0.5 * (x + y))?;
    trace_sqrt_psd(&sym)
}

/// Fréchet distance `‖μa − μb‖² + Tr(Σa + Σb − 2(ΣaΣb)^{1/2})`.
///
/// The cross term is averaged over both argument orders so the result is
/// exactly symmetric; values are floored at zero.
pub fn fid(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim() != b.dim() || a.cov.shape() != b.cov.shape() {
        return Err(Error::shape(a.dim(), b.dim()));
    }
    if a.mean == b.mean && a.cov == b.cov {
        return Ok(0.0);
    }
    let mean_term: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y) * (x - y)).sum();
    let cross = 0.5 * (trace_sqrt_product(&a.cov, &b.cov)? + trace_sqrt_product(&b.cov, &a.cov)?);
    let d = mean_term + (a.cov.trace()? + b.cov.trace()?) - 2.0 * cross;
    Ok(d.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;
    use alloc::vec;

    fn one_dim(mean: f64, var: f64) -> GaussianStats {
        GaussianStats { mean: vec![mean], cov: Tensor::new([1, 1], vec![var]).unwrap(), count: 10 }
    }

    #[test]
    fn two_point_and_constant() {
        let s = fit_stats(&[0.0, 2.0], 1).unwrap();
        assert_eq!(s.mean, [1.0]);
        assert_eq!(s.cov.data(), [2.0]);
        let c = fit_stats(&[3.0, -1.0, 3.0, -1.0, 3.0, -1.0], 2).unwrap();
        assert!(c.cov.data().iter().all(|&v| v == 0.0));
        assert!(matches!(fit_stats(&[0.0, 1.0, 2.0, 3.0], 2), Err(Error::InsufficientSamples { needed: 3, got: 2 })));
    }

    #[test]
    fn standard_normal_covariance() {
        let mut rng = SeededRng::new(4, 0);
        let mut x = vec![0.0; 10_000 * 8];
        rng.fill_normal(&mut x);
        let s = fit_stats(&x, 8).unwrap();
        let err = s.cov.sub(&Tensor::identity(8)).unwrap().frobenius_norm();
        assert!(err <= 0.1, "‖Σ − I‖ = {err}");
    }

    #[test]
    fn closed_forms() {
        assert_eq!(fid(&one_dim(0.0, 1.0), &one_dim(1.0, 1.0)).unwrap(), 1.0);
        assert!((fid(&one_dim(0.0, 1.0), &one_dim(0.0, 4.0)).unwrap() - 1.0).abs() < 1e-12);
        let s = one_dim(0.3, 2.5);
        assert_eq!(fid(&s, &s).unwrap(), 0.0);
        let wide = GaussianStats { mean: vec![0.0; 2], cov: Tensor::identity(2), count: 3 };
        assert!(fid(&s, &wide).is_err());
    }
}
