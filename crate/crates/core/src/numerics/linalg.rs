//! Symmetric eigendecomposition (cyclic Jacobi) and PSD square roots.

use alloc::vec::Vec;


use super::Tensor;
use crate::{Error, Result};
use num_traits::Float;

const SYMMETRY_TOL: f64 = 1e-8;
const EIGEN_ZERO_TOL: f64 = 1e-10;

fn check_symmetric(m: &Tensor<f64>) -> Result<usize> {
    let (r, c) = m.dims2()?;
    if r != c || r == 0 {
        return Err(Error::contract(alloc::format!("expected a non-empty square matrix, got {r}x{c}")));
    }
    let scale = m.data().iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    for i in 0..r {
        for j in (i + 1)..r {
            let gap = (m.at(i, j) - m.at(j, i)).abs();
            if gap > SYMMETRY_TOL * scale {
                return Err(Error::contract(alloc::format!(
                    "matrix not symmetric at ({i}, {j}): |difference| = {gap:e}"
                )));
            }
        }
    }
    Ok(r)
}

/// Eigenvalues (ascending) and eigenvectors (columns of the returned
/// matrix) of a symmetric matrix.
pub fn symmetric_eigen(m: &Tensor<f64>) -> Result<(Vec<f64>, Tensor<f64>)> {
    let n = check_symmetric(m)?;
    let mut a: Vec<f64> = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            a.push(0.5 * (m.at(i, j) + m.at(j, i)));
        }
    }
    let mut v = Tensor::<f64>::identity(n).into_data();

    let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off <= f64::EPSILON * norm.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[i * n + i].total_cmp(&a[j * n + j]));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let vectors = Tensor::from_fn([n, n], |idx| v[(idx / n) * n + order[idx % n]]);
    Ok((values, vectors))
}

/// Reconstructs `V diag(f(λ)) Vᵀ`.
fn spectral_map(values: &[f64], vectors: &Tensor<f64>, f: impl Fn(f64) -> f64) -> Tensor<f64> {
    let n = values.len();
    let mapped: Vec<f64> = values.iter().map(|&l| f(l)).collect();
    let mut out = Tensor::zeros([n, n]);
    for i in 0..n {
        for j in i..n {
            let s: f64 = (0..n).map(|k| vectors.at(i, k) * mapped[k] * vectors.at(j, k)).sum();
            out.set(i, j, s);
            out.set(j, i, s);
        }
    }
    out
}

/// Principal square root of a symmetric positive semi-definite matrix.
///
/// Negative eigenvalues (rounding residue of sample covariances) are
/// clamped to zero before rooting.
pub fn matrix_sqrt_psd(m: &Tensor<f64>) -> Result<Tensor<f64>> {
    let (values, vectors) = symmetric_eigen(m)?;
    Ok(spectral_map(&values, &vectors, |l| if l <= EIGEN_ZERO_TOL { 0.0 } else { l.sqrt() }))
}

/// Sum of square roots of the clamped eigenvalues, i.e. `Tr(M^{1/2})`.
pub fn trace_sqrt_psd(m: &Tensor<f64>) -> Result<f64> {
    let (values, _) = symmetric_eigen(m)?;
    Ok(values.iter().map(|&l| if l <= EIGEN_ZERO_TOL { 0.0 } else { l.sqrt() }).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;
    use alloc::vec;

    fn rel_err(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
        a.sub(b).unwrap().frobenius_norm() / b.frobenius_norm()
    }

    #[test]
    fn identity_root_is_identity() {
        let s = matrix_sqrt_psd(&Tensor::identity(3)).unwrap();
        assert!(rel_err(&s, &Tensor::identity(3)) < 1e-14);
    }

    #[test]
    fn diagonal_roots() {
        let s = matrix_sqrt_psd(&Tensor::diag(&[4.0, 9.0])).unwrap();
        assert!(rel_err(&s, &Tensor::diag(&[2.0, 3.0])) < 1e-14);
    }

    #[test]
    fn random_psd_squares_back() {
        let mut rng = SeededRng::new(11, 0);
        let a = Tensor::from_fn([6, 6], |_| rng.normal());
        let m = a.matmul(&a.transpose().unwrap()).unwrap();
        let s = matrix_sqrt_psd(&m).unwrap();
        let back = s.matmul(&s).unwrap();
        assert!(rel_err(&back, &m) <= 1e-6, "relative error {}", rel_err(&back, &m));
        // symmetric output
        assert!(rel_err(&s.transpose().unwrap(), &s) < 1e-12);
    }

    #[test]
    fn rank_one_projector_is_fixed_point() {
        let u = [0.6, 0.0, 0.8];
        let p = Tensor::from_fn([3, 3], |i| u[i / 3] * u[i % 3]);
        let s = matrix_sqrt_psd(&p).unwrap();
        assert!(rel_err(&s, &p) < 1e-10);
    }

    #[test]
    fn rejects_non_square_and_asymmetric() {
        let r = Tensor::<f64>::zeros([2, 3]);
        assert!(matches!(matrix_sqrt_psd(&r), Err(Error::Contract(_))));
        let asym = Tensor::new([2, 2], vec![1.0, 0.5, 0.0, 1.0]).unwrap();
        assert!(matches!(matrix_sqrt_psd(&asym), Err(Error::Contract(_))));
    }

    #[test]
    fn slightly_negative_eigenvalues_are_clamped() {
        let m = Tensor::diag(&[1.0, -1e-13]);
        let s = matrix_sqrt_psd(&m).unwrap();
        assert_eq!(s.at(1, 1), 0.0);
        assert_eq!(s.at(0, 0), 1.0);
    }
}
