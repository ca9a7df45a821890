//! Exact spectral filtering and the Chebyshev recurrence.
//!
//! The eigendecomposition route is the slow, explicit form used as a test
//! oracle; training always goes through the recurrence.

use super::{GraphError, LaplacianBundle};
use ndarray::{Array1, Array2};

/// Eigendecomposition of a normalized Laplacian.
#[derive(Debug, Clone)]
pub struct SpectralBasis {
    /// Columns are eigenvectors (graph Fourier modes).
    pub eigenvectors: Array2<f64>,
    /// Ascending eigenvalues.
    pub eigenvalues: Array1<f64>,
    /// Eigenvalues rescaled by `2/lambda_max - 1` so they land in `[-1, 1]`.
    pub scaled_eigenvalues: Array1<f64>,
}

/// Chebyshev polynomial terms `T_0(L~) .. T_{K-1}(L~)`.
#[derive(Debug, Clone)]
pub struct ChebBasis {
    pub order: usize,
    pub terms: Vec<Array2<f64>>,
}

/// Jacobi eigensolver for symmetric matrices.
///
/// Returns `(eigenvalues, eigenvectors)` with eigenvalues ascending and
/// eigenvectors as matching columns. Sizes here are at most the channel
/// count (64), where cyclic Jacobi is plenty fast and very accurate.
pub fn symmetric_eigen(matrix: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = matrix.nrows();
    assert_eq!(n, matrix.ncols(), "matrix must be square");
    let mut a = matrix.clone();
    let mut v = Array2::<f64>::eye(n);
    let max_sweeps = 100;
    for _ in 0..max_sweeps {
        let mut off = 0.0_f64;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[[i, j]] * a[[i, j]];
            }
        }
        if off.sqrt() < 1e-14 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[[p, q]].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * a[[p, q]]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[[i, i]].partial_cmp(&a[[j, j]]).unwrap());
    let eigenvalues = Array1::from_iter(order.iter().map(|&i| a[[i, i]]));
    let mut eigenvectors = Array2::<f64>::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            eigenvectors[[k, dst]] = v[[k, src]];
        }
    }
    (eigenvalues, eigenvectors)
}

fn max_asymmetry(m: &Array2<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[[i, j]] - m[[j, i]]).abs());
        }
    }
    worst
}

/// Eigendecomposes the bundle's normalized Laplacian.
///
/// Only defined for symmetric Laplacians; the scaled eigenvalues use the
/// bundle's `lambda_max` so the exact and recurrence filter forms agree.
pub fn spectral_basis(bundle: &LaplacianBundle) -> Result<SpectralBasis, GraphError> {
    let asym = max_asymmetry(&bundle.laplacian_norm);
    if asym > 1e-9 {
        return Err(GraphError::AsymmetricInput(asym));
    }
    let (eigenvalues, eigenvectors) = symmetric_eigen(&bundle.laplacian_norm);
    let scaled_eigenvalues = eigenvalues.mapv(|l| 2.0 * l / bundle.lambda_max - 1.0);
    Ok(SpectralBasis { eigenvectors, eigenvalues, scaled_eigenvalues })
}

/// Builds `T_0 = I`, `T_1 = L~`, `T_k = 2 L~ T_{k-1} - T_{k-2}`.
pub fn chebyshev_basis(bundle: &LaplacianBundle, order: usize) -> Result<ChebBasis, GraphError> {
    if order < 1 {
        return Err(GraphError::InvalidOrder(order));
    }
    let n = bundle.laplacian_scaled.nrows();
    let mut terms = Vec::with_capacity(order);
    terms.push(Array2::<f64>::eye(n));
    if order >= 2 {
        terms.push(bundle.laplacian_scaled.clone());
    }
    for k in 2..order {
        let next =
            2.0 * bundle.laplacian_scaled.dot(&terms[k - 1]) - &terms[k - 2];
        terms.push(next);
    }
    Ok(ChebBasis { order, terms })
}

/// Filter application through the recurrence: `sum_k theta_k T_k(L~) x`.
pub fn chebyshev_apply(basis: &ChebBasis, theta: &[f64], x: &Array1<f64>) -> Array1<f64> {
    assert_eq!(theta.len(), basis.order, "one coefficient per term");
    let mut out = Array1::<f64>::zeros(x.len());
    for (t, coeff) in basis.terms.iter().zip(theta) {
        out = out + *coeff * t.dot(x);
    }
    out
}

/// Filter application through the explicit eigendecomposition:
/// `U (sum_k theta_k T_k(Lambda^)) U^T x`.
///
/// The scalar Chebyshev recurrence runs on each scaled eigenvalue; this is
/// the independent route the recurrence form is checked against.
pub fn spectral_conv_oracle(
    bundle: &LaplacianBundle,
    theta: &[f64],
    x: &Array1<f64>,
) -> Result<Array1<f64>, GraphError> {
    let basis = spectral_basis(bundle)?;
    let n = x.len();
    let filter: Vec<f64> = basis
        .scaled_eigenvalues
        .iter()
        .map(|&lam| {
            let mut t_prev = 1.0;
            let mut t_cur = lam;
            let mut acc = theta[0] * t_prev;
            if theta.len() >= 2 {
                acc += theta[1] * t_cur;
            }
            for coeff in theta.iter().skip(2) {
                let t_next = 2.0 * lam * t_cur - t_prev;
                acc += coeff * t_next;
                t_prev = t_cur;
                t_cur = t_next;
            }
            acc
        })
        .collect();
    let xhat = basis.eigenvectors.t().dot(x);
    let mut filtered = Array1::<f64>::zeros(n);
    for i in 0..n {
        filtered[i] = filter[i] * xhat[i];
    }
    Ok(basis.eigenvectors.dot(&filtered))
}
