//! Adjacency matrices and their spectral machinery.
//!
//! Three adjacency sources feed the classifier: Pearson correlation between
//! channel signals, geodesic distance between electrodes on a unit sphere,
//! and an all-ones matrix gated by a trainable mask. All of them share the
//! same Laplacian / Chebyshev plumbing below.

mod laplacian;
mod layout;
mod spectral;

pub use laplacian::{laplacian_bundle, power_iteration_lambda_max, LambdaMaxMode, LaplacianBundle};
pub use layout::ElectrodeLayout;
pub use spectral::{
    chebyshev_apply, chebyshev_basis, spectral_basis, spectral_conv_oracle, symmetric_eigen,
    ChebBasis, SpectralBasis,
};

use ndarray::Array2;
use std::io::{BufRead, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("channel {0} has zero variance; correlation undefined")]
    ZeroVarianceChannel(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("coordinate for electrode {index} is off the sphere: |p| = {norm}, r = {radius}")]
    OffSphereCoordinate { index: usize, norm: f64, radius: f64 },
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("node {0} is isolated (zero degree)")]
    IsolatedNode(usize),
    #[error("Chebyshev order must be >= 1, got {0}")]
    InvalidOrder(usize),
    #[error("input matrix is not symmetric (max |L - L^T| = {0:e})")]
    AsymmetricInput(f64),
    #[error("adjacency i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("adjacency parse: {0}")]
    Parse(String),
}

/// A weighted graph over `n_nodes` EEG channels.
///
/// The diagonal is always zero (no self-loops); entries are finite and
/// non-negative for the PCC and geodesic constructions. Masked adjacencies
/// may be asymmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    pub n_nodes: usize,
    pub adjacency: Array2<f64>,
}

impl Graph {
    /// Wraps an adjacency matrix, zeroing the diagonal.
    pub fn from_adjacency(mut adjacency: Array2<f64>) -> Result<Self, GraphError> {
        let (r, c) = adjacency.dim();
        if r != c {
            return Err(GraphError::ShapeMismatch {
                expected: "square matrix".into(),
                got: format!("{r}x{c}"),
            });
        }
        for i in 0..r {
            adjacency[[i, i]] = 0.0;
        }
        Ok(Self { n_nodes: r, adjacency })
    }

    /// The all-ones off-diagonal adjacency over `n` nodes.
    pub fn fully_connected(n: usize) -> Self {
        let mut adjacency = Array2::<f64>::ones((n, n));
        for i in 0..n {
            adjacency[[i, i]] = 0.0;
        }
        Self { n_nodes: n, adjacency }
    }

    /// Count of nonzero entries.
    pub fn nnz(&self) -> usize {
        self.adjacency.iter().filter(|v| **v != 0.0).count()
    }
}

/// Pearson-correlation adjacency: `|P| - I`, one row of `signals` per channel.
///
/// `P[i][j] = cov(x_i, x_j) / (sigma_i * sigma_j)` over the columns of
/// `signals`. The result is symmetric, zero on the diagonal, with
/// off-diagonal entries in `[0, 1]`.
pub fn pcc_adjacency(signals: &Array2<f64>) -> Result<Graph, GraphError> {
    let (n, t) = signals.dim();
    if t < 2 {
        return Err(GraphError::DimensionMismatch(format!(
            "need at least 2 samples per channel, got {t}"
        )));
    }
    let means: Vec<f64> = (0..n).map(|i| signals.row(i).mean().unwrap()).collect();
    // Centered rows; sum-of-squares form so the covariance divisor cancels.
    let mut centered = signals.clone();
    for i in 0..n {
        centered.row_mut(i).mapv_inplace(|v| v - means[i]);
    }
    let mut ss = vec![0.0_f64; n];
    for i in 0..n {
        ss[i] = centered.row(i).iter().map(|v| v * v).sum();
        if ss[i] == 0.0 {
            return Err(GraphError::ZeroVarianceChannel(i));
        }
    }
    let mut adjacency = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let dot: f64 = centered
                .row(i)
                .iter()
                .zip(centered.row(j).iter())
                .map(|(a, b)| a * b)
                .sum();
            let rho = (dot / (ss[i] * ss[j]).sqrt()).clamp(-1.0, 1.0);
            adjacency[[i, j]] = rho.abs();
            adjacency[[j, i]] = rho.abs();
        }
    }
    Ok(Graph { n_nodes: n, adjacency })
}

/// Geodesic-distance adjacency between electrodes on a sphere.
///
/// `A[i][j] = arccos(p_i . p_j / r^2)`; with `normalize` set, off-diagonal
/// entries are min-max scaled into `[0, 1]`. The diagonal stays zero.
pub fn geodesic_adjacency(layout: &ElectrodeLayout, normalize: bool) -> Result<Graph, GraphError> {
    let n = layout.len();
    let r2 = layout.radius * layout.radius;
    for (i, p) in layout.coords.iter().enumerate() {
        let norm = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        if (norm - layout.radius).abs() > 1e-6 {
            return Err(GraphError::OffSphereCoordinate { index: i, norm, radius: layout.radius });
        }
    }
    let mut adjacency = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let p = &layout.coords[i];
            let q = &layout.coords[j];
            let dot = p[0] * q[0] + p[1] * q[1] + p[2] * q[2];
            // Clamp before arccos to absorb floating-point drift.
            adjacency[[i, j]] = (dot / r2).clamp(-1.0, 1.0).acos();
        }
    }
    if normalize {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    lo = lo.min(adjacency[[i, j]]);
                    hi = hi.max(adjacency[[i, j]]);
                }
            }
        }
        let span = hi - lo;
        if span > 0.0 {
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        adjacency[[i, j]] = (adjacency[[i, j]] - lo) / span;
                    }
                }
            }
        }
    }
    Ok(Graph { n_nodes: n, adjacency })
}

/// Entrywise product of a base adjacency with a mask.
///
/// The base is expected to have a zero diagonal, so the result does too. The
/// result may be asymmetric when the mask is.
pub fn masked_adjacency(original: &Graph, mask: &Array2<f64>) -> Result<Graph, GraphError> {
    if mask.dim() != original.adjacency.dim() {
        return Err(GraphError::ShapeMismatch {
            expected: format!("{:?}", original.adjacency.dim()),
            got: format!("{:?}", mask.dim()),
        });
    }
    let adjacency = &original.adjacency * mask;
    Ok(Graph { n_nodes: original.n_nodes, adjacency })
}

/// Writes an adjacency matrix as N header-less CSV rows of N floats.
pub fn write_adjacency_csv<W: Write>(matrix: &Array2<f64>, mut out: W) -> Result<(), GraphError> {
    for row in matrix.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}

/// Reads an adjacency matrix from header-less CSV rows.
pub fn read_adjacency_csv<R: BufRead>(reader: R) -> Result<Array2<f64>, GraphError> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Result<Vec<f64>, _> = line.split(',').map(|v| v.trim().parse::<f64>()).collect();
        let row = row.map_err(|e| GraphError::Parse(format!("line {}: {e}", lineno + 1)))?;
        rows.push(row);
    }
    let n = rows.len();
    if n == 0 {
        return Err(GraphError::Parse("empty adjacency file".into()));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != n {
            return Err(GraphError::Parse(format!(
                "row {} has {} columns, expected {n}",
                i + 1,
                row.len()
            )));
        }
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(Array2::from_shape_vec((n, n), flat).expect("shape checked above"))
}
