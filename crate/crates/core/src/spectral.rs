//! Symmetric-normalized Laplacian, a cyclic Jacobi eigensolver and Laplacian
//! positional encodings.

use ndarray::{Array1, Array2};

use crate::error::{Result, SeaError};
use crate::graph::Graph;

pub const JACOBI_TOL: f64 = 1e-12;
pub const JACOBI_MAX_SWEEPS: usize = 100;
/// Eigenvalues below this are treated as zero by `lpe_skip_trivial`.
pub const TRIVIAL_EIGENVALUE: f64 = 1e-8;

/// Eigenvalues in ascending order with orthonormal eigenvector columns.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub eigenvalues: Array1<f64>,
    pub eigenvectors: Array2<f64>,
}

impl Spectrum {
    pub fn reconstruct(&self) -> Array2<f64> {
        let u = &self.eigenvectors;
        let scaled = u * &self.eigenvalues.view().insert_axis(ndarray::Axis(0));
        scaled.dot(&u.t())
    }
}

/// `I - D^{-1/2} A D^{-1/2}`; isolated nodes keep a unit diagonal.
pub fn normalized_laplacian(graph: &Graph) -> Array2<f64> {
    let n = graph.num_nodes();
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|u| match graph.degree(u) {
            0 => 0.0,
            d => 1.0 / (d as f64).sqrt(),
        })
        .collect();
    let mut lap = Array2::eye(n);
    for u in 0..n {
        for &v in graph.neighbors(u) {
            lap[(u, v)] = -inv_sqrt[u] * inv_sqrt[v];
        }
    }
    lap
}

fn off_diagonal_norm(a: &Array2<f64>) -> f64 {
    let n = a.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[(i, j)] * a[(i, j)];
            }
        }
    }
    s.sqrt()
}

/// Cyclic Jacobi rotations until the off-diagonal Frobenius norm falls below
/// `tol * max(1, ||M||_F)`.
///
/// Eigenvectors are sign-normalized: the first entry of largest magnitude is
/// made positive.
pub fn eigendecompose_symmetric(matrix: &Array2<f64>, tol: f64) -> Result<Spectrum> {
    let n = matrix.nrows();
    if matrix.ncols() != n {
        return Err(SeaError::ShapeMismatch {
            op: "eigendecompose_symmetric",
            left: vec![n],
            right: vec![matrix.ncols()],
        });
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if (matrix[(i, j)] - matrix[(j, i)]).abs() > 1e-12 {
                return Err(SeaError::InvalidGraph(format!(
                    "matrix not symmetric at ({i}, {j})"
                )));
            }
        }
    }

    let mut a = matrix.clone();
    let mut v: Array2<f64> = Array2::eye(n);
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1.0);
    let threshold = tol * scale;

    let mut converged = off_diagonal_norm(&a) <= threshold;
    let mut sweeps = 0;
    while !converged && sweeps < JACOBI_MAX_SWEEPS {
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
        sweeps += 1;
        converged = off_diagonal_norm(&a) <= threshold;
    }
    if !converged {
        return Err(SeaError::NoConvergence {
            residual: off_diagonal_norm(&a),
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]).then(i.cmp(&j)));
    let eigenvalues = Array1::from_iter(order.iter().map(|&i| a[(i, i)]));
    let mut eigenvectors = Array2::zeros((n, n));
    for (col, &src) in order.iter().enumerate() {
        let mut vec = v.column(src).to_owned();
        normalize_sign(&mut vec);
        eigenvectors.column_mut(col).assign(&vec);
    }
    Ok(Spectrum {
        eigenvalues,
        eigenvectors,
    })
}

fn normalize_sign(vec: &mut Array1<f64>) {
    let max = vec.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    // Entries within rounding of the maximum count as tied; the first wins.
    if let Some(lead) = vec.iter().find(|x| x.abs() >= max - 1e-10) {
        if *lead < 0.0 {
            vec.mapv_inplace(|x| -x);
        }
    }
}

/// Per-node Laplacian positional encoding, `num_nodes x lpe_dim`.
///
/// Columns are the eigenvectors with the smallest eigenvalues, optionally
/// skipping (near-)zero ones; missing columns are zero.
pub fn lpe(graph: &Graph, lpe_dim: usize, skip_trivial: bool) -> Result<Array2<f64>> {
    assert!(lpe_dim >= 1, "lpe_dim must be at least 1");
    let n = graph.num_nodes();
    let mut table = Array2::zeros((n, lpe_dim));
    if n == 0 {
        return Ok(table);
    }
    let spectrum = eigendecompose_symmetric(&normalized_laplacian(graph), JACOBI_TOL)?;
    let cols = (0..n)
        .filter(|&c| !skip_trivial || spectrum.eigenvalues[c] >= TRIVIAL_EIGENVALUE)
        .take(lpe_dim);
    for (dst, src) in cols.enumerate() {
        table
            .column_mut(dst)
            .assign(&spectrum.eigenvectors.column(src));
    }
    Ok(table)
}
