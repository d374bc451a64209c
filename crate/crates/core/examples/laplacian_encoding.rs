//! Normalized Laplacian spectrum and positional encodings.
//!
//! cargo run --example laplacian_encoding

use sea_core::graph::Graph;
use sea_core::spectral::{eigendecompose_symmetric, lpe, normalized_laplacian, JACOBI_TOL};

fn main() -> sea_core::Result<()> {
    // a 4-path, a separate edge, and an isolated node
    let g = Graph::from_edges(7, &[(0, 1), (1, 2), (2, 3), (4, 5)])?;
    let lap = normalized_laplacian(&g);
    let s = eigendecompose_symmetric(&lap, JACOBI_TOL)?;
    let err = (&s.reconstruct() - &lap).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    println!("eigenvalues: {:.4}", s.eigenvalues);
    println!("reconstruction error {err:.1e}");
    let zeros = s.eigenvalues.iter().filter(|l| l.abs() < 1e-8).count();
    let (components, _) = g.components();
    println!("{zeros} zero eigenvalues, {components} components (the isolated node contributes eigenvalue 1)");

    println!("encoding, smallest 3 eigenvectors:\n{:.3}", lpe(&g, 3, false)?);
    println!("encoding, skipping zero modes:\n{:.3}", lpe(&g, 3, true)?);
    Ok(())
}
