//! Small dense linear algebra: Kronecker products, spectral radius,
//! spectral norm and a discrete Lyapunov solver.
//!
//! Sizes in this crate stay in the low hundreds, so everything is dense
//! `f64` on top of [`nalgebra::DMatrix`].

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use thiserror::Error;

pub type Matrix = DMatrix<f64>;

/// Numerical tolerances used across the crate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Iteration cap for the Schur/QR eigenvalue solver.
    pub schur_max_iter: usize,
    /// Relative convergence tolerance of the power iteration in [`spectral_norm`].
    pub spectral_norm_rel: f64,
    pub spectral_norm_max_iter: usize,
    /// Frobenius residual a Lyapunov solution must meet.
    pub lyapunov_residual: f64,
    /// Term-norm threshold ending the Lyapunov series.
    pub lyapunov_series_term: f64,
    /// Largest matrix dimension solved through the vectorized (Kronecker) system.
    pub lyapunov_vectorized_max_dim: usize,
    /// Negative-definiteness margin for the 2x2 Φ test.
    pub phi_margin: f64,
    /// Absolute slack allowed on ΔV along trajectories.
    pub delta_v: f64,
}

pub const TOLERANCES: Tolerances = Tolerances {
    schur_max_iter: 10_000,
    spectral_norm_rel: 1e-10,
    spectral_norm_max_iter: 200_000,
    lyapunov_residual: 1e-8,
    lyapunov_series_term: 1e-14,
    lyapunov_vectorized_max_dim: 16,
    phi_margin: 1e-12,
    delta_v: 1e-9,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("eigenvalue iteration did not converge within {0} iterations")]
    NoConvergence(usize),
    #[error("matrix is not Schur stable (spectral radius {0})")]
    NotSchur(f64),
    #[error("Lyapunov residual {residual:e} exceeds {limit:e}")]
    Residual { residual: f64, limit: f64 },
    #[error("matrix is not symmetric positive definite")]
    NotPositiveDefinite,
}

/// Builds a matrix from row-major data, rejecting non-finite entries.
pub fn matrix_from_rows(rows: usize, cols: usize, data: &[f64]) -> Result<Matrix, LinalgError> {
    if data.len() != rows * cols {
        return Err(LinalgError::Dimension(format!(
            "{} entries for a {rows}x{cols} matrix",
            data.len()
        )));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    Ok(Matrix::from_row_slice(rows, cols, data))
}

pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    a.kronecker(b)
}

fn ensure_square(m: &Matrix) -> Result<usize, LinalgError> {
    if m.nrows() != m.ncols() {
        return Err(LinalgError::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(m.nrows())
}

/// All eigenvalues of a square matrix.
///
/// The sparsity pattern is first split into strongly connected components.
/// Ordering those components topologically makes the matrix block
/// triangular, so its spectrum is the union of the diagonal blocks'
/// spectra. Singleton blocks are read off exactly; larger blocks go through
/// a real Schur decomposition. This keeps triangular and Kronecker-with-Jordan
/// structure (e.g. `D ⊗ [[1,1],[0,1]]`) exact instead of paying the
/// square-root sensitivity of defective eigenvalues.
pub fn eigenvalues(m: &Matrix) -> Result<Vec<Complex64>, LinalgError> {
    let n = ensure_square(m)?;
    if m.iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    let mut g = DiGraph::<(), ()>::with_capacity(n, n);
    let nodes: Vec<_> = (0..n).map(|_| g.add_node(())).collect();
    for i in 0..n {
        for j in 0..n {
            if i != j && m[(i, j)] != 0.0 {
                g.add_edge(nodes[j], nodes[i], ());
            }
        }
    }
    let mut eigs = Vec::with_capacity(n);
    for comp in tarjan_scc(&g) {
        let idx: Vec<usize> = comp.iter().map(|v| v.index()).collect();
        if idx.len() == 1 {
            eigs.push(Complex64::new(m[(idx[0], idx[0])], 0.0));
            continue;
        }
        let block = Matrix::from_fn(idx.len(), idx.len(), |r, c| m[(idx[r], idx[c])]);
        let schur = block
            .try_schur(f64::EPSILON, TOLERANCES.schur_max_iter)
            .ok_or(LinalgError::NoConvergence(TOLERANCES.schur_max_iter))?;
        eigs.extend(
            schur
                .complex_eigenvalues()
                .iter()
                .map(|z| Complex64::new(z.re, z.im)),
        );
    }
    Ok(eigs)
}

pub fn spectral_radius(m: &Matrix) -> Result<f64, LinalgError> {
    Ok(eigenvalues(m)?
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

/// Largest singular value, by power iteration on `mᵀm`.
pub fn spectral_norm(m: &Matrix) -> Result<f64, LinalgError> {
    let cols = m.ncols();
    if cols == 0 || m.nrows() == 0 {
        return Ok(0.0);
    }
    let gram = m.transpose() * m;
    // Deterministic start vector with no special symmetry.
    let mut v = DVector::from_fn(cols, |i, _| 1.0 + (i as f64 + 1.0).sqrt() * 1e-3);
    v /= v.norm();
    let mut estimate = 0.0;
    for _ in 0..TOLERANCES.spectral_norm_max_iter {
        let w = &gram * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return Ok(0.0);
        }
        let rayleigh = v.dot(&w);
        v = w / norm;
        if (rayleigh - estimate).abs() <= TOLERANCES.spectral_norm_rel * rayleigh.abs() {
            return Ok(rayleigh.max(0.0).sqrt());
        }
        estimate = rayleigh;
    }
    Err(LinalgError::NoConvergence(TOLERANCES.spectral_norm_max_iter))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_symmetric_eigenvalue(m: &Matrix) -> Result<f64, LinalgError> {
    ensure_square(m)?;
    Ok(m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min))
}

/// Solution of `mᵀ P m − P = −q` together with its achieved residual.
#[derive(Debug, Clone)]
pub struct LyapunovSolution {
    pub p: Matrix,
    /// `‖mᵀPm − P + q‖_F`
    pub residual: f64,
}

pub fn lyapunov_residual(m: &Matrix, p: &Matrix, q: &Matrix) -> Matrix {
    m.transpose() * p * m - p + q
}

/// Solves the discrete Lyapunov equation `mᵀ P m − P = −q`.
///
/// Requires `ρ(m) < 1` and a symmetric positive definite `q`. Small systems
/// are solved exactly through the vectorized form `(I − mᵀ⊗mᵀ) vec P = vec q`;
/// larger ones sum the series `Σ (mᵀ)^k q m^k` by repeated squaring. One
/// step of iterative refinement is applied in both cases.
pub fn solve_discrete_lyapunov(m: &Matrix, q: &Matrix) -> Result<LyapunovSolution, LinalgError> {
    let n = ensure_square(m)?;
    if q.shape() != (n, n) {
        return Err(LinalgError::Dimension(format!(
            "q is {}x{}, m is {n}x{n}",
            q.nrows(),
            q.ncols()
        )));
    }
    if (q - q.transpose()).amax() > 1e-12 * q.amax().max(1.0) || q.clone().cholesky().is_none() {
        return Err(LinalgError::NotPositiveDefinite);
    }
    let rho = spectral_radius(m)?;
    if rho >= 1.0 {
        return Err(LinalgError::NotSchur(rho));
    }

    let solve = |rhs: &Matrix| -> Result<Matrix, LinalgError> {
        if n <= TOLERANCES.lyapunov_vectorized_max_dim {
            vectorized_solve(m, rhs)
        } else {
            Ok(doubling_solve(m, rhs))
        }
    };

    let mut p = symmetrize(&solve(q)?);
    let correction = solve(&lyapunov_residual(m, &p, q))?;
    p = symmetrize(&(p + correction));

    let residual = lyapunov_residual(m, &p, q).norm();
    if !(residual < TOLERANCES.lyapunov_residual) {
        return Err(LinalgError::Residual {
            residual,
            limit: TOLERANCES.lyapunov_residual,
        });
    }
    if p.clone().cholesky().is_none() {
        return Err(LinalgError::NotPositiveDefinite);
    }
    Ok(LyapunovSolution { p, residual })
}

fn symmetrize(p: &Matrix) -> Matrix {
    (p + p.transpose()) * 0.5
}

fn vectorized_solve(m: &Matrix, q: &Matrix) -> Result<Matrix, LinalgError> {
    let n = m.nrows();
    let mt = m.transpose();
    // Column-major vec: vec(mᵀ P m) = (mᵀ ⊗ mᵀ) vec(P).
    let system = Matrix::identity(n * n, n * n) - kron(&mt, &mt);
    let rhs = DVector::from_column_slice(q.as_slice());
    let sol = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| LinalgError::Dimension("singular Kronecker system".into()))?;
    Ok(Matrix::from_column_slice(n, n, sol.as_slice()))
}

fn doubling_solve(m: &Matrix, q: &Matrix) -> Matrix {
    // After k rounds p holds the first 2^k series terms and power = m^(2^k).
    let mut p = q.clone();
    let mut power = m.clone();
    for _ in 0..64 {
        let term = power.transpose() * &p * &power;
        let small = term.norm() < TOLERANCES.lyapunov_series_term;
        p += term;
        if small {
            break;
        }
        power = &power * &power;
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, data: &[f64]) -> Matrix {
        matrix_from_rows(rows, cols, data).unwrap()
    }

    #[test]
    fn rejects_non_finite() {
        assert_eq!(
            matrix_from_rows(1, 2, &[1.0, f64::NAN]),
            Err(LinalgError::NonFinite)
        );
        assert!(matches!(
            matrix_from_rows(2, 2, &[1.0]),
            Err(LinalgError::Dimension(_))
        ));
    }

    #[test]
    fn kron_identity_is_block_diagonal() {
        let a = m(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let k = kron(&Matrix::identity(2, 2), &a);
        let expected = m(
            4,
            4,
            &[
                1.0, 1.0, 0.0, 0.0, //
                0.0, 1.0, 0.0, 0.0, //
                0.0, 0.0, 1.0, 1.0, //
                0.0, 0.0, 0.0, 1.0,
            ],
        );
        assert_eq!(k, expected);
    }

    #[test]
    fn kron_scalar_scales() {
        let a = m(2, 3, &[1.0, -2.0, 3.0, 0.5, 0.0, 7.0]);
        assert_eq!(kron(&m(1, 1, &[2.0]), &a), &a * 2.0);
        assert_eq!(kron(&m(3, 2, &[0.0; 6]), &a).shape(), (6, 6));
    }

    #[test]
    fn spectral_radius_examples() {
        let a = m(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert_eq!(spectral_radius(&a).unwrap(), 1.0);
        let amfc = m(2, 2, &[-0.5, 1.0, -0.5, 1.0]);
        assert!((spectral_radius(&amfc).unwrap() - 0.5).abs() < 1e-8);
        assert_eq!(spectral_radius(&Matrix::zeros(4, 4)).unwrap(), 0.0);
        assert!(matches!(
            spectral_radius(&Matrix::zeros(2, 3)),
            Err(LinalgError::NotSquare { rows: 2, cols: 3 })
        ));
    }

    #[test]
    fn spectral_radius_complex_pair() {
        // rotation scaled by 0.9
        let c = 0.9 * (0.3f64).cos();
        let s = 0.9 * (0.3f64).sin();
        let r = m(2, 2, &[c, -s, s, c]);
        assert!((spectral_radius(&r).unwrap() - 0.9).abs() < 1e-12);
    }

    #[test]
    fn spectral_norm_examples() {
        assert!((spectral_norm(&Matrix::identity(5, 5)).unwrap() - 1.0).abs() < 1e-10);
        let d = m(2, 2, &[3.0, 0.0, 0.0, -4.0]);
        assert!((spectral_norm(&d).unwrap() - 4.0).abs() < 1e-9);
        assert_eq!(spectral_norm(&Matrix::zeros(3, 3)).unwrap(), 0.0);
    }

    #[test]
    fn lyapunov_zero_map() {
        let sol = solve_discrete_lyapunov(&Matrix::zeros(3, 3), &Matrix::identity(3, 3)).unwrap();
        assert!((sol.p - Matrix::identity(3, 3)).amax() < 1e-14);
    }

    #[test]
    fn lyapunov_scalar_series() {
        let sol = solve_discrete_lyapunov(&m(1, 1, &[0.5]), &m(1, 1, &[1.0])).unwrap();
        assert!((sol.p[(0, 0)] - 4.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn lyapunov_rejects_unstable_and_indefinite() {
        let a = m(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert!(matches!(
            solve_discrete_lyapunov(&a, &Matrix::identity(2, 2)),
            Err(LinalgError::NotSchur(_))
        ));
        let q = m(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert_eq!(
            solve_discrete_lyapunov(&Matrix::zeros(2, 2), &q).unwrap_err(),
            LinalgError::NotPositiveDefinite
        );
    }

    #[test]
    fn lyapunov_large_path_matches_small_path() {
        // 20x20 goes through the doubling path; compare with the vectorized one.
        let n = 20;
        let base = Matrix::from_fn(n, n, |i, j| {
            if i == j {
                0.6
            } else if i == j + 1 {
                0.3
            } else {
                0.0
            }
        });
        let q = Matrix::identity(n, n) * 2.0;
        let big = solve_discrete_lyapunov(&base, &q).unwrap();
        let small = vectorized_solve(&base, &q).unwrap();
        assert!((big.p - small).amax() < 1e-9);
    }
}
