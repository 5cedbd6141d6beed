//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, DVector};

/// Largest real part over the (complex) eigenvalue spectrum.
pub fn max_real_part(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Eigenvalues of the symmetric part of `m`, ascending.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let sym = symmetrized(m);
    let mut ev: Vec<f64> = sym.symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ev
}

pub fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetric_eigenvalues(m)[0]
}

pub fn symmetrized(m: &DMatrix<f64>) -> DMatrix<f64> {
     (m + m.transpose()) * 0.5
}

pub fn symmetrize_in_place(m: &mut DMatrix<f64>) {
    let s = symmetrized(m);
    m.copy_from(&s);
}

/// Relative departure from symmetry, `max|M - M^T| / (1 + max|M|)`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let diff = (m - m.transpose()).abs().max();
    diff / (1.0 + m.abs().max())
}

/// 2-norm condition number via SVD.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.iter().copied().fold(0.0_f64, f64::max);
    let smin = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if smin <= 0.0 {
        f64::INFINITY
    } else {
        smax / smin
    }
}

/// Factor `F` with `F F^T = clip(M)` where `clip` zeroes negative
/// eigenvalues of the symmetric part. Returns the factor and the most
/// negative eigenvalue encountered (0 when `M` was already PSD).
pub fn psd_factor_clipped(m: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let sym = symmetrized(m);
    if let Some(chol) = sym.clone().cholesky() {
        return (chol.l(), 0.0);
    }
    let eig = sym.symmetric_eigen();
    let mut worst = 0.0_f64;
    let dim = eig.eigenvalues.len();
    let mut fac = DMatrix::<f64>::zeros(dim, dim);
    for j in 0..dim {
        let lam = eig.eigenvalues[j];
        worst = worst.min(lam);
        let s = lam.max(0.0).sqrt();
        for i in 0..dim {
            fac[(i, j)] = eig.eigenvectors[(i, j)] * s;
        }
    }
    (fac, worst)
}

/// Solve `M x = b` for symmetric positive definite `M` (pseudo-inverse
/// fallback through eigendecomposition when near-singular).
pub fn solve_spd(m: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    if let Some(chol) = symmetrized(m).cholesky() {
        return chol.solve(b);
    }
    let eig = symmetrized(m).symmetric_eigen();
    let tol = 1e-14 * eig.eigenvalues.amax().max(1.0);
    let mut coeffs = eig.eigenvectors.transpose() * b;
    for (i, c) in coeffs.iter_mut().enumerate() {
        let lam = eig.eigenvalues[i];
        *c = if lam.abs() > tol { *c / lam } else { 0.0 };
    }
    &eig.eigenvectors * coeffs
}

/// Max absolute entry.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.abs().max()
}
