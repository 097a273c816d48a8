//! Small dense linear-algebra helpers shared by the solvers and checks.
//!
//! Everything here works on `DMatrix<f64>` of phase-space size (2N), which is
//! small, so direct methods (Kronecker-product Lyapunov solves, full symmetric
//! eigendecompositions) are fine.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

/// Largest condition number accepted by [`guarded_inverse`].
pub const MAX_CONDITION: f64 = 1e12;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest absolute entry of `m - m^T`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let mut ev: Vec<f64> = symmetrize(m).symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Smallest eigenvalue of a symmetric matrix; `+inf` for an empty matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(f64::INFINITY)
}

/// Inverse of a symmetric (possibly indefinite) matrix through its
/// eigendecomposition, refusing anything with condition number above
/// [`MAX_CONDITION`].
pub fn guarded_inverse(m: &DMatrix<f64>, which: &str) -> Result<DMatrix<f64>> {
    let eig = symmetrize(m).symmetric_eigen();
    let abs: Vec<f64> = eig.eigenvalues.iter().map(|x| x.abs()).collect();
    let largest = abs.iter().copied().fold(0.0f64, f64::max);
    let smallest = abs.iter().copied().fold(f64::INFINITY, f64::min);
    let cond = if smallest > 0.0 { largest / smallest } else { f64::INFINITY };
    if !cond.is_finite() || cond > MAX_CONDITION {
        return Err(Error::Singular {
            which: which.to_string(),
            cond,
        });
    }
    let inv_diag = DMatrix::from_diagonal(&eig.eigenvalues.map(|x| 1.0 / x));
    let q = &eig.eigenvectors;
    Ok(symmetrize(&(q * inv_diag * q.transpose())))
}

/// Symmetric square root of a positive semidefinite matrix.
///
/// Eigenvalues down to `-tol` are clamped to zero; anything more negative is
/// rejected.
pub fn psd_sqrt(m: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    let eig = symmetrize(m).symmetric_eigen();
    if let Some(&worst) = eig.eigenvalues.iter().min_by(|a, b| a.total_cmp(b)) {
        if worst < -tol {
            return Err(Error::Domain(format!(
                "matrix is not positive semidefinite (min eigenvalue {worst:.3e})"
            )));
        }
    }
    let root = DMatrix::from_diagonal(&eig.eigenvalues.map(|x| x.max(0.0).sqrt()));
    let q = &eig.eigenvectors;
    Ok(q * root * q.transpose())
}

/// Solves `A X + X A^T + Q = 0` by vectorising into a Kronecker-sum system.
pub fn lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || q.shape() != (n, n) {
        return Err(Error::Dimension(format!(
            "Lyapunov: A is {:?}, Q is {:?}",
            a.shape(),
            q.shape()
        )));
    }
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let eye = DMatrix::<f64>::identity(n, n);
    // column-major vec: vec(AX) = (I ⊗ A) vec X, vec(X A^T) = (A ⊗ I) vec X
    let op = eye.kronecker(a) + a.kronecker(&eye);
    let rhs = DVector::from_iterator(n * n, q.iter().map(|x| -x));
    let sol = op.lu().solve(&rhs).ok_or_else(|| Error::Singular {
        which: "Lyapunov operator I⊗A + A⊗I".into(),
        cond: f64::INFINITY,
    })?;
    Ok(symmetrize(&DMatrix::from_column_slice(n, n, sol.as_slice())))
}

/// Eigenvalues of a general real square matrix.
pub fn eigenvalues(a: &DMatrix<f64>) -> Vec<Complex<f64>> {
    if a.nrows() == 0 {
        return Vec::new();
    }
    a.complex_eigenvalues().iter().copied().collect()
}

/// Threshold on `Re(λ)` below which a drift eigenvalue counts as damped.
pub fn damping_threshold(a: &DMatrix<f64>) -> f64 {
    1e-9 * max_abs(a).max(1.0)
}

/// Orthonormal basis (columns) of the orthogonal complement of the invariant
/// subspace of `a` belonging to eigenvalues with `Re(λ) >= -threshold`.
///
/// That complement is the stable invariant subspace of `A^T`, computed as the
/// kernel of `p(A^T)` where `p` is the real factor of the characteristic
/// polynomial built from the damped eigenvalues.
pub fn damped_complement(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let thr = damping_threshold(a);
    let eigs = eigenvalues(a);
    let damped: Vec<Complex<f64>> = eigs.iter().copied().filter(|l| l.re < -thr).collect();
    let k = damped.len();
    if k == n {
        return DMatrix::identity(n, n);
    }
    if k == 0 {
        return DMatrix::zeros(n, 0);
    }

    let at = a.transpose();
    let eye = DMatrix::<f64>::identity(n, n);
    let scale = max_abs(a).max(1.0);
    let mut poly = eye.clone();
    let imag_tol = 1e-9 * scale;
    for l in &damped {
        if l.im.abs() <= imag_tol {
            poly = poly * (&at - &eye * l.re) / scale;
        } else if l.im > 0.0 {
            // conjugate pair (λ, λ̄) → A² − 2Re(λ)A + |λ|²
            let f = &at * &at - &at * (2.0 * l.re) + &eye * l.norm_sqr();
            poly = poly * f / (scale * scale);
        }
    }

    let svd = poly.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));

    let mut basis = DMatrix::zeros(n, k);
    for (col, &idx) in order.iter().take(k).enumerate() {
        basis.set_column(col, &v_t.row(idx).transpose());
    }
    // re-orthonormalise
    let qr = basis.qr();
    qr.q().columns(0, k).into_owned()
}

/// Orthonormal basis of the orthogonal complement of span(`basis`) in R^n.
pub fn orthogonal_complement(basis: &DMatrix<f64>) -> DMatrix<f64> {
    let n = basis.nrows();
    let k = basis.ncols();
    if k == 0 {
        return DMatrix::identity(n, n);
    }
    if k == n {
        return DMatrix::zeros(n, 0);
    }
    let proj = DMatrix::<f64>::identity(n, n) - basis * basis.transpose();
    let eig = symmetrize(&proj).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let mut out = DMatrix::zeros(n, n - k);
    for (col, &idx) in order.iter().take(n - k).enumerate() {
        out.set_column(col, &eig.eigenvectors.column(idx));
    }
    out
}
