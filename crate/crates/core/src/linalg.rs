//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Singular values below this fraction of the largest are treated as zero.
pub const PINV_RTOL: f64 = 1e-12;

/// Relative slack allowed on the smallest eigenvalue when certifying PSD.
pub const PSD_RTOL: f64 = 1e-8;

/// Moore-Penrose pseudo-inverse, returning the inverse and numerical rank.
/// Symmetric input goes through the symmetric eigensolver, anything else
/// through the SVD.
pub fn pinv(a: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    pinv_scaled(a, 0.0)
}

/// Pseudo-inverse whose cutoff is relative to `max(σ_max, scale)`.
///
/// A normal matrix 𝕩′W𝕩 that is zero in exact arithmetic comes out as
/// rounding noise; measured against its own largest singular value that noise
/// looks full rank. Passing the magnitude of the inputs as `scale` lets such
/// matrices collapse to zero as they should.
pub fn pinv_scaled(a: &DMatrix<f64>, scale: f64) -> (DMatrix<f64>, usize) {
    let (r, c) = a.shape();
    if r == 0 || c == 0 {
        return (DMatrix::zeros(c, r), 0);
    }
    if r == c && is_symmetric(a) {
        return pinv_symmetric(a, scale);
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let recon = u * DMatrix::from_diagonal(&svd.singular_values) * vt;
    if (recon - a).norm() > 1e-10 * a.norm().max(f64::MIN_POSITIVE) {
        // nalgebra's SVD occasionally returns a wrong factorization for
        // rank-deficient input; A⁺ = (A′A)⁺A′ avoids it.
        let (g, rank) = pinv_symmetric(&symmetrize(&a.tr_mul(a)), scale * scale);
        return (g * a.transpose(), rank);
    }
    let smax = svd.singular_values.max();
    let cutoff = PINV_RTOL * smax.max(scale);
    let mut out = DMatrix::zeros(c, r);
    let mut rank = 0;
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            rank += 1;
            // out += v_k u_k' / s
            let vk = vt.row(k).transpose();
            let uk = u.column(k);
            out.ger(1.0 / s, &vk, &uk, 1.0);
        }
    }
    (out, rank)
}

fn is_symmetric(a: &DMatrix<f64>) -> bool {
    let tol = 1e-14 * a.amax();
    (0..a.nrows()).all(|i| (0..i).all(|j| (a[(i, j)] - a[(j, i)]).abs() <= tol))
}

/// For symmetric input the singular values are |λ|, so the same cutoff rule
/// applies to the eigenvalues.
fn pinv_symmetric(a: &DMatrix<f64>, scale: f64) -> (DMatrix<f64>, usize) {
    let eig = SymmetricEigen::new(symmetrize(a));
    let smax = eig.eigenvalues.amax();
    let cutoff = PINV_RTOL * smax.max(scale);
    let n = a.nrows();
    let mut out = DMatrix::zeros(n, n);
    let mut rank = 0;
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        if l.abs() > cutoff && l != 0.0 {
            rank += 1;
            let v = eig.eigenvectors.column(k);
            out.ger(1.0 / l, &v, &v, 1.0);
        }
    }
    (out, rank)
}

/// Eigenvalues (ascending) and eigenvectors of the symmetric part of `a`.
pub fn sym_eigen(a: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let s = symmetrize(a);
    let eig = SymmetricEigen::new(s);
    let mut idx: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = DVector::from_iterator(idx.len(), idx.iter().map(|&i| eig.eigenvalues[i]));
    let vecs = DMatrix::from_fn(a.nrows(), idx.len(), |r, c| eig.eigenvectors[(r, idx[c])]);
    (vals, vecs)
}

/// Eigenvalues only, ascending.
pub fn sym_eigenvalues(a: &DMatrix<f64>) -> DVector<f64> {
    let mut v: Vec<f64> = symmetrize(a).symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(f64::total_cmp);
    DVector::from_vec(v)
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Spectral norm of a symmetric matrix (largest absolute eigenvalue).
pub fn sym_spectral_norm(eigs: &DVector<f64>) -> f64 {
    eigs.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Smallest eigenvalue and whether it clears `-rtol * scale`.
pub fn psd_check(a: &DMatrix<f64>, scale: f64, rtol: f64) -> (bool, f64) {
    if a.nrows() == 0 {
        return (true, 0.0);
    }
    let eigs = sym_eigenvalues(a);
    let min = eigs[0];
    (min >= -rtol * scale.max(f64::MIN_POSITIVE), min)
}

/// True when every row of the symmetric matrix is weakly diagonally dominant
/// with a nonnegative diagonal, which is a sufficient condition for PSD.
pub fn diagonally_dominant(a: &DMatrix<f64>, abs_tol: f64) -> bool {
    let n = a.nrows();
    (0..n).all(|i| {
        let diag = a[(i, i)];
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| a[(i, j)].abs()).sum();
        diag >= -abs_tol && diag + abs_tol >= off
    })
}

/// Pairwise (cascade) summation: less drift than a running sum and the result
/// only depends on the order of `xs`, never on how work was scheduled.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if xs.len() <= BLOCK {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn pairwise_mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        pairwise_sum(xs) / xs.len() as f64
    }
}

/// Quadratic form u' A u.
pub fn quad(a: &DMatrix<f64>, u: &DVector<f64>) -> f64 {
    u.dot(&(a * u))
}
