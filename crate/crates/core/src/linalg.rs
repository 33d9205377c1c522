//! Small complex linear-algebra helpers shared across modules.

use crate::real::{rf, Real};
use crate::{CMat, CVec, C};

/// `vec(A B C)` identity helper: Kronecker product of two matrices.
pub fn kron<T: Real>(a: &CMat<T>, b: &CMat<T>) -> CMat<T> {
    let (ra, ca) = a.shape();
    let (rb, cb) = b.shape();
    let mut out = CMat::<T>::zeros(ra * rb, ca * cb);
    for ja in 0..ca {
        for ia in 0..ra {
            let s = a[(ia, ja)];
            for jb in 0..cb {
                for ib in 0..rb {
                    out[(ia * rb + ib, ja * cb + jb)] = s * b[(ib, jb)];
                }
            }
        }
    }
    out
}

/// Column-major vectorization. nalgebra stores column-major, so this is a copy.
pub fn vec_of<T: Real>(m: &CMat<T>) -> CVec<T> {
    CVec::from_column_slice(m.as_slice())
}

/// Inverse of [`vec_of`]: reshape a length `rows*cols` vector column-major.
pub fn unvec<T: Real>(v: &CVec<T>, rows: usize, cols: usize) -> CMat<T> {
    assert_eq!(v.len(), rows * cols, "unvec length mismatch");
    CMat::from_column_slice(rows, cols, v.as_slice())
}

/// Hermitian inverse square root via eigendecomposition.
///
/// Eigenvalues are floored at `1e-12 * max_eig`; returns `None` when the
/// matrix is numerically singular (max eigenvalue not positive).
pub fn hermitian_inv_sqrt<T: Real>(m: &CMat<T>) -> Option<CMat<T>> {
    let n = m.nrows();
    // Symmetrize against rounding before decomposing.
    let h = (m + m.adjoint()) * C::new(rf::<T>(0.5), T::zero());
    let eig = h.symmetric_eigen();
    let max = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(T::zero(), |a, b| if b > a { b } else { a });
    if max <= T::zero() {
        return None;
    }
    let floor = rf::<T>(1e-12) * max;
    let mut scaled = eig.eigenvectors.clone();
    for j in 0..n {
        let lam = if eig.eigenvalues[j] < floor {
            floor
        } else {
            eig.eigenvalues[j]
        };
        let w = C::new(T::one() / lam.sqrt(), T::zero());
        for i in 0..n {
            scaled[(i, j)] *= w;
        }
    }
    Some(&scaled * eig.eigenvectors.adjoint())
}

/// Least-squares solve `min ||a x - b||` via SVD, with a rank report.
///
/// Singular values below `1e-12 * s_max` are treated as zero (minimum-norm
/// solution); `rank_deficient` flags that case.
pub struct Lstsq<T: Real> {
    pub solution: CVec<T>,
    pub rank_deficient: bool,
}

pub fn lstsq<T: Real>(a: &CMat<T>, b: &CVec<T>) -> Lstsq<T> {
    let svd = a.clone().svd(true, true);
    let s_max = svd
        .singular_values
        .iter()
        .cloned()
        .fold(T::zero(), |x, y| if y > x { y } else { x });
    let tol = rf::<T>(1e-12) * s_max;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let full_rank = rank == a.ncols().min(a.nrows());
    let u = svd.u.as_ref().expect("svd u");
    let vt = svd.v_t.as_ref().expect("svd v_t");
    let mut w = u.adjoint() * b;
    for i in 0..svd.singular_values.len() {
        let s = svd.singular_values[i];
        w[i] = if s > tol {
            w[i] / C::new(s, T::zero())
        } else {
            C::new(T::zero(), T::zero())
        };
    }
    Lstsq {
        solution: vt.adjoint() * w,
        rank_deficient: !full_rank,
    }
}

/// Moore–Penrose pseudo-inverse with the same `1e-12 * s_max` cutoff.
pub fn pinv<T: Real>(a: &CMat<T>) -> CMat<T> {
    let svd = a.clone().svd(true, true);
    let s_max = svd
        .singular_values
        .iter()
        .cloned()
        .fold(T::zero(), |x, y| if y > x { y } else { x });
    let eps = rf::<T>(1e-12) * s_max;
    svd.pseudo_inverse(eps).expect("pseudo inverse")
}

/// Squared Frobenius norm of a complex matrix.
pub fn fro2<T: Real>(m: &CMat<T>) -> T {
    m.iter().map(|z| z.norm_sqr()).fold(T::zero(), |a, b| a + b)
}

/// Squared L2 norm of a complex vector.
pub fn norm2<T: Real>(v: &CVec<T>) -> T {
    v.iter().map(|z| z.norm_sqr()).fold(T::zero(), |a, b| a + b)
}
