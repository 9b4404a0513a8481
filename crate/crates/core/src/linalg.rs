//! Small dense complex linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, Complex, Dyn};

use crate::error::{Error, Result};
use crate::scalar::{cplx, CMat, CVec, Real};

/// `(M + M^H) / 2`.
pub fn hermitize<T: Real>(m: &CMat<T>) -> CMat<T> {
    (m + m.adjoint()).scale(T::lit(0.5))
}

/// Largest entrywise modulus of `M - M^H`.
pub fn hermitian_deviation<T: Real>(m: &CMat<T>) -> T {
    let d = m - m.adjoint();
    d.iter().map(|z| z.norm_sqr().sqrt()).fold(T::zero(), |a, b| a.max(b))
}

pub fn trace_re<T: Real>(m: &CMat<T>) -> T {
    m.diagonal().iter().map(|z| z.re).fold(T::zero(), |a, b| a + b)
}

/// `Re(v^H M v)`.
pub fn quad_form<T: Real>(m: &CMat<T>, v: &CVec<T>) -> T {
    (v.adjoint() * m * v)[(0, 0)].re
}

/// `v v^H`.
pub fn outer<T: Real>(v: &CVec<T>) -> CMat<T> {
    v * v.adjoint()
}

pub fn frobenius<T: Real>(m: &CMat<T>) -> T {
    m.iter().map(|z| z.norm_sqr()).fold(T::zero(), |a, b| a + b).sqrt()
}

/// Real part of `Tr(A B)` without forming the product.
pub fn trace_product_re<T: Real>(a: &CMat<T>, b: &CMat<T>) -> T {
    let n = a.nrows();
    let mut acc = T::zero();
    for i in 0..n {
        for k in 0..a.ncols() {
            acc += (a[(i, k)] * b[(k, i)]).re;
        }
    }
    acc
}

/// Eigen-decomposition of a Hermitian matrix with eigenvalues sorted in
/// descending order. Columns of the returned matrix are the eigenvectors.
pub fn eigh_desc<T: Real>(m: &CMat<T>) -> (Vec<T>, CMat<T>) {
    let eig = hermitize(m).symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vectors = CMat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

pub fn min_eigenvalue<T: Real>(m: &CMat<T>) -> T {
    let eig = hermitize(m).symmetric_eigen();
    eig.eigenvalues
        .iter()
        .copied()
        .fold(T::max_value().unwrap_or_else(T::one), |a, b| a.min(b))
}

/// `U diag(d) U^H`.
pub fn from_eigen<T: Real>(values: &[T], vectors: &CMat<T>) -> CMat<T> {
    let mut scaled = vectors.clone();
    for (k, &d) in values.iter().enumerate() {
        scaled.column_mut(k).scale_mut(d);
    }
    hermitize(&(scaled * vectors.adjoint()))
}

pub fn cholesky<T: Real>(m: &CMat<T>, what: &'static str) -> Result<Cholesky<Complex<T>, Dyn>> {
    hermitize(m).cholesky().ok_or(Error::NotPositiveDefinite(what))
}

/// `ln det M` for Hermitian positive definite `M`.
pub fn logdet_pd<T: Real>(m: &CMat<T>) -> Result<T> {
    let chol = cholesky(m, "log-determinant argument")?;
    Ok(logdet_from_cholesky(&chol))
}

pub fn logdet_from_cholesky<T: Real>(chol: &Cholesky<Complex<T>, Dyn>) -> T {
    let l = chol.l_dirty();
    (0..l.nrows())
        .map(|k| l[(k, k)].re.ln())
        .fold(T::zero(), |a, b| a + b)
        * T::lit(2.0)
}

pub fn inverse_pd<T: Real>(m: &CMat<T>) -> Result<CMat<T>> {
    Ok(hermitize(&cholesky(m, "matrix to invert")?.inverse()))
}

/// Euclidean projection of `d` onto `{x >= 0, sum(x) <= cap}`.
///
/// Sort-based: clip at zero, and if the clipped sum exceeds `cap`, shift by
/// the threshold `tau` solving `sum(max(d - tau, 0)) = cap`.
pub fn project_capped_simplex<T: Real>(d: &[T], cap: T) -> Vec<T> {
    let clipped_sum = d.iter().map(|&x| x.max(T::zero())).fold(T::zero(), |a, b| a + b);
    if clipped_sum <= cap {
        return d.iter().map(|&x| x.max(T::zero())).collect();
    }
    let mut sorted: Vec<T> = d.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let mut prefix = T::zero();
    let mut tau = T::zero();
    for (k, &v) in sorted.iter().enumerate() {
        prefix += v;
        let candidate = (prefix - cap) / T::lit((k + 1) as f64);
        if k + 1 == sorted.len() || sorted[k + 1] <= candidate {
            tau = candidate;
            break;
        }
    }
    d.iter().map(|&x| (x - tau).max(T::zero())).collect()
}

/// Frobenius-nearest Hermitian PSD matrix with trace at most `cap`.
pub fn project_trace_capped_psd<T: Real>(x: &CMat<T>, cap: T) -> CMat<T> {
    let (values, vectors) = eigh_desc(x);
    let projected = project_capped_simplex(&values, cap);
    from_eigen(&projected, &vectors)
}

pub fn identity<T: Real>(n: usize) -> CMat<T> {
    CMat::identity(n, n)
}

pub fn scaled_identity<T: Real>(n: usize, s: T) -> CMat<T> {
    CMat::from_diagonal_element(n, n, cplx(s))
}

/// Diagonal matrix from real entries.
pub fn real_diag<T: Real>(d: &[T]) -> CMat<T> {
    let mut m = CMat::zeros(d.len(), d.len());
    for (k, &v) in d.iter().enumerate() {
        m[(k, k)] = cplx(v);
    }
    m
}
