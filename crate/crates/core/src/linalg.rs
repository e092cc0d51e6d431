//! Small dense linear-algebra helpers on top of nalgebra.
//!
//! Everything here operates on the low dimensions typical of the analyzed
//! systems (n <= 10 or so); no attempt is made at large-scale performance.

use nalgebra::{Complex, DMatrix, DVector};

/// Eigenvalues of a real square matrix, unordered.
pub fn eigenvalues(a: &DMatrix<f64>) -> Vec<Complex<f64>> {
    a.clone().complex_eigenvalues().iter().copied().collect()
}

/// Real eigenvector for a (near-)real eigenvalue `lambda`, as the right
/// singular direction of `A - lambda I` with smallest singular value.
///
/// Returns a unit vector; the residual |Av - lambda v| is the caller's
/// concern when `lambda` is only approximate.
pub fn real_eigenvector(a: &DMatrix<f64>, lambda: f64) -> Option<DVector<f64>> {
    let n = a.nrows();
    let shifted = a - DMatrix::identity(n, n) * lambda;
    let svd = shifted.svd(false, true);
    let v_t = svd.v_t?;
    // Smallest singular value is last in nalgebra's ordering.
    let v = v_t.row(v_t.nrows() - 1).transpose();
    Some(v.normalize())
}

/// Unit left eigenvector u with u^T A = lambda u^T.
pub fn left_eigenvector(a: &DMatrix<f64>, lambda: f64) -> Option<DVector<f64>> {
    real_eigenvector(&a.transpose(), lambda)
}

/// Orthonormal basis of the orthogonal complement of a unit vector.
///
/// Returns an n x (n-1) matrix whose columns, together with `axis`, form an
/// orthonormal basis of R^n.
pub fn orthogonal_complement(axis: &DVector<f64>) -> DMatrix<f64> {
    let n = axis.len();
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(n - 1);
    let unit = axis.normalize();
    for i in 0..n {
        if basis.len() == n - 1 {
            break;
        }
        let mut e = DVector::zeros(n);
        e[i] = 1.0;
        // Gram-Schmidt against the axis and what we already have.
        let mut v = &e - &unit * unit.dot(&e);
        for b in &basis {
            v -= b * b.dot(&v);
        }
        let norm = v.norm();
        if norm > 1e-8 {
            basis.push(v / norm);
        }
    }
    DMatrix::from_columns(&basis)
}

/// Re-orthonormalize `columns` against `against` and among themselves
/// (modified Gram-Schmidt). Columns that collapse are replaced by fresh
/// directions orthogonal to everything kept so far.
pub fn orthonormalize_against(against: &DVector<f64>, columns: &DMatrix<f64>) -> DMatrix<f64> {
    let n = against.len();
    let unit = against.normalize();
    let mut kept: Vec<DVector<f64>> = Vec::with_capacity(columns.ncols());
    for j in 0..columns.ncols() {
        let mut v = columns.column(j).clone_owned();
        v -= &unit * unit.dot(&v);
        for b in &kept {
            v -= b * b.dot(&v);
        }
        let norm = v.norm();
        if norm > 1e-10 {
            kept.push(v / norm);
        }
    }
    // Refill any lost directions from the standard basis.
    let mut i = 0;
    while kept.len() < columns.ncols() && i < n {
        let mut e = DVector::zeros(n);
        e[i] = 1.0;
        let mut v = &e - &unit * unit.dot(&e);
        for b in &kept {
            v -= b * b.dot(&v);
        }
        let norm = v.norm();
        if norm > 1e-8 {
            kept.push(v / norm);
        }
        i += 1;
    }
    DMatrix::from_columns(&kept)
}

/// Least-squares slope and intercept of y over x.
///
/// Returns (slope, intercept). Requires at least two points; with fewer the
/// slope is 0 and the intercept the mean.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    debug_assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    if x.len() < 2 {
        let mean = if x.is_empty() { 0.0 } else { y[0] };
        return (0.0, mean);
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        sxx += (xi - mx) * (xi - mx);
        sxy += (xi - mx) * (yi - my);
    }
    if sxx == 0.0 {
        return (0.0, my);
    }
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Symmetric eigendecomposition; returns (eigenvalues ascending, eigenvectors
/// as columns in matching order).
pub fn symmetric_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let se = m.clone().symmetric_eigen();
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| se.eigenvalues[i].partial_cmp(&se.eigenvalues[j]).unwrap());
    let vals = DVector::from_iterator(n, order.iter().map(|&i| se.eigenvalues[i]));
    let vecs = DMatrix::from_columns(
        &order
            .iter()
            .map(|&i| se.eigenvectors.column(i).clone_owned())
            .collect::<Vec<_>>(),
    );
    (vals, vecs)
}

/// 2-norm condition number via SVD.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let svd = a.clone().svd(false, false);
    let max = svd.singular_values.max();
    let min = svd.singular_values.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Nodes and weights of 5-point Gauss-Legendre quadrature on [0, 1].
pub const GAUSS5: [(f64, f64); 5] = [
    (0.046910077030668, 0.118463442528095),
    (0.230765344947158, 0.239314335249683),
    (0.5, 0.284444444444444),
    (0.769234655052841, 0.239314335249683),
    (0.953089922969332, 0.118463442528095),
];

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn eigenvector_of_symmetric_pair() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let v = real_eigenvector(&a, 3.0).unwrap();
        let expected = DVector::from_vec(vec![1.0, 1.0]).normalize();
        assert!((v.clone() - &expected).norm() < 1e-10 || (v + expected).norm() < 1e-10);
    }

    #[test]
    fn complement_is_orthonormal() {
        let axis = DVector::from_vec(vec![1.0, 2.0, -1.0]).normalize();
        let n = orthogonal_complement(&axis);
        assert_eq!(n.ncols(), 2);
        assert_relative_eq!(n.column(0).dot(&axis), 0.0, epsilon = 1e-12);
        assert_relative_eq!(n.column(1).dot(&axis), 0.0, epsilon = 1e-12);
        assert_relative_eq!(n.column(0).dot(&n.column(1)), 0.0, epsilon = 1e-12);
        assert_relative_eq!(n.column(0).norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn fit_recovers_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, 3.0, 5.0, 7.0];
        let (slope, intercept) = linear_fit(&x, &y);
        assert_relative_eq!(slope, 2.0, epsilon = 1e-12);
        assert_relative_eq!(intercept, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn gauss5_integrates_quartic_exactly() {
        // 5-point Gauss is exact through degree 9.
        let integral: f64 = GAUSS5.iter().map(|&(x, w)| w * x.powi(4)).sum();
        assert_relative_eq!(integral, 0.2, epsilon = 1e-12);
    }
}
