//! Small dense helpers on row-major slices.

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::DMatrix;

pub(crate) fn to_matrix(a: &[f64], rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, a)
}

pub(crate) fn from_matrix(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// `out += scale * a * v` with `a` of shape `rows x cols`.
#[inline]
pub(crate) fn gemv_acc(out: &mut [f64], a: &[f64], cols: usize, v: &[f64], scale: f64) {
    for (o, row) in out.iter_mut().zip(a.chunks_exact(cols.max(1))) {
        let mut s = 0.0;
        for (aij, vj) in row.iter().zip(v) {
            s += aij * vj;
        }
        *o += scale * s;
    }
}

/// `a * b` for `a: r x k`, `b: k x c`.
pub(crate) fn matmul(a: &[f64], b: &[f64], r: usize, k: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            let mut s = 0.0;
            for l in 0..k {
                s += a[i * k + l] * b[l * c + j];
            }
            out[i * c + j] = s;
        }
    }
    out
}

/// `a * b^T` for `a: r x k`, `b: c x k`.
pub(crate) fn matmul_bt(a: &[f64], b: &[f64], r: usize, k: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            let mut s = 0.0;
            for l in 0..k {
                s += a[i * k + l] * b[j * k + l];
            }
            out[i * c + j] = s;
        }
    }
    out
}

pub(crate) fn transpose(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

pub(crate) fn identity(n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        out[i * n + i] = 1.0;
    }
    out
}

pub(crate) fn frobenius(a: &[f64]) -> f64 {
    libm::sqrt(a.iter().map(|x| x * x).sum())
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    libm::sqrt(v.iter().map(|x| x * x).sum())
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Inverse and 2-norm condition number of a square matrix.
pub(crate) fn inverse_with_condition(a: &[f64], n: usize) -> Option<(Vec<f64>, f64)> {
    let m = to_matrix(a, n, n);
    let sv = m.clone().singular_values();
    let smax = sv.max();
    let smin = sv.min();
    if !(smin > 0.0) || !smin.is_finite() {
        return None;
    }
    let inv = m.try_inverse()?;
    Some((from_matrix(&inv), smax / smin))
}

/// Symmetric square root of a positive semi-definite matrix; eigenvalues below
/// `-tol` are rejected, smaller negative ones are clamped to zero.
pub(crate) fn psd_sqrt(a: &[f64], n: usize, tol: f64) -> Option<Vec<f64>> {
    let m = to_matrix(a, n, n);
    let eig = nalgebra::SymmetricEigen::new(m);
    if eig.eigenvalues.iter().any(|&l| l < -tol) {
        return None;
    }
    let mut out = vec![0.0; n * n];
    for k in 0..n {
        let l = libm::sqrt(eig.eigenvalues[k].max(0.0));
        if l == 0.0 {
            continue;
        }
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] += l * eig.eigenvectors[(i, k)] * eig.eigenvectors[(j, k)];
            }
        }
    }
    Some(out)
}

pub(crate) fn min_symmetric_eigenvalue(a: &[f64], n: usize) -> f64 {
    nalgebra::SymmetricEigen::new(to_matrix(a, n, n)).eigenvalues.min()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psd_sqrt_squares_back() {
        let a = [2.0, 0.5, 0.5, 1.0];
        let r = psd_sqrt(&a, 2, 1e-12).unwrap();
        let back = matmul(&r, &r, 2, 2, 2);
        for (x, y) in back.iter().zip(&a) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(psd_sqrt(&[-1.0], 1, 1e-12).is_none());
        assert_eq!(psd_sqrt(&[0.0], 1, 1e-12).unwrap(), vec![0.0]);
    }

    #[test]
    fn inverse_reports_condition() {
        let (inv, cond) = inverse_with_condition(&[2.0, 0.0, 0.0, 0.5], 2).unwrap();
        assert!((inv[0] - 0.5).abs() < 1e-15 && (inv[3] - 2.0).abs() < 1e-15);
        assert!((cond - 4.0).abs() < 1e-12);
        assert!(inverse_with_condition(&[1.0, 2.0, 2.0, 4.0], 2).is_none());
    }
}
