//! Small dense linear algebra helpers.
//!
//! The systems solved in this crate stay at desk scale (a few thousand
//! unknowns at most), so a plain LU factorization with partial pivoting is
//! sufficient and keeps the code generic over the scalar type.

use ndarray::{Array1, Array2};

use crate::error::{OpeError, Result};
use crate::scalar::Scalar;

/// Solves `a * x = rhs` by LU with partial pivoting. Consumes both inputs.
pub fn solve_dense<T: Scalar>(mut a: Array2<T>, mut rhs: Array1<T>, context: &'static str) -> Result<Array1<T>> {
    let n = a.nrows();
    assert_eq!(a.ncols(), n, "matrix must be square");
    assert_eq!(rhs.len(), n, "rhs length must match");

    for col in 0..n {
        let mut pivot_row = col;
        let mut pivot_val = a[[col, col]].abs();
        for row in col + 1..n {
            let v = a[[row, col]].abs();
            if v > pivot_val {
                pivot_val = v;
                pivot_row = row;
            }
        }
        if pivot_val <= T::zero() {
            return Err(OpeError::Singular(context));
        }
        if pivot_row != col {
            for k in 0..n {
                let tmp = a[[col, k]];
                a[[col, k]] = a[[pivot_row, k]];
                a[[pivot_row, k]] = tmp;
            }
            rhs.swap(col, pivot_row);
        }
        let pivot = a[[col, col]];
        for row in col + 1..n {
            let factor = a[[row, col]] / pivot;
            if factor == T::zero() {
                continue;
            }
            a[[row, col]] = T::zero();
            for k in col + 1..n {
                let update = factor * a[[col, k]];
                a[[row, k]] -= update;
            }
            let update = factor * rhs[col];
            rhs[row] -= update;
        }
    }

    let mut x = Array1::zeros(n);
    for row in (0..n).rev() {
        let mut acc = rhs[row];
        for k in row + 1..n {
            acc -= a[[row, k]] * x[k];
        }
        x[row] = acc / a[[row, row]];
    }
    Ok(x)
}

/// Largest absolute entry of `a - b`, as `f64`.
pub fn max_abs_diff<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs().to_f64().unwrap_or(f64::INFINITY))
        .fold(0.0, f64::max)
}

/// Identity matrix scaled by `diag`.
pub fn scaled_eye<T: Scalar>(n: usize, diag: T) -> Array2<T> {
    let mut m = Array2::zeros((n, n));
    for i in 0..n {
        m[[i, i]] = diag;
    }
    m
}
