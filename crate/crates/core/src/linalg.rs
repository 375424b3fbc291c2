//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};

use crate::error::{OfoError, Result};

/// Singular values below this fraction of the largest one are treated as zero.
pub const SINGULAR_VALUE_RTOL: f64 = 1e-12;

/// Relative pivot threshold below which an LU factorization is declared singular.
const PIVOT_RTOL: f64 = 1e-14;

pub fn sigma_max(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Smallest of the `min(rows, cols)` singular values, flushed to zero when
/// below `SINGULAR_VALUE_RTOL * sigma_max`.
pub fn sigma_min(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let sv = m.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= SINGULAR_VALUE_RTOL * max {
        0.0
    } else {
        min
    }
}

/// Largest `c` such that `|M v| >= c |v|` for every `v`.
///
/// Equals `sigma_min` when `M` has at least as many rows as columns and zero
/// otherwise (a wide matrix has a non-trivial kernel).
pub fn lower_gain(m: &DMatrix<f64>) -> f64 {
    if m.nrows() < m.ncols() {
        0.0
    } else {
        sigma_min(m)
    }
}

pub fn lambda_max_sym(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigenvalues().max()
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Diagonal part of a square matrix with every off-diagonal entry exactly zero.
pub fn diag_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_diagonal(&m.diagonal())
}

/// Largest eigenvalue of a symmetric 2x2 matrix in closed form.
pub fn lambda_max_2x2(m: &[[f64; 2]; 2]) -> f64 {
    let mean = 0.5 * (m[0][0] + m[1][1]);
    let half_gap = 0.5 * (m[0][0] - m[1][1]);
    mean + half_gap.hypot(m[0][1])
}

/// Solves `A X = B` by LU with partial pivoting.
pub fn solve(a: &DMatrix<f64>, b: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    if !a.is_square() || a.nrows() != b.nrows() {
        return Err(OfoError::dims(
            what,
            format!("square system with {} rows", b.nrows()),
            format!("{}x{}", a.nrows(), a.ncols()),
        ));
    }
    let lu = a.clone().lu();
    let u = lu.u();
    let diag = u.diagonal().abs();
    let scale = a.amax().max(f64::MIN_POSITIVE);
    if diag.iter().any(|&p| p <= PIVOT_RTOL * scale) {
        return Err(OfoError::SingularMatrix(what));
    }
    lu.solve(b).ok_or(OfoError::SingularMatrix(what))
}

pub fn solve_vec(a: &DMatrix<f64>, b: &DVector<f64>, what: &'static str) -> Result<DVector<f64>> {
    let x = solve(a, &DMatrix::from_column_slice(b.len(), 1, b.as_slice()), what)?;
    Ok(x.column(0).into_owned())
}

pub fn check_len(v: &DVector<f64>, n: usize, context: &'static str) -> Result<()> {
    if v.len() == n {
        Ok(())
    } else {
        Err(OfoError::dims(context, format!("length {n}"), format!("length {}", v.len())))
    }
}

pub fn check_shape(
    m: &DMatrix<f64>,
    rows: usize,
    cols: usize,
    context: &'static str,
) -> Result<()> {
    if m.shape() == (rows, cols) {
        Ok(())
    } else {
        Err(OfoError::dims(
            context,
            format!("{rows}x{cols}"),
            format!("{}x{}", m.nrows(), m.ncols()),
        ))
    }
}

pub fn all_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Builds a matrix from row-major nested rows, rejecting ragged or non-finite input.
pub fn matrix_from_rows(rows: &[Vec<f64>]) -> std::result::Result<DMatrix<f64>, String> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != ncols) {
        return Err(format!("row {i} has {} entries, expected {ncols}", r.len()));
    }
    if let Some(x) = rows.iter().flatten().find(|x| !x.is_finite()) {
        return Err(format!("non-finite entry {x}"));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn closed_form_2x2_matches_symmetric_eigen() {
        let m = [[0.292, 0.115], [0.115, 0.9125]];
        let dm = DMatrix::from_row_slice(2, 2, &[0.292, 0.115, 0.115, 0.9125]);
        assert_relative_eq!(lambda_max_2x2(&m), lambda_max_sym(&dm), epsilon = 1e-14);
    }

    #[test]
    fn spectral_radius_of_rotation() {
        let r = DMatrix::from_row_slice(2, 2, &[0.0, -0.8, 0.8, 0.0]);
        assert_relative_eq!(spectral_radius(&r), 0.8, epsilon = 1e-12);
    }

    #[test]
    fn singular_solve_is_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let b = DMatrix::identity(2, 2);
        assert!(matches!(solve(&a, &b, "test"), Err(OfoError::SingularMatrix(_))));
    }

    #[test]
    fn wide_matrix_has_zero_lower_gain() {
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        assert_eq!(lower_gain(&c), 0.0);
        assert_relative_eq!(sigma_min(&c), 1.0);
    }

    #[test]
    fn ragged_rows_are_rejected() {
        assert!(matrix_from_rows(&[vec![1.0, 2.0], vec![3.0]]).is_err());
        assert!(matrix_from_rows(&[vec![f64::NAN]]).is_err());
    }
}
