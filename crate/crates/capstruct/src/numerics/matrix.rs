//! Dense row-major matrix with the small set of operations the estimators need.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense matrix, entries stored row-major. All entries are finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds from row-major data. Panics if the length does not match.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major data length mismatch");
        Matrix { rows, cols, data }
    }

    /// Builds from equal-length columns.
    pub fn from_columns(columns: &[Vec<f64>]) -> Self {
        let cols = columns.len();
        let rows = if cols == 0 { 0 } else { columns[0].len() };
        let mut m = Matrix::zeros(rows, cols);
        for (j, col) in columns.iter().enumerate() {
            assert_eq!(col.len(), rows, "ragged column lengths");
            for (i, v) in col.iter().enumerate() {
                m[(i, j)] = *v;
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "matvec dimension mismatch");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.rows != self.cols {
            return false;
        }
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                if (self[(i, j)] - self[(j, i)]).abs() > tol {
                    return false;
                }
            }
        }
        true
    }

    pub(crate) fn to_na(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub(crate) fn from_na(m: &DMatrix<f64>) -> Matrix {
        let mut out = Matrix::zeros(m.nrows(), m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                out[(i, j)] = m[(i, j)];
            }
        }
        out
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Least-squares solution with rank diagnostics.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub coefficients: Vec<f64>,
    pub rank: usize,
    pub rank_deficient: bool,
}

/// Minimizes `||X b - y||`; on rank deficiency returns the minimum-norm
/// solution and sets the deficiency flag. Requires `n >= p`.
pub fn solve_least_squares(x: &Matrix, y: &[f64]) -> Result<LeastSquares> {
    let (n, p) = (x.rows(), x.cols());
    assert_eq!(y.len(), n, "response length mismatch");
    if n < p {
        return Err(Error::UnderIdentified { rows: n, cols: p });
    }
    let xm = x.to_na();
    let yv = nalgebra::DVector::from_column_slice(y);
    let svd = xm.svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let eps = (1e-10 * smax).max(f64::MIN_POSITIVE);
    let rank = svd.singular_values.iter().filter(|&&s| s > eps).count();
    let sol = svd
        .solve(&yv, eps)
        .map_err(|m| Error::DegenerateFit { message: m.to_string() })?;
    Ok(LeastSquares {
        coefficients: sol.iter().copied().collect(),
        rank,
        rank_deficient: rank < p,
    })
}

/// Moore-Penrose pseudo-inverse; singular values below `1e-10 * sigma_max`
/// are treated as zero.
pub fn pseudo_inverse(a: &Matrix) -> Matrix {
    let svd = a.to_na().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let eps = (1e-10 * smax).max(f64::MIN_POSITIVE);
    let pinv = svd
        .pseudo_inverse(eps)
        .expect("pseudo-inverse with nonnegative tolerance cannot fail");
    Matrix::from_na(&pinv)
}

/// Indices of linearly dependent columns, by modified Gram-Schmidt at
/// relative tolerance 1e-10: a column whose residual after projecting out
/// the preceding independent columns is negligible is flagged.
pub fn dependent_columns(x: &Matrix) -> Vec<usize> {
    let (n, p) = (x.rows(), x.cols());
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut dependent = Vec::new();
    for j in 0..p {
        let mut col: Vec<f64> = (0..n).map(|i| x[(i, j)]).collect();
        let orig_norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        for b in &basis {
            let dot: f64 = col.iter().zip(b).map(|(a, c)| a * c).sum();
            for (v, c) in col.iter_mut().zip(b) {
                *v -= dot * c;
            }
        }
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= 1e-10 * orig_norm.max(1e-300) {
            dependent.push(j);
        } else {
            for v in col.iter_mut() {
                *v /= norm;
            }
            basis.push(col);
        }
    }
    dependent
}

/// Rank at relative tolerance `rtol * sigma_max`.
pub fn matrix_rank(a: &Matrix, rtol: f64) -> usize {
    let svd = a.to_na().svd(false, false);
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    if smax == 0.0 {
        return 0;
    }
    svd.singular_values.iter().filter(|&&s| s > rtol * smax).count()
}

/// Inverse of a symmetric positive-definite matrix, via Cholesky with a
/// pseudo-inverse fallback for semi-definite inputs.
pub fn symmetric_inverse(a: &Matrix) -> Matrix {
    match a.to_na().cholesky() {
        Some(chol) => Matrix::from_na(&chol.inverse()),
        None => pseudo_inverse(a),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn least_squares_identity() {
        let x = Matrix::identity(2);
        let sol = solve_least_squares(&x, &[3.0, 4.0]).unwrap();
        assert_eq!(sol.coefficients, vec![3.0, 4.0]);
        assert!(!sol.rank_deficient);
    }

    #[test]
    fn least_squares_column_of_ones_is_mean() {
        let x = Matrix::from_columns(&[vec![1.0, 1.0, 1.0]]);
        let sol = solve_least_squares(&x, &[1.0, 2.0, 3.0]).unwrap();
        assert!((sol.coefficients[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn least_squares_flags_duplicated_column() {
        let x = Matrix::from_columns(&[vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]]);
        let sol = solve_least_squares(&x, &[1.0, 2.0, 3.0]).unwrap();
        assert!(sol.rank_deficient);
        assert_eq!(sol.rank, 1);
        // Minimum-norm solution splits the unit slope across the two copies.
        assert!((sol.coefficients[0] - 0.5).abs() < 1e-10);
        assert!((sol.coefficients[1] - 0.5).abs() < 1e-10);
    }

    #[test]
    fn least_squares_rejects_wide_systems() {
        let x = Matrix::zeros(1, 2);
        assert!(solve_least_squares(&x, &[0.0]).is_err());
    }

    #[test]
    fn pinv_identity_and_zero() {
        let id = pseudo_inverse(&Matrix::identity(3));
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((id[(i, j)] - want).abs() < 1e-12);
            }
        }
        let z = pseudo_inverse(&Matrix::zeros(2, 2));
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pinv_diagonal() {
        let mut d = Matrix::zeros(2, 2);
        d[(0, 0)] = 2.0;
        let p = pseudo_inverse(&d);
        assert!((p[(0, 0)] - 0.5).abs() < 1e-12);
        assert_eq!(p[(1, 1)], 0.0);
    }

    #[test]
    fn rank_of_zero_matrix_is_zero() {
        assert_eq!(matrix_rank(&Matrix::zeros(3, 3), 1e-10), 0);
        assert_eq!(matrix_rank(&Matrix::identity(3), 1e-10), 3);
    }
}
