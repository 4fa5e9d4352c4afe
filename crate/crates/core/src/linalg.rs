//! Minimal dense linear algebra over `f64` slices and row-major square
//! matrices. The greedy selector maintains its own incremental factor and
//! never goes through this module's factorization; these routines back the
//! exhaustive oracles, the log-determinant evaluator, and the quadratic
//! benchmark problems.

/// Dot product of two equal-length slices.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Squared Euclidean norm.
pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

/// Euclidean norm.
pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

/// Dense square matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    /// Builds from raw row-major data; `data.len()` must equal `n * n`.
    pub fn from_raw(n: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * n, "row-major data must be n*n");
        Self { n, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for row in rows {
            assert_eq!(row.len(), n, "matrix must be square");
            data.extend_from_slice(row);
        }
        Self { n, data }
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n);
        for (i, &v) in values.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        (0..self.n).map(|i| dot(self.row(i), x)).collect()
    }

    /// Principal submatrix for the given (distinct, in-range) indices.
    pub fn principal_submatrix(&self, idx: &[usize]) -> DenseMatrix {
        let m = idx.len();
        let mut out = DenseMatrix::zeros(m);
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                out.set(a, b, self.get(i, j));
            }
        }
        out
    }

    /// Lower-triangular Cholesky factor, or `None` if a pivot falls at or
    /// below `pivot_floor` (numerically not positive definite).
    pub fn cholesky(&self, pivot_floor: f64) -> Option<DenseMatrix> {
        let n = self.n;
        let mut l = DenseMatrix::zeros(n);
        for j in 0..n {
            let mut pivot = self.get(j, j);
            for k in 0..j {
                let v = l.get(j, k);
                pivot -= v * v;
            }
            if pivot.is_nan() || pivot <= pivot_floor {
                return None;
            }
            let d = pivot.sqrt();
            l.set(j, j, d);
            for i in (j + 1)..n {
                let mut v = self.get(i, j);
                for k in 0..j {
                    v -= l.get(i, k) * l.get(j, k);
                }
                l.set(i, j, v / d);
            }
        }
        Some(l)
    }

    /// Log-determinant via Cholesky pivots; `None` when a pivot is at or
    /// below `pivot_floor` (numerically singular / indefinite).
    pub fn cholesky_log_det(&self, pivot_floor: f64) -> Option<f64> {
        let n = self.n;
        let mut l = DenseMatrix::zeros(n);
        let mut log_det = 0.0;
        for j in 0..n {
            let mut pivot = self.get(j, j);
            for k in 0..j {
                let v = l.get(j, k);
                pivot -= v * v;
            }
            if pivot.is_nan() || pivot <= pivot_floor {
                return None;
            }
            log_det += pivot.ln();
            let d = pivot.sqrt();
            l.set(j, j, d);
            for i in (j + 1)..n {
                let mut v = self.get(i, j);
                for k in 0..j {
                    v -= l.get(i, k) * l.get(j, k);
                }
                l.set(i, j, v / d);
            }
        }
        Some(log_det)
    }

    /// Solves `A x = b` for symmetric positive-definite `A`.
    #[allow(clippy::needless_range_loop)]
    pub fn solve_spd(&self, b: &[f64]) -> Option<Vec<f64>> {
        let l = self.cholesky(0.0)?;
        let n = self.n;
        // forward: L y = b
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut v = b[i];
            for k in 0..i {
                v -= l.get(i, k) * y[k];
            }
            y[i] = v / l.get(i, i);
        }
        // backward: L^T x = y
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut v = y[i];
            for k in (i + 1)..n {
                v -= l.get(k, i) * x[k];
            }
            x[i] = v / l.get(i, i);
        }
        Some(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn cholesky_reconstructs() {
        // A = B B^T with B lower triangular, so the factor is B itself.
        let b = DenseMatrix::from_rows(&[
            vec![2.0, 0.0, 0.0],
            vec![1.0, 3.0, 0.0],
            vec![-1.0, 0.5, 1.5],
        ]);
        let n = b.n();
        let mut a = DenseMatrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                let mut v = 0.0;
                for k in 0..n {
                    v += b.get(i, k) * b.get(j, k);
                }
                a.set(i, j, v);
            }
        }
        let l = a.cholesky(0.0).expect("PD");
        for i in 0..n {
            for j in 0..n {
                assert_abs_diff_eq!(l.get(i, j), b.get(i, j), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn log_det_matches_diagonal_product() {
        let m = DenseMatrix::diag(&[3.0, 1.0, 2.0]);
        let ld = m.cholesky_log_det(1e-300).unwrap();
        assert_abs_diff_eq!(ld, 6.0_f64.ln(), epsilon = 1e-14);
    }

    #[test]
    fn singular_matrix_reports_none() {
        let m = DenseMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        assert!(m.cholesky_log_det(1e-300).is_none());
    }

    #[test]
    fn solve_spd_solves() {
        let a = DenseMatrix::from_rows(&[vec![4.0, 1.0], vec![1.0, 3.0]]);
        let x = a.solve_spd(&[1.0, 2.0]).unwrap();
        let ax = a.matvec(&x);
        assert_abs_diff_eq!(ax[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ax[1], 2.0, epsilon = 1e-12);
    }
}
