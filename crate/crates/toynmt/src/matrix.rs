use std::fmt;

use crate::kernel::ModelScalar;

/// Dense row-major matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix<S> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<S>,
}

impl<S: fmt::Debug> fmt::Debug for Matrix<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix({}x{})", self.rows, self.cols)
    }
}

impl<S: ModelScalar> Matrix<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Matrix { rows, cols, data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [S] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix<S>) -> Matrix<S> {
        assert_eq!(self.cols, other.rows, "matmul shape");
        let mut out = Matrix::zeros(self.rows, other.cols);
        S::gemm(
            self.rows,
            self.cols,
            other.cols,
            &self.data,
            (self.cols as isize, 1),
            &other.data,
            (other.cols as isize, 1),
            &mut out.data,
            false,
        );
        out
    }

    /// `self · otherᵀ`.
    pub fn matmul_bt(&self, other: &Matrix<S>) -> Matrix<S> {
        let mut out = Matrix::zeros(self.rows, other.rows);
        self.matmul_bt_into(other, &mut out, false);
        out
    }

    pub fn matmul_into(&self, other: &Matrix<S>, out: &mut Matrix<S>, accumulate: bool) {
        assert_eq!(self.cols, other.rows, "matmul shape");
        assert_eq!((out.rows, out.cols), (self.rows, other.cols), "matmul output shape");
        S::gemm(
            self.rows,
            self.cols,
            other.cols,
            &self.data,
            (self.cols as isize, 1),
            &other.data,
            (other.cols as isize, 1),
            &mut out.data,
            accumulate,
        );
    }

    /// `out (+)= self · otherᵀ`.
    pub fn matmul_bt_into(&self, other: &Matrix<S>, out: &mut Matrix<S>, accumulate: bool) {
        assert_eq!(self.cols, other.cols, "matmul_bt shape");
        assert_eq!((out.rows, out.cols), (self.rows, other.rows), "matmul_bt output shape");
        S::gemm(
            self.rows,
            self.cols,
            other.rows,
            &self.data,
            (self.cols as isize, 1),
            &other.data,
            (1, other.cols as isize),
            &mut out.data,
            accumulate,
        );
    }

    /// `out (+)= selfᵀ · other`.
    pub fn matmul_at_into(&self, other: &Matrix<S>, out: &mut Matrix<S>, accumulate: bool) {
        assert_eq!(self.rows, other.rows, "matmul_at shape");
        assert_eq!((out.rows, out.cols), (self.cols, other.cols), "matmul_at output shape");
        S::gemm(
            self.cols,
            self.rows,
            other.cols,
            &self.data,
            (1, self.cols as isize),
            &other.data,
            (other.cols as isize, 1),
            &mut out.data,
            accumulate,
        );
    }

    pub fn add_assign(&mut self, other: &Matrix<S>) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "add shape");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn fill(&mut self, v: S) {
        self.data.iter_mut().for_each(|x| *x = v);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Matrix<f64>, b: &Matrix<f64>) -> Matrix<f64> {
        let mut out = Matrix::zeros(a.rows, b.cols);
        for i in 0..a.rows {
            for j in 0..b.cols {
                let mut s = 0.0;
                for k in 0..a.cols {
                    s += a.data[i * a.cols + k] * b.data[k * b.cols + j];
                }
                out.data[i * b.cols + j] = s;
            }
        }
        out
    }

    fn transpose(a: &Matrix<f64>) -> Matrix<f64> {
        let mut out = Matrix::zeros(a.cols, a.rows);
        for i in 0..a.rows {
            for j in 0..a.cols {
                out.data[j * a.rows + i] = a.data[i * a.cols + j];
            }
        }
        out
    }

    fn sample(rows: usize, cols: usize, offset: f64) -> Matrix<f64> {
        Matrix::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|i| ((i as f64 + offset) * 0.37).sin()).collect(),
        )
    }

    #[test]
    fn products_match_naive() {
        let a = sample(5, 3, 0.0);
        let b = sample(3, 4, 1.0);
        let close = |x: &Matrix<f64>, y: &Matrix<f64>| {
            x.data.iter().zip(&y.data).all(|(p, q)| (p - q).abs() < 1e-12)
        };
        assert!(close(&a.matmul(&b), &naive(&a, &b)));
        assert!(close(&a.matmul_bt(&transpose(&b)), &naive(&a, &b)));
        let mut acc = naive(&a, &b);
        a.matmul_into(&b, &mut acc, true);
        let twice: Vec<f64> = naive(&a, &b).data.iter().map(|v| 2.0 * v).collect();
        assert!(acc.data.iter().zip(&twice).all(|(p, q)| (p - q).abs() < 1e-12));
    }

    #[test]
    fn transposed_left_product() {
        let a = sample(4, 3, 0.5);
        let b = sample(4, 2, 1.5);
        let mut out = Matrix::zeros(3, 2);
        a.matmul_at_into(&b, &mut out, false);
        let expect = naive(&transpose(&a), &b);
        assert!(out.data.iter().zip(&expect.data).all(|(p, q)| (p - q).abs() < 1e-12));
    }
}
