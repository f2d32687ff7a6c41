//! Small dense row-major f64 matrix, just enough for the network code.
//!
//! Parallel matmul partitions output rows, so the result is bit-identical to
//! the serial loop regardless of thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

// Below this many output elements the rayon dispatch overhead dominates.
const PAR_THRESHOLD: usize = 16 * 1024;

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Mat { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c);
            data.extend_from_slice(row);
        }
        Mat { rows: r, cols: c, data }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn same_shape(&self, other: &Mat) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn check_shape(&self, rows: usize, cols: usize, what: &str) -> Result<()> {
        if self.rows != rows || self.cols != cols {
            return Err(Error::Shape(format!(
                "{what}: expected {rows}x{cols}, got {}x{}",
                self.rows, self.cols
            )));
        }
        Ok(())
    }

    /// self (m x k) * other (k x n).
    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "matmul inner dims");
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; m * n];
        let body = |(i, out_row): (usize, &mut [f64])| {
            let a_row = &self.data[i * k..(i + 1) * k];
            for (p, &a) in a_row.iter().enumerate() {
                let b_row = &other.data[p * n..(p + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        };
        if m * n >= PAR_THRESHOLD {
            out.par_chunks_mut(n).enumerate().for_each(body);
        } else {
            out.chunks_mut(n).enumerate().for_each(body);
        }
        Mat { rows: m, cols: n, data: out }
    }

    /// self (m x k) * other^T (n x k) -> (m x n).
    pub fn matmul_tb(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.cols, "matmul_tb inner dims");
        let (m, k, n) = (self.rows, self.cols, other.rows);
        let mut out = vec![0.0; m * n];
        let body = |(i, out_row): (usize, &mut [f64])| {
            let a_row = &self.data[i * k..(i + 1) * k];
            for (j, o) in out_row.iter_mut().enumerate() {
                let b_row = &other.data[j * k..(j + 1) * k];
                let mut acc = 0.0;
                for (&a, &b) in a_row.iter().zip(b_row) {
                    acc += a * b;
                }
                *o = acc;
            }
        };
        if m * n >= PAR_THRESHOLD {
            out.par_chunks_mut(n).enumerate().for_each(body);
        } else {
            out.chunks_mut(n).enumerate().for_each(body);
        }
        Mat { rows: m, cols: n, data: out }
    }

    /// self^T (k x m) * other (m x n) -> (k x n). Used for weight gradients.
    pub fn matmul_ta(&self, other: &Mat) -> Mat {
        assert_eq!(self.rows, other.rows, "matmul_ta inner dims");
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; k * n];
        // serial over the reduction dimension keeps summation order fixed
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            let b_row = &other.data[i * n..(i + 1) * n];
            for (p, &a) in a_row.iter().enumerate() {
                let out_row = &mut out[p * n..(p + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Mat { rows: k, cols: n, data: out }
    }

    /// Adds a row vector to every row.
    pub fn add_row(&mut self, v: &[f64]) {
        assert_eq!(v.len(), self.cols);
        for row in self.data.chunks_mut(self.cols) {
            for (x, &b) in row.iter_mut().zip(v) {
                *x += b;
            }
        }
    }

    pub fn add(&mut self, other: &Mat) {
        assert!(self.same_shape(other));
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn hadamard(&self, other: &Mat) -> Mat {
        assert!(self.same_shape(other));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect();
        Mat { rows: self.rows, cols: self.cols, data }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Column-wise sum, e.g. bias gradients from a batch.
    pub fn col_sum(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for row in self.data.chunks(self.cols) {
            for (o, &x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_matches_naive() {
        let a = Mat::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Mat::from_vec(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = a.matmul(&b);
        assert_eq!(c.data, vec![58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn transposed_variants_agree() {
        let mut rng = crate::rng::Rng::new(3);
        let a = Mat::from_vec(4, 5, (0..20).map(|_| rng.gauss()).collect());
        let b = Mat::from_vec(6, 5, (0..30).map(|_| rng.gauss()).collect());
        // a * b^T vs explicit transpose
        let mut bt = Mat::zeros(5, 6);
        for i in 0..6 {
            for j in 0..5 {
                *bt.at_mut(j, i) = b.at(i, j);
            }
        }
        let x = a.matmul_tb(&b);
        let y = a.matmul(&bt);
        for (p, q) in x.data.iter().zip(&y.data) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_ta_agrees() {
        let mut rng = crate::rng::Rng::new(4);
        let a = Mat::from_vec(7, 3, (0..21).map(|_| rng.gauss()).collect());
        let b = Mat::from_vec(7, 4, (0..28).map(|_| rng.gauss()).collect());
        let x = a.matmul_ta(&b); // 3x4
        for p in 0..3 {
            for q in 0..4 {
                let mut acc = 0.0;
                for i in 0..7 {
                    acc += a.at(i, p) * b.at(i, q);
                }
                assert!((x.at(p, q) - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn parallel_equals_serial() {
        // big enough to cross PAR_THRESHOLD
        let mut rng = crate::rng::Rng::new(8);
        let a = Mat::from_vec(200, 100, (0..20_000).map(|_| rng.gauss()).collect());
        let b = Mat::from_vec(100, 120, (0..12_000).map(|_| rng.gauss()).collect());
        let c1 = a.matmul(&b);
        let c2 = a.matmul(&b);
        assert_eq!(c1.data, c2.data);
    }
}
