//! Dense row-major 2-D tensor used for batches, activations and logits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Row-major matrix of shape `(rows, cols)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor2<F> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl<F: Real> Tensor2<F> {
    pub fn new(rows: usize, cols: usize, data: Vec<F>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::input(format!(
                "tensor data length {} does not match shape {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<F>]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::input("ragged rows"));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> F {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: F) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[F] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [F] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Selects a subset of rows, preserving order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &r in idx {
            data.extend_from_slice(self.row(r));
        }
        Self {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self (n x k) * w^T` where `w` is `(m x k)`, giving `(n x m)`.
    ///
    /// Weights are stored row-major as `(out, in)`, so this is the forward
    /// affine map without the bias.
    pub fn matmul_transposed(&self, w: &Tensor2<F>) -> Tensor2<F> {
        assert_eq!(self.cols, w.cols, "inner dimensions must agree");
        let mut out = Tensor2::zeros(self.rows, w.rows);
        for i in 0..self.rows {
            let xi = self.row(i);
            let oi = out.row_mut(i);
            for (j, oj) in oi.iter_mut().enumerate() {
                let wj = w.row(j);
                let mut acc = F::zero();
                for (a, b) in xi.iter().zip(wj) {
                    acc = acc + *a * *b;
                }
                *oj = acc;
            }
        }
        out
    }

    /// `self (n x m) * w` where `w` is `(m x k)`, giving `(n x k)`.
    pub fn matmul(&self, w: &Tensor2<F>) -> Tensor2<F> {
        assert_eq!(self.cols, w.rows, "inner dimensions must agree");
        let mut out = Tensor2::zeros(self.rows, w.cols);
        for i in 0..self.rows {
            let xi = self.row(i);
            for (k, &xik) in xi.iter().enumerate() {
                let wk = w.row(k);
                let oi = &mut out.data[i * w.cols..(i + 1) * w.cols];
                for (o, &wkj) in oi.iter_mut().zip(wk) {
                    *o = *o + xik * wkj;
                }
            }
        }
        out
    }

    /// Column-wise mean over rows.
    pub fn col_mean(&self) -> Vec<F> {
        let n = F::from_usize_lossy(self.rows.max(1));
        let mut mean = vec![F::zero(); self.cols];
        for r in 0..self.rows {
            for (m, &v) in mean.iter_mut().zip(self.row(r)) {
                *m = *m + v;
            }
        }
        for m in &mut mean {
            *m = *m / n;
        }
        mean
    }

    /// Column-wise population variance (divides by `rows`).
    pub fn col_var(&self, mean: &[F]) -> Vec<F> {
        let n = F::from_usize_lossy(self.rows.max(1));
        let mut var = vec![F::zero(); self.cols];
        for r in 0..self.rows {
            for ((v, &m), &x) in var.iter_mut().zip(mean).zip(self.row(r)) {
                let d = x - m;
                *v = *v + d * d;
            }
        }
        for v in &mut var {
            *v = *v / n;
        }
        var
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_mismatch_rejected() {
        assert!(Tensor2::<f64>::new(2, 3, vec![0.0; 5]).is_err());
    }

    #[test]
    fn matmul_transposed_small() {
        // x = [[1,2],[3,4]], w = [[1,0],[0,1],[1,1]] (3x2) -> x w^T = [[1,2,3],[3,4,7]]
        let x = Tensor2::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = Tensor2::new(3, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let y = x.matmul_transposed(&w);
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 3.0, 4.0, 7.0]);
    }

    #[test]
    fn col_stats() {
        let x = Tensor2::new(2, 2, vec![1.0, 0.0, 3.0, 0.0]).unwrap();
        let m = x.col_mean();
        assert_eq!(m, vec![2.0, 0.0]);
        let v = x.col_var(&m);
        assert_eq!(v, vec![1.0, 0.0]);
    }
}
