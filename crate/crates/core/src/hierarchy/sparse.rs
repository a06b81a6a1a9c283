use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::spiral::read_array;

/// Row-compressed sparse matrix used for mesh pooling and un-pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from per-row `(column, value)` lists. Columns must be `< cols`.
    pub fn from_rows(cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for mut row in rows.iter().cloned() {
            row.sort_by_key(|&(c, _)| c);
            for (c, v) in row {
                assert!(c < cols, "column {c} out of range {cols}");
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        SparseMatrix {
            rows: rows.len(),
            cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_rows(n, (0..n).map(|i| vec![(i, 1.0)]).collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    /// `out[b] = self * x[b]` for `batch` row-major `cols x channels` blocks.
    pub fn apply(&self, x: &[f64], batch: usize, channels: usize) -> Vec<f64> {
        assert_eq!(x.len(), batch * self.cols * channels);
        let mut out = vec![0.0; batch * self.rows * channels];
        for b in 0..batch {
            let xin = &x[b * self.cols * channels..(b + 1) * self.cols * channels];
            let xout = &mut out[b * self.rows * channels..(b + 1) * self.rows * channels];
            for r in 0..self.rows {
                let dst = &mut xout[r * channels..(r + 1) * channels];
                for (c, v) in self.row(r) {
                    let src = &xin[c * channels..(c + 1) * channels];
                    for k in 0..channels {
                        dst[k] += v * src[k];
                    }
                }
            }
        }
        out
    }

    /// Accumulates `selfᵀ * g` into `acc` (the backward pass of [`apply`](Self::apply)).
    pub fn apply_transpose_add(&self, g: &[f64], batch: usize, channels: usize, acc: &mut [f64]) {
        assert_eq!(g.len(), batch * self.rows * channels);
        assert_eq!(acc.len(), batch * self.cols * channels);
        for b in 0..batch {
            let gin = &g[b * self.rows * channels..(b + 1) * self.rows * channels];
            let aout = &mut acc[b * self.cols * channels..(b + 1) * self.cols * channels];
            for r in 0..self.rows {
                let src = &gin[r * channels..(r + 1) * channels];
                for (c, v) in self.row(r) {
                    let dst = &mut aout[c * channels..(c + 1) * channels];
                    for k in 0..channels {
                        dst[k] += v * src[k];
                    }
                }
            }
        }
    }

    /// Coordinate-triplet serialization.
    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(&(self.rows as u64).to_le_bytes())?;
        w.write_all(&(self.cols as u64).to_le_bytes())?;
        w.write_all(&(self.nnz() as u64).to_le_bytes())?;
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                w.write_all(&(r as u64).to_le_bytes())?;
                w.write_all(&(c as u64).to_le_bytes())?;
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let rows = u64::from_le_bytes(read_array(r)?) as usize;
        let cols = u64::from_le_bytes(read_array(r)?) as usize;
        let nnz = u64::from_le_bytes(read_array(r)?) as usize;
        let mut per_row = vec![Vec::new(); rows];
        for _ in 0..nnz {
            let i = u64::from_le_bytes(read_array(r)?) as usize;
            let j = u64::from_le_bytes(read_array(r)?) as usize;
            let v = f64::from_le_bytes(read_array(r)?);
            if i >= rows || j >= cols {
                return Err(Error::Format(format!("triplet ({i}, {j}) outside {rows}x{cols}")));
            }
            per_row[i].push((j, v));
        }
        Ok(Self::from_rows(cols, per_row))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn apply_and_transpose_agree() {
        let m = SparseMatrix::from_rows(3, vec![vec![(0, 0.5), (2, 0.5)], vec![(1, 1.0)]]);
        let x = [1.0, 10.0, 2.0, 20.0, 3.0, 30.0];
        assert_eq!(m.apply(&x, 1, 2), vec![2.0, 20.0, 2.0, 20.0]);
        // <g, M x> == <Mᵀ g, x>
        let g = [1.0, -1.0, 0.5, 2.0];
        let mut mt = vec![0.0; 6];
        m.apply_transpose_add(&g, 1, 2, &mut mt);
        let lhs: f64 = m.apply(&x, 1, 2).iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = mt.iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
        let mut bytes = Vec::new();
        m.write_to(&mut bytes).unwrap();
        assert_eq!(SparseMatrix::read_from(&mut bytes.as_slice()).unwrap(), m);
    }
}
