use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taxonomy::NodeId;

/// Row-major dense matrix of `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Matrix { rows, cols, data }
    }

    pub fn from_rows<R: AsRef<[f64]>>(cols: usize, rows: &[R]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::DimensionMismatch { expected: cols, actual: r.len() });
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix { rows: rows.len(), cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    /// `out = self * x`.
    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(self.iter_rows()) {
            *o = dot(row, x);
        }
    }

    pub fn push_row(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.cols {
            return Err(Error::DimensionMismatch { expected: self.cols, actual: row.len() });
        }
        self.data.extend_from_slice(row);
        self.rows += 1;
        Ok(())
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix { rows: idx.len(), cols: self.cols, data }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Output slot of a classifier head: either a taxonomy node (leaf or child
/// class) or the virtual novel class `N(s)` of a super class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ClassSlot {
    Node(NodeId),
    Novel(NodeId),
}

/// Affine map `z = W x + b` over an ordered list of output slots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearHead {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub class_ids: Vec<ClassSlot>,
}

impl LinearHead {
    pub fn zeros(class_ids: Vec<ClassSlot>, feature_dim: usize) -> Self {
        let k = class_ids.len();
        LinearHead { weights: Matrix::zeros(k, feature_dim), bias: vec![0.0; k], class_ids }
    }

    pub fn num_classes(&self) -> usize {
        self.class_ids.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.feature_dim() {
            return Err(Error::DimensionMismatch { expected: self.feature_dim(), actual: x.len() });
        }
        Ok(())
    }

    pub fn logits_into(&self, x: &[f64], out: &mut [f64]) {
        self.weights.matvec(x, out);
        for (o, b) in out.iter_mut().zip(&self.bias) {
            *o += b;
        }
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut out = vec![0.0; self.num_classes()];
        self.logits_into(x, &mut out);
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.weights.as_slice().iter().chain(&self.bias).all(|v| v.is_finite())
    }

    /// Number of trainable scalars: weights first (row-major), then bias.
    pub fn param_count(&self) -> usize {
        self.weights.as_slice().len() + self.bias.len()
    }

    pub fn param(&self, i: usize) -> f64 {
        let nw = self.weights.as_slice().len();
        if i < nw {
            self.weights.as_slice()[i]
        } else {
            self.bias[i - nw]
        }
    }

    pub fn param_mut(&mut self, i: usize) -> &mut f64 {
        let nw = self.weights.as_slice().len();
        if i < nw {
            &mut self.weights.as_mut_slice()[i]
        } else {
            &mut self.bias[i - nw]
        }
    }
}

/// Gradient buffer with the same layout as [`LinearHead`] parameters.
#[derive(Clone, Debug)]
pub struct HeadGrad {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl HeadGrad {
    pub fn zeros_like(head: &LinearHead) -> Self {
        HeadGrad { weights: Matrix::zeros(head.num_classes(), head.feature_dim()), bias: vec![0.0; head.num_classes()] }
    }

    pub fn clear(&mut self) {
        self.weights.as_mut_slice().fill(0.0);
        self.bias.fill(0.0);
    }

    /// Adds `scale * g x^T` to the weights and `scale * g` to the bias.
    pub fn accumulate(&mut self, g: &[f64], x: &[f64], scale: f64) {
        for (k, &gk) in g.iter().enumerate() {
            if gk == 0.0 {
                continue;
            }
            let s = scale * gk;
            for (w, &xi) in self.weights.row_mut(k).iter_mut().zip(x) {
                *w += s * xi;
            }
            self.bias[k] += s;
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.weights.as_slice().iter().chain(&self.bias).copied().collect()
    }
}
