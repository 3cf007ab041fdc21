//! Layer weight storage: dense row-major matrices or `⟨src, dst, weight⟩`
//! triple streams after pruning.

use crate::error::{shape_err, Result};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triple<T> {
    pub src: u32,
    pub dst: u32,
    pub weight: T,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Storage<T> {
    /// `rows × cols`, row-major (source-major).
    Dense(Vec<T>),
    Sparse(Vec<Triple<T>>),
}

/// Affine map `y = x·W + b` with `W ∈ ℝ^{rows×cols}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub rows: usize,
    pub cols: usize,
    pub storage: Storage<T>,
    pub bias: Vec<T>,
}

/// Pruned weights as a triple stream plus the dense bias: the form consumed
/// by update kernels and the row partitioner.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseWeightMatrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub triples: Vec<Triple<T>>,
    pub bias: Vec<T>,
}

impl<T: Real> SparseWeightMatrix<T> {
    pub fn nnz(&self) -> usize {
        self.triples.len()
    }

    pub fn density(&self) -> f64 {
        let cells = self.rows * self.cols;
        if cells == 0 {
            0.0
        } else {
            self.nnz() as f64 / cells as f64
        }
    }

    /// Nonzero count per destination column.
    pub fn dst_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.cols];
        for t in &self.triples {
            counts[t.dst as usize] += 1;
        }
        counts
    }
}

impl<T: Real> Linear<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            storage: Storage::Dense(vec![T::zero(); rows * cols]),
            bias: vec![T::zero(); cols],
        }
    }

    pub fn dense(rows: usize, cols: usize, data: Vec<T>, bias: Vec<T>) -> Result<Self> {
        let l = Self {
            rows,
            cols,
            storage: Storage::Dense(data),
            bias,
        };
        l.validate()?;
        Ok(l)
    }

    pub fn sparse(rows: usize, cols: usize, triples: Vec<Triple<T>>, bias: Vec<T>) -> Result<Self> {
        let l = Self {
            rows,
            cols,
            storage: Storage::Sparse(triples),
            bias,
        };
        l.validate()?;
        Ok(l)
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![T::zero(); n * n];
        for i in 0..n {
            data[i * n + i] = T::one();
        }
        Self {
            rows: n,
            cols: n,
            storage: Storage::Dense(data),
            bias: vec![T::zero(); n],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bias.len() != self.cols {
            return Err(shape_err(format!(
                "bias has {} entries for {} columns",
                self.bias.len(),
                self.cols
            )));
        }
        match &self.storage {
            Storage::Dense(d) if d.len() != self.rows * self.cols => Err(shape_err(format!(
                "dense weights have {} entries for {}x{}",
                d.len(),
                self.rows,
                self.cols
            ))),
            Storage::Dense(_) => Ok(()),
            Storage::Sparse(ts) => {
                let mut seen = std::collections::HashSet::with_capacity(ts.len());
                for t in ts {
                    if t.src as usize >= self.rows || t.dst as usize >= self.cols {
                        return Err(shape_err(format!(
                            "triple ({}, {}) outside {}x{}",
                            t.src, t.dst, self.rows, self.cols
                        )));
                    }
                    if !seen.insert((t.src, t.dst)) {
                        return Err(shape_err(format!(
                            "duplicate triple ({}, {})",
                            t.src, t.dst
                        )));
                    }
                }
                Ok(())
            }
        }
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self.storage, Storage::Sparse(_))
    }

    /// Stored weight entries (dense: every cell, sparse: every triple).
    pub fn num_weights(&self) -> usize {
        match &self.storage {
            Storage::Dense(d) => d.len(),
            Storage::Sparse(t) => t.len(),
        }
    }

    pub fn nnz(&self) -> usize {
        self.num_weights()
    }

    pub fn density(&self) -> f64 {
        let cells = self.rows * self.cols;
        if cells == 0 {
            0.0
        } else {
            self.nnz() as f64 / cells as f64
        }
    }

    /// Value of stored entry `k` (see [`Linear::num_weights`]).
    pub fn weight(&self, k: usize) -> T {
        match &self.storage {
            Storage::Dense(d) => d[k],
            Storage::Sparse(t) => t[k].weight,
        }
    }

    pub fn weight_mut(&mut self, k: usize) -> &mut T {
        match &mut self.storage {
            Storage::Dense(d) => &mut d[k],
            Storage::Sparse(t) => &mut t[k].weight,
        }
    }

    /// `(src, dst)` position of stored entry `k`.
    pub fn position(&self, k: usize) -> (usize, usize) {
        match &self.storage {
            Storage::Dense(_) => (k / self.cols, k % self.cols),
            Storage::Sparse(t) => (t[k].src as usize, t[k].dst as usize),
        }
    }

    /// Row-major dense copy of the weights.
    pub fn to_dense_weights(&self) -> Vec<T> {
        match &self.storage {
            Storage::Dense(d) => d.clone(),
            Storage::Sparse(ts) => {
                let mut d = vec![T::zero(); self.rows * self.cols];
                for t in ts {
                    d[t.src as usize * self.cols + t.dst as usize] = t.weight;
                }
                d
            }
        }
    }

    /// Triple stream in storage order (dense storage yields every cell in
    /// source-major order).
    pub fn to_sparse(&self) -> SparseWeightMatrix<T> {
        let triples = match &self.storage {
            Storage::Dense(d) => d
                .iter()
                .enumerate()
                .map(|(k, &w)| Triple {
                    src: (k / self.cols) as u32,
                    dst: (k % self.cols) as u32,
                    weight: w,
                })
                .collect(),
            Storage::Sparse(t) => t.clone(),
        };
        SparseWeightMatrix {
            rows: self.rows,
            cols: self.cols,
            triples,
            bias: self.bias.clone(),
        }
    }

    /// Keeps entries with `|w| >= threshold`; the bias is never pruned.
    pub fn pruned(&self, threshold: f64) -> Self {
        let sparse = self.to_sparse();
        let triples = sparse
            .triples
            .into_iter()
            .filter(|t| t.weight.abs().as_f64() >= threshold)
            .collect();
        Self {
            rows: self.rows,
            cols: self.cols,
            storage: Storage::Sparse(triples),
            bias: self.bias.clone(),
        }
    }

    /// `y = x·W + b`: products accumulate per output in storage order, then
    /// the bias is added.
    pub fn apply_into(&self, x: &[T], y: &mut [T]) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(y.len(), self.cols);
        y.fill(T::zero());
        match &self.storage {
            Storage::Dense(d) => {
                for (i, &xi) in x.iter().enumerate() {
                    let row = &d[i * self.cols..(i + 1) * self.cols];
                    for (yj, &w) in y.iter_mut().zip(row) {
                        *yj += xi * w;
                    }
                }
            }
            Storage::Sparse(ts) => {
                for t in ts {
                    y[t.dst as usize] += x[t.src as usize] * t.weight;
                }
            }
        }
        for (yj, &b) in y.iter_mut().zip(&self.bias) {
            *yj += b;
        }
    }

    pub fn apply(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.cols];
        self.apply_into(x, &mut y);
        y
    }

    /// `dx = W·dy` accumulated into `dx`.
    pub fn backprop_input(&self, dy: &[T], dx: &mut [T]) {
        match &self.storage {
            Storage::Dense(d) => {
                for (i, dxi) in dx.iter_mut().enumerate() {
                    let row = &d[i * self.cols..(i + 1) * self.cols];
                    let mut acc = T::zero();
                    for (&w, &g) in row.iter().zip(dy) {
                        acc += w * g;
                    }
                    *dxi += acc;
                }
            }
            Storage::Sparse(ts) => {
                for t in ts {
                    dx[t.src as usize] += t.weight * dy[t.dst as usize];
                }
            }
        }
    }

    pub fn cast<U: Real>(&self) -> Linear<U> {
        let storage = match &self.storage {
            Storage::Dense(d) => Storage::Dense(d.iter().map(|v| v.cast()).collect()),
            Storage::Sparse(ts) => Storage::Sparse(
                ts.iter()
                    .map(|t| Triple {
                        src: t.src,
                        dst: t.dst,
                        weight: t.weight.cast(),
                    })
                    .collect(),
            ),
        };
        Linear {
            rows: self.rows,
            cols: self.cols,
            storage,
            bias: self.bias.iter().map(|b| b.cast()).collect(),
        }
    }
}
