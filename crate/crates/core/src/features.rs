use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::real::Real;

/// Storage order of a feature matrix. Aggregation kernels stream whole vertex
/// vectors (vertex-major); update kernels stream one feature across a batch
/// of vertices (feature-major).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Layout {
    VertexMajor,
    FeatureMajor,
}

impl Layout {
    pub fn other(self) -> Self {
        match self {
            Layout::VertexMajor => Layout::FeatureMajor,
            Layout::FeatureMajor => Layout::VertexMajor,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix<T> {
    layout: Layout,
    num_vertices: usize,
    channels: usize,
    values: Vec<T>,
}

impl<T: Real> FeatureMatrix<T> {
    pub fn zeros(num_vertices: usize, channels: usize, layout: Layout) -> Self {
        Self {
            layout,
            num_vertices,
            channels,
            values: vec![T::zero(); num_vertices * channels],
        }
    }

    pub fn from_values(
        num_vertices: usize,
        channels: usize,
        layout: Layout,
        values: Vec<T>,
    ) -> Result<Self> {
        if values.len() != num_vertices * channels {
            return Err(shape_err(format!(
                "{} values for {num_vertices} vertices x {channels} channels",
                values.len()
            )));
        }
        Ok(Self {
            layout,
            num_vertices,
            channels,
            values,
        })
    }

    /// Builds a vertex-major matrix from one row per vertex.
    pub fn from_rows(rows: &[Vec<T>], channels: usize) -> Result<Self> {
        let mut values = Vec::with_capacity(rows.len() * channels);
        for (v, row) in rows.iter().enumerate() {
            if row.len() != channels {
                return Err(shape_err(format!("vertex {v} has {} channels", row.len())));
            }
            values.extend_from_slice(row);
        }
        Ok(Self {
            layout: Layout::VertexMajor,
            num_vertices: rows.len(),
            channels,
            values,
        })
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn num_vertices(&self) -> usize {
        self.num_vertices
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    #[inline]
    fn offset(&self, vertex: usize, channel: usize) -> usize {
        match self.layout {
            Layout::VertexMajor => vertex * self.channels + channel,
            Layout::FeatureMajor => channel * self.num_vertices + vertex,
        }
    }

    #[inline]
    pub fn get(&self, vertex: usize, channel: usize) -> T {
        self.values[self.offset(vertex, channel)]
    }

    #[inline]
    pub fn set(&mut self, vertex: usize, channel: usize, value: T) {
        let o = self.offset(vertex, channel);
        self.values[o] = value;
    }

    pub fn expect_layout(&self, layout: Layout) -> Result<()> {
        if self.layout == layout {
            Ok(())
        } else {
            Err(Error::Layout {
                expected: layout,
                found: self.layout,
            })
        }
    }

    /// Feature vector of `vertex`; vertex-major only.
    #[inline]
    pub fn row(&self, vertex: usize) -> &[T] {
        debug_assert_eq!(self.layout, Layout::VertexMajor);
        &self.values[vertex * self.channels..(vertex + 1) * self.channels]
    }

    #[inline]
    pub fn row_mut(&mut self, vertex: usize) -> &mut [T] {
        debug_assert_eq!(self.layout, Layout::VertexMajor);
        let c = self.channels;
        &mut self.values[vertex * c..(vertex + 1) * c]
    }

    /// One feature across all vertices; feature-major only.
    #[inline]
    pub fn feature(&self, channel: usize) -> &[T] {
        debug_assert_eq!(self.layout, Layout::FeatureMajor);
        let n = self.num_vertices;
        &self.values[channel * n..(channel + 1) * n]
    }

    #[inline]
    pub fn feature_mut(&mut self, channel: usize) -> &mut [T] {
        debug_assert_eq!(self.layout, Layout::FeatureMajor);
        let n = self.num_vertices;
        &mut self.values[channel * n..(channel + 1) * n]
    }

    /// Exact transpose into the other layout.
    pub fn transposed(&self) -> Self {
        let (n, c) = (self.num_vertices, self.channels);
        let mut values = Vec::with_capacity(self.values.len());
        match self.layout {
            Layout::VertexMajor => {
                for ch in 0..c {
                    values.extend((0..n).map(|v| self.values[v * c + ch]));
                }
            }
            Layout::FeatureMajor => {
                for v in 0..n {
                    values.extend((0..c).map(|ch| self.values[ch * n + v]));
                }
            }
        }
        Self {
            layout: self.layout.other(),
            num_vertices: n,
            channels: c,
            values,
        }
    }

    pub fn to_layout(&self, layout: Layout) -> Self {
        if self.layout == layout {
            self.clone()
        } else {
            self.transposed()
        }
    }

    pub fn cast<U: Real>(&self) -> FeatureMatrix<U> {
        FeatureMatrix {
            layout: self.layout,
            num_vertices: self.num_vertices,
            channels: self.channels,
            values: self.values.iter().map(|v| v.cast()).collect(),
        }
    }
}
