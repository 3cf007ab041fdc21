//! Grid-graph representation of an image.
//!
//! Every pixel is a cell on a `width × height` grid. Cells that survive input
//! pruning become vertices; vertices are joined to their up/down/left/right
//! neighbours when both ends are alive. Pruned cells stay in the grid as dead
//! placeholders so that pooling windows and the flatten layout keep their
//! positions.

use crate::features::{FeatureMatrix, Layout};
use crate::image::Image;
use crate::real::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct GridGraph {
    width: usize,
    height: usize,
    alive: Vec<bool>,
    vertex_cell: Vec<usize>,
    cell_vertex: Vec<Option<usize>>,
    /// Layer-0 scalar feature per vertex.
    features: Vec<f32>,
    /// Closed neighbourhood (neighbours plus the vertex itself) in ascending
    /// cell order, CSR-packed.
    closed_offsets: Vec<usize>,
    closed: Vec<usize>,
}

/// Mapping produced by grid pooling: the coarse graph plus, for each coarse
/// vertex, its alive fine members in ascending cell order.
#[derive(Debug, Clone)]
pub struct Coarsening {
    pub graph: GridGraph,
    pub members: Vec<Vec<usize>>,
}

/// Converts `image` into a grid graph, pruning every pixel below `i_vertex`.
/// `i_vertex = 0` keeps every cell.
pub fn build_graph(image: &Image, i_vertex: f32) -> GridGraph {
    let alive: Vec<bool> = image.pixels.iter().map(|&p| p >= i_vertex).collect();
    GridGraph::from_mask(image.width, image.height, alive, &image.pixels)
}

impl GridGraph {
    /// Builds a graph from an alive mask. `cell_features` holds one value per
    /// cell; entries of dead cells are ignored.
    pub fn from_mask(width: usize, height: usize, alive: Vec<bool>, cell_features: &[f32]) -> Self {
        assert_eq!(alive.len(), width * height, "mask size");
        assert_eq!(cell_features.len(), width * height, "feature size");
        let vertex_cell: Vec<usize> = (0..alive.len()).filter(|&c| alive[c]).collect();
        Self::with_order(width, height, alive, vertex_cell, cell_features)
    }

    fn with_order(
        width: usize,
        height: usize,
        alive: Vec<bool>,
        vertex_cell: Vec<usize>,
        cell_features: &[f32],
    ) -> Self {
        let mut cell_vertex = vec![None; width * height];
        for (v, &c) in vertex_cell.iter().enumerate() {
            cell_vertex[c] = Some(v);
        }
        let features = vertex_cell.iter().map(|&c| cell_features[c]).collect();
        let mut closed_offsets = Vec::with_capacity(vertex_cell.len() + 1);
        let mut closed = Vec::with_capacity(vertex_cell.len() * 5);
        closed_offsets.push(0);
        for &cell in &vertex_cell {
            let (x, y) = (cell % width, cell / width);
            let mut push = |c: usize| {
                if let Some(u) = cell_vertex[c] {
                    closed.push(u);
                }
            };
            if y > 0 {
                push(cell - width);
            }
            if x > 0 {
                push(cell - 1);
            }
            push(cell);
            if x + 1 < width {
                push(cell + 1);
            }
            if y + 1 < height {
                push(cell + width);
            }
            closed_offsets.push(closed.len());
        }
        Self {
            width,
            height,
            alive,
            vertex_cell,
            cell_vertex,
            features,
            closed_offsets,
            closed,
        }
    }

    /// Same graph with vertex storage reordered: vertex `i` of the result is
    /// vertex `order[i]` of `self`. Grid positions are unchanged.
    pub fn relabeled(&self, order: &[usize]) -> Self {
        assert_eq!(
            order.len(),
            self.num_vertices(),
            "order must be a permutation"
        );
        let mut seen = vec![false; order.len()];
        for &o in order {
            assert!(
                !std::mem::replace(&mut seen[o], true),
                "order must be a permutation"
            );
        }
        let mut cell_features = vec![0.0; self.num_cells()];
        for (v, &c) in self.vertex_cell.iter().enumerate() {
            cell_features[c] = self.features[v];
        }
        let vertex_cell = order.iter().map(|&o| self.vertex_cell[o]).collect();
        Self::with_order(
            self.width,
            self.height,
            self.alive.clone(),
            vertex_cell,
            &cell_features,
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_cells(&self) -> usize {
        self.width * self.height
    }

    pub fn num_vertices(&self) -> usize {
        self.vertex_cell.len()
    }

    /// Undirected edge count.
    pub fn num_edges(&self) -> usize {
        (self.closed.len() - self.num_vertices()) / 2
    }

    pub fn alive(&self) -> &[bool] {
        &self.alive
    }

    pub fn is_alive(&self, cell: usize) -> bool {
        self.alive[cell]
    }

    pub fn vertex_cell(&self, v: usize) -> usize {
        self.vertex_cell[v]
    }

    pub fn cell_vertex(&self, cell: usize) -> Option<usize> {
        self.cell_vertex[cell]
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    /// Layer-0 features as a single-channel vertex-major matrix.
    pub fn input_features<T: Real>(&self) -> FeatureMatrix<T> {
        FeatureMatrix::from_values(
            self.num_vertices(),
            1,
            Layout::VertexMajor,
            self.features.iter().map(|&f| T::of(f as f64)).collect(),
        )
        .expect("one feature per vertex")
    }

    /// `v` and its neighbours, in ascending cell order.
    #[inline]
    pub fn closed_neighborhood(&self, v: usize) -> &[usize] {
        &self.closed[self.closed_offsets[v]..self.closed_offsets[v + 1]]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.closed_offsets[v + 1] - self.closed_offsets[v] - 1
    }

    pub fn neighbors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.closed_neighborhood(v)
            .iter()
            .copied()
            .filter(move |&u| u != v)
    }

    /// Vertex ids visited in ascending cell order.
    pub fn vertices_in_cell_order(&self) -> impl Iterator<Item = usize> + '_ {
        self.cell_vertex.iter().filter_map(|v| *v)
    }

    /// Undirected edges `(u, v)` with `cell(u) < cell(v)`, in cell order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.num_edges());
        for u in self.vertices_in_cell_order() {
            let cu = self.vertex_cell[u];
            for &w in self.closed_neighborhood(u) {
                if self.vertex_cell[w] > cu {
                    out.push((u, w));
                }
            }
        }
        out
    }

    /// Grid max-pooling structure: windows of `size × size` cells placed every
    /// `stride` cells, giving a `⌈W/stride⌉ × ⌈H/stride⌉` coarse grid. A coarse
    /// cell is alive iff at least one member is alive.
    pub fn coarsen(&self, size: usize, stride: usize) -> Coarsening {
        assert!(
            size >= 1 && stride >= 1,
            "pool size and stride must be positive"
        );
        let cw = self.width.div_ceil(stride);
        let ch = self.height.div_ceil(stride);
        let mut alive = vec![false; cw * ch];
        let mut cell_features = vec![0.0f32; cw * ch];
        let mut cell_members: Vec<Vec<usize>> = vec![Vec::new(); cw * ch];
        for cy in 0..ch {
            for cx in 0..cw {
                let cc = cy * cw + cx;
                let members = &mut cell_members[cc];
                for y in cy * stride..(cy * stride + size).min(self.height) {
                    for x in cx * stride..(cx * stride + size).min(self.width) {
                        if let Some(v) = self.cell_vertex[y * self.width + x] {
                            members.push(v);
                        }
                    }
                }
                if let Some(&first) = members.first() {
                    alive[cc] = true;
                    cell_features[cc] = members
                        .iter()
                        .map(|&m| self.features[m])
                        .fold(self.features[first], f32::max);
                }
            }
        }
        let graph = GridGraph::from_mask(cw, ch, alive, &cell_features);
        let members = graph
            .vertex_cell
            .iter()
            .map(|&c| std::mem::take(&mut cell_members[c]))
            .collect();
        Coarsening { graph, members }
    }
}
