//! Per-layer reference operators. Sums that depend on vertex order run in
//! ascending grid-cell order, so results do not depend on how vertices happen
//! to be numbered.

use crate::activation::{relu, SigmoidMode};
use crate::error::{shape_err, Result};
use crate::features::{FeatureMatrix, Layout};
use crate::graph::{Coarsening, GridGraph};
use crate::real::Real;
use crate::weights::Linear;

use super::{AttentionLayer, GnnLayer};

fn check_vertex_major<T: Real>(graph: &GridGraph, h: &FeatureMatrix<T>) -> Result<()> {
    h.expect_layout(Layout::VertexMajor)?;
    if h.num_vertices() != graph.num_vertices() {
        return Err(shape_err(format!(
            "{} feature rows for a graph with {} vertices",
            h.num_vertices(),
            graph.num_vertices()
        )));
    }
    Ok(())
}

/// `z_i = mean(h_j : j ∈ N(i) ∪ {i})`, alive neighbours only.
pub fn mean_aggregate<T: Real>(
    graph: &GridGraph,
    h: &FeatureMatrix<T>,
) -> Result<FeatureMatrix<T>> {
    check_vertex_major(graph, h)?;
    let c = h.channels();
    let mut z = FeatureMatrix::zeros(graph.num_vertices(), c, Layout::VertexMajor);
    for v in 0..graph.num_vertices() {
        let nb = graph.closed_neighborhood(v);
        let out = z.row_mut(v);
        for &u in nb {
            for (o, &x) in out.iter_mut().zip(h.row(u)) {
                *o += x;
            }
        }
        let n = T::of(nb.len() as f64);
        for o in out.iter_mut() {
            *o = *o / n;
        }
    }
    Ok(z)
}

pub fn graphsage_forward<T: Real>(
    graph: &GridGraph,
    h: &FeatureMatrix<T>,
    layer: &GnnLayer<T>,
) -> Result<FeatureMatrix<T>> {
    if h.channels() != layer.neighbor.rows || h.channels() != layer.root.rows {
        return Err(shape_err(format!(
            "GNN layer expects {} channels, input has {}",
            layer.neighbor.rows,
            h.channels()
        )));
    }
    let z = mean_aggregate(graph, h)?;
    let cn = layer.neighbor.cols;
    let mut out = FeatureMatrix::zeros(
        graph.num_vertices(),
        layer.out_channels(),
        Layout::VertexMajor,
    );
    for v in 0..graph.num_vertices() {
        let row = out.row_mut(v);
        layer.neighbor.apply_into(z.row(v), &mut row[..cn]);
        layer.root.apply_into(h.row(v), &mut row[cn..]);
        if layer.activation {
            row.iter_mut().for_each(|x| *x = relu(*x));
        }
    }
    Ok(out)
}

fn mlp_chain<T: Real>(layers: &[Linear<T>], x: &[T]) -> Vec<T> {
    let mut cur = x.to_vec();
    for (k, l) in layers.iter().enumerate() {
        cur = l.apply(&cur);
        if k + 1 < layers.len() {
            cur.iter_mut().for_each(|v| *v = relu(*v));
        }
    }
    cur
}

/// Global mean over alive vertices (zero vector on an empty graph).
pub(crate) fn global_mean<T: Real>(graph: &GridGraph, h: &FeatureMatrix<T>) -> Vec<T> {
    let mut m = vec![T::zero(); h.channels()];
    let n = graph.num_vertices();
    for v in graph.vertices_in_cell_order() {
        for (a, &x) in m.iter_mut().zip(h.row(v)) {
            *a += x;
        }
    }
    if n > 0 {
        let n = T::of(n as f64);
        m.iter_mut().for_each(|a| *a = *a / n);
    }
    m
}

/// `F_ch = sigmoid(MLP(mean_i h_i))`.
pub fn channel_attention<T: Real>(
    graph: &GridGraph,
    h: &FeatureMatrix<T>,
    mlp: &[Linear<T>],
    sigmoid: SigmoidMode,
) -> Result<Vec<T>> {
    check_vertex_major(graph, h)?;
    if mlp.first().map(|l| l.rows) != Some(h.channels())
        || mlp.last().map(|l| l.cols) != Some(h.channels())
    {
        return Err(shape_err("channel MLP must map c channels back to c"));
    }
    let pooled = global_mean(graph, h);
    Ok(mlp_chain(mlp, &pooled)
        .into_iter()
        .map(|x| sigmoid.apply(x))
        .collect())
}

/// `α_i = sigmoid(mean(N(i) ∪ {i})·w + b)`, one score per vertex.
pub fn spatial_attention<T: Real>(
    graph: &GridGraph,
    h: &FeatureMatrix<T>,
    spatial: &Linear<T>,
    sigmoid: SigmoidMode,
) -> Result<Vec<T>> {
    if spatial.rows != h.channels() || spatial.cols != 1 {
        return Err(shape_err(format!(
            "spatial weights {}x{} for {} channels",
            spatial.rows,
            spatial.cols,
            h.channels()
        )));
    }
    let z = mean_aggregate(graph, h)?;
    let mut s = [T::zero()];
    Ok((0..graph.num_vertices())
        .map(|v| {
            spatial.apply_into(z.row(v), &mut s);
            sigmoid.apply(s[0])
        })
        .collect())
}

/// `out_i = h_i + h_i ⊗ F_ch + α_i·h_i`, both terms computed from the input `h`.
pub fn attention_module<T: Real>(
    graph: &GridGraph,
    h: &FeatureMatrix<T>,
    layer: &AttentionLayer<T>,
    sigmoid: SigmoidMode,
) -> Result<FeatureMatrix<T>> {
    let f = channel_attention(graph, h, &layer.channel_mlp, sigmoid)?;
    let alpha = spatial_attention(graph, h, &layer.spatial, sigmoid)?;
    Ok(combine_attention(h, &f, &alpha))
}

pub(crate) fn combine_attention<T: Real>(
    h: &FeatureMatrix<T>,
    f: &[T],
    alpha: &[T],
) -> FeatureMatrix<T> {
    let mut out = h.clone();
    for (v, &a) in alpha.iter().enumerate() {
        for (x, &fc) in out.row_mut(v).iter_mut().zip(f) {
            let hv = *x;
            *x = hv + hv * fc + a * hv;
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct PoolOutput<T> {
    pub coarse: Coarsening,
    pub features: FeatureMatrix<T>,
    /// Winning fine vertex per (coarse vertex, channel), first member on ties.
    pub argmax: Vec<usize>,
}

/// Channelwise max over the alive members of each pooling window.
pub fn grid_max_pool<T: Real>(
    graph: &GridGraph,
    h: &FeatureMatrix<T>,
    size: usize,
    stride: usize,
) -> Result<PoolOutput<T>> {
    check_vertex_major(graph, h)?;
    let coarse = graph.coarsen(size, stride);
    let c = h.channels();
    let n = coarse.graph.num_vertices();
    let mut features = FeatureMatrix::zeros(n, c, Layout::VertexMajor);
    let mut argmax = vec![0usize; n * c];
    for (k, members) in coarse.members.iter().enumerate() {
        let first = members[0];
        let out = features.row_mut(k);
        out.copy_from_slice(h.row(first));
        argmax[k * c..(k + 1) * c].fill(first);
        for &m in &members[1..] {
            for (ch, &x) in h.row(m).iter().enumerate() {
                if x > out[ch] {
                    out[ch] = x;
                    argmax[k * c + ch] = m;
                }
            }
        }
    }
    Ok(PoolOutput {
        coarse,
        features,
        argmax,
    })
}

/// Row-major cell order, `channels` values per cell; dead cells are zero.
pub fn flatten_pad<T: Real>(graph: &GridGraph, h: &FeatureMatrix<T>) -> Result<Vec<T>> {
    check_vertex_major(graph, h)?;
    let c = h.channels();
    let mut out = vec![T::zero(); graph.num_cells() * c];
    for v in 0..graph.num_vertices() {
        let cell = graph.vertex_cell(v);
        out[cell * c..(cell + 1) * c].copy_from_slice(h.row(v));
    }
    Ok(out)
}

/// Affine layers with ReLU in between; the last layer is linear.
pub fn mlp_head<T: Real>(x: &[T], layers: &[Linear<T>]) -> Result<Vec<T>> {
    let mut d = x.len();
    for l in layers {
        if l.rows != d {
            return Err(shape_err(format!(
                "MLP layer expects {} inputs, got {d}",
                l.rows
            )));
        }
        d = l.cols;
    }
    Ok(mlp_chain(layers, x))
}
