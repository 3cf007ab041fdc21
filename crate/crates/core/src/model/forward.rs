use std::borrow::Cow;

use crate::activation::SigmoidMode;
use crate::error::{shape_err, Result};
use crate::features::{FeatureMatrix, Layout};
use crate::graph::GridGraph;
use crate::real::Real;

use super::ops::{attention_module, flatten_pad, graphsage_forward, grid_max_pool, mlp_head};
use super::{Layer, ModelSpec};

#[derive(Debug, Clone, Copy, Default)]
pub struct ForwardOptions {
    pub sigmoid: SigmoidMode,
    pub trace: bool,
}

/// Output of one layer. Vector stages (flatten, MLP) are stored as a single
/// vertex-major row.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry<T> {
    pub layer: usize,
    pub name: String,
    pub features: FeatureMatrix<T>,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput<T> {
    pub logits: Vec<T>,
    pub trace: Vec<TraceEntry<T>>,
}

fn as_row<T: Real>(v: &[T]) -> FeatureMatrix<T> {
    FeatureMatrix::from_values(1, v.len(), Layout::VertexMajor, v.to_vec()).expect("row")
}

/// Runs the whole pipeline on one input graph.
pub fn forward<T: Real>(
    model: &ModelSpec<T>,
    graph: &GridGraph,
    opts: ForwardOptions,
) -> Result<ForwardOutput<T>> {
    if graph.width() != model.input_width || graph.height() != model.input_height {
        return Err(shape_err(format!(
            "model expects {}x{} input, graph is {}x{}",
            model.input_width,
            model.input_height,
            graph.width(),
            graph.height()
        )));
    }
    let mut g: Cow<GridGraph> = Cow::Borrowed(graph);
    let mut h: FeatureMatrix<T> = graph.input_features();
    let mut vector: Option<Vec<T>> = None;
    let mut trace = Vec::new();
    for (i, layer) in model.layers.iter().enumerate() {
        match layer {
            Layer::Gnn(l) => h = graphsage_forward(&g, &h, l)?,
            Layer::Pool(p) => {
                let out = grid_max_pool(&g, &h, p.size, p.stride)?;
                h = out.features;
                g = Cow::Owned(out.coarse.graph);
            }
            Layer::Attention(a) => h = attention_module(&g, &h, a, opts.sigmoid)?,
            Layer::Flatten => vector = Some(flatten_pad(&g, &h)?),
            Layer::Mlp(m) => {
                let x = vector
                    .take()
                    .ok_or_else(|| shape_err("MLP head without flatten"))?;
                vector = Some(mlp_head(&x, &m.layers)?);
            }
        }
        if opts.trace {
            let features = match &vector {
                Some(v) => as_row(v),
                None => h.clone(),
            };
            trace.push(TraceEntry {
                layer: i,
                name: model.layer_name(i),
                features,
            });
        }
    }
    let logits = vector.ok_or_else(|| shape_err("model produced no logits"))?;
    Ok(ForwardOutput { logits, trace })
}

impl<T: Real> ModelSpec<T> {
    pub fn logits(&self, graph: &GridGraph) -> Result<Vec<T>> {
        Ok(forward(self, graph, ForwardOptions::default())?.logits)
    }

    pub fn predict(&self, graph: &GridGraph) -> Result<usize> {
        Ok(argmax(&self.logits(graph)?))
    }
}

/// Index of the largest value, first on ties.
pub fn argmax<T: Real>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
