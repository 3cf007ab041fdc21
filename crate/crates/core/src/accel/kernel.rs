//! Kernel descriptors and the lowering of a model plus input graph into an
//! ordered schedule.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::features::Layout;
use crate::graph::GridGraph;
use crate::model::{Layer, ModelSpec};
use crate::partition::{partition_vak, partition_vuk, BankAssignment, LevelPartitions};
use crate::weights::SparseWeightMatrix;

use super::AcceleratorConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum KernelKind {
    Vak,
    Vuk,
    Mtu,
    Elementwise,
}

impl KernelKind {
    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Vak => "VAK",
            KernelKind::Vuk => "VUK",
            KernelKind::Mtu => "MTU",
            KernelKind::Elementwise => "EW",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GatherOp {
    Acc,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PostOp {
    None,
    Relu,
    Sigmoid,
}

/// One message of an aggregation kernel: `weight · h[src]` sent to `dst`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub src: u32,
    pub dst: u32,
    pub weight: f32,
}

pub type BufferId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BufferSpec {
    pub num_vertices: usize,
    pub channels: usize,
    pub layout: Layout,
}

#[derive(Debug, Clone)]
pub struct VakKernel {
    /// Sorted by destination, then by source grid cell.
    pub edges: Arc<Vec<Edge>>,
    pub gather: GatherOp,
    /// Per-destination multiplier applied after gathering; mean aggregation
    /// ships `1/(deg+1)` here.
    pub dst_scale: Option<Arc<Vec<f32>>>,
    pub banks: Arc<BankAssignment>,
    pub channels: usize,
    pub input: BufferId,
    pub output: BufferId,
}

#[derive(Debug, Clone)]
pub struct VukKernel {
    pub weights: Arc<SparseWeightMatrix<f32>>,
    /// Owner bank of each weight destination column.
    pub banks: Arc<BankAssignment>,
    pub post: PostOp,
    pub num_vertices: usize,
    pub input: BufferId,
    pub output: BufferId,
    /// First output feature written. The two GNN branches fill disjoint
    /// ranges of one buffer.
    pub dst_offset: usize,
}

#[derive(Debug, Clone)]
pub struct MtuKernel {
    pub input: BufferId,
    pub output: BufferId,
    pub num_vertices: usize,
    pub channels: usize,
}

#[derive(Debug, Clone)]
pub enum ElementOp {
    /// Copy with an activation (the GNN concat/ReLU fold).
    Activate(PostOp),
    /// `h_i ⊗ f` with `f` a `1 × c` buffer.
    ChannelScale { scale: BufferId },
    /// `α_i · h_i` with `α` an `n × 1` buffer.
    VertexScale { scale: BufferId },
    /// `input + a + b`.
    Add3 { a: BufferId, b: BufferId },
    /// Zero-padded row-major scatter into a single feature-major vector.
    Flatten {
        cells: Arc<Vec<usize>>,
        num_cells: usize,
    },
}

#[derive(Debug, Clone)]
pub struct ElementwiseKernel {
    pub op: ElementOp,
    pub input: BufferId,
    pub output: BufferId,
    pub num_vertices: usize,
    pub channels: usize,
}

#[derive(Debug, Clone)]
pub enum KernelOp {
    Vak(VakKernel),
    Vuk(VukKernel),
    Mtu(MtuKernel),
    Elementwise(ElementwiseKernel),
}

#[derive(Debug, Clone)]
pub struct KernelDescriptor {
    /// Index of the model layer this kernel belongs to.
    pub layer: usize,
    pub label: &'static str,
    pub op: KernelOp,
}

fn ceil_div(a: usize, b: usize) -> u64 {
    a.div_ceil(b) as u64
}

/// `⌈|ℰ|/p⌉ · ⌈c/q⌉`
pub fn vak_cycles(edges: usize, channels: usize, cfg: &AcceleratorConfig) -> u64 {
    ceil_div(edges, cfg.pipelines) * ceil_div(channels, cfg.pes)
}

/// `⌈|𝒱|/q⌉ · ⌈nnz/p⌉`
pub fn vuk_cycles(vertices: usize, nnz: usize, cfg: &AcceleratorConfig) -> u64 {
    ceil_div(vertices, cfg.pes) * ceil_div(nnz, cfg.pipelines)
}

/// `0` when transposes are overlapped, else `⌈|𝒱|·c/(p·q)⌉`.
pub fn mtu_cycles(vertices: usize, channels: usize, cfg: &AcceleratorConfig) -> u64 {
    match cfg.mtu_cost {
        super::MtuCost::Free => 0,
        super::MtuCost::Bandwidth => ceil_div(vertices * channels, cfg.pipelines * cfg.pes),
    }
}

/// `⌈|𝒱|/p⌉ · ⌈c/q⌉`, priced like an aggregation pass.
pub fn elementwise_cycles(vertices: usize, channels: usize, cfg: &AcceleratorConfig) -> u64 {
    ceil_div(vertices, cfg.pipelines) * ceil_div(channels, cfg.pes)
}

impl KernelDescriptor {
    pub fn kind(&self) -> KernelKind {
        match self.op {
            KernelOp::Vak(_) => KernelKind::Vak,
            KernelOp::Vuk(_) => KernelKind::Vuk,
            KernelOp::Mtu(_) => KernelKind::Mtu,
            KernelOp::Elementwise(_) => KernelKind::Elementwise,
        }
    }

    /// Edges for VAK, nonzeros for VUK, matrix elements otherwise.
    pub fn work_items(&self) -> usize {
        match &self.op {
            KernelOp::Vak(k) => k.edges.len(),
            KernelOp::Vuk(k) => k.weights.nnz(),
            KernelOp::Mtu(k) => k.num_vertices * k.channels,
            KernelOp::Elementwise(k) => k.num_vertices * k.channels,
        }
    }

    /// Analytic cycle count.
    pub fn cycles(&self, cfg: &AcceleratorConfig) -> u64 {
        match &self.op {
            KernelOp::Vak(k) => vak_cycles(k.edges.len(), k.channels, cfg),
            KernelOp::Vuk(k) => vuk_cycles(k.num_vertices, k.weights.nnz(), cfg),
            KernelOp::Mtu(k) => mtu_cycles(k.num_vertices, k.channels, cfg),
            KernelOp::Elementwise(k) => elementwise_cycles(k.num_vertices, k.channels, cfg),
        }
    }

    /// Analytic per-bank message counts (VAK and VUK only).
    pub fn bank_loads(&self, cfg: &AcceleratorConfig) -> Vec<usize> {
        match &self.op {
            KernelOp::Vak(k) => {
                let mut loads = vec![0; k.banks.num_banks];
                if k.channels > 0 {
                    for e in k.edges.iter() {
                        loads[k.banks.owner[e.dst as usize] as usize] += 1;
                    }
                }
                loads
            }
            KernelOp::Vuk(k) => {
                let batches = k.num_vertices.div_ceil(cfg.pes);
                k.banks.loads.iter().map(|l| l * batches).collect()
            }
            _ => Vec::new(),
        }
    }
}

/// Weight blocks converted to triple streams with their LPT column banks,
/// aligned with [`ModelSpec::linears`]. Built once per model and shared.
#[derive(Debug, Clone)]
pub struct CompiledModel {
    pub model: ModelSpec<f32>,
    pub config: AcceleratorConfig,
    pub blocks: Vec<(Arc<SparseWeightMatrix<f32>>, Arc<BankAssignment>)>,
}

impl CompiledModel {
    pub fn new(model: &ModelSpec<f32>, config: AcceleratorConfig) -> Result<Self> {
        config.validate()?;
        model
            .validate()
            .map_err(|e| Error::Lowering(e.to_string()))?;
        let blocks = model
            .linears()
            .into_iter()
            .map(|l| {
                let w = l.to_sparse();
                let banks = partition_vuk(&w, config.pipelines);
                (Arc::new(w), Arc::new(banks))
            })
            .collect();
        Ok(Self {
            model: model.clone(),
            config,
            blocks,
        })
    }
}

/// Ordered kernels plus the buffers they read and write.
#[derive(Debug, Clone)]
pub struct Schedule {
    pub kernels: Vec<KernelDescriptor>,
    pub buffers: Vec<BufferSpec>,
    /// Host-loaded input features, vertex-major and feature-major. With one
    /// input channel both are the same array.
    pub input: (BufferId, BufferId),
    /// Output buffer of each model layer.
    pub layer_outputs: Vec<BufferId>,
    pub layer_names: Vec<String>,
    pub logits: BufferId,
    /// Host time spent coarsening and partitioning, in microseconds.
    pub preprocessing_us: f64,
}

struct Builder {
    kernels: Vec<KernelDescriptor>,
    buffers: Vec<BufferSpec>,
    transposed: HashMap<BufferId, BufferId>,
    layer: usize,
}

impl Builder {
    fn buffer(&mut self, num_vertices: usize, channels: usize, layout: Layout) -> BufferId {
        self.buffers.push(BufferSpec {
            num_vertices,
            channels,
            layout,
        });
        self.buffers.len() - 1
    }

    fn push(&mut self, label: &'static str, op: KernelOp) {
        self.kernels.push(KernelDescriptor {
            layer: self.layer,
            label,
            op,
        });
    }

    /// `id` in `layout`, inserting a transpose if it lives in the other one.
    fn ensure(&mut self, id: BufferId, layout: Layout) -> BufferId {
        let spec = self.buffers[id];
        if spec.layout == layout {
            return id;
        }
        if let Some(&t) = self.transposed.get(&id) {
            return t;
        }
        let out = self.buffer(spec.num_vertices, spec.channels, layout);
        self.push(
            "transpose",
            KernelOp::Mtu(MtuKernel {
                input: id,
                output: out,
                num_vertices: spec.num_vertices,
                channels: spec.channels,
            }),
        );
        self.transposed.insert(id, out);
        self.transposed.insert(out, id);
        out
    }

    fn vuk(
        &mut self,
        label: &'static str,
        block: &(Arc<SparseWeightMatrix<f32>>, Arc<BankAssignment>),
        input: BufferId,
        output: BufferId,
        dst_offset: usize,
        post: PostOp,
    ) {
        let num_vertices = self.buffers[input].num_vertices;
        self.push(
            label,
            KernelOp::Vuk(VukKernel {
                weights: block.0.clone(),
                banks: block.1.clone(),
                post,
                num_vertices,
                input,
                output,
                dst_offset,
            }),
        );
    }

    fn elementwise(
        &mut self,
        label: &'static str,
        op: ElementOp,
        input: BufferId,
        output: BufferId,
    ) {
        let spec = self.buffers[input];
        self.push(
            label,
            KernelOp::Elementwise(ElementwiseKernel {
                op,
                input,
                output,
                num_vertices: spec.num_vertices,
                channels: spec.channels,
            }),
        );
    }
}

/// Closed-neighbourhood edges and their per-destination `1/(deg+1)` scale.
type Neighborhood = (Arc<Vec<Edge>>, Arc<Vec<f32>>);

/// Mean-aggregation stream of one graph level: every vertex receives its
/// closed neighbourhood and is scaled by `1/(deg+1)`.
struct LevelStreams {
    graph: GridGraph,
    banks: Arc<BankAssignment>,
    neighborhood: Option<Neighborhood>,
}

impl LevelStreams {
    fn neighborhood(&mut self) -> Neighborhood {
        let g = &self.graph;
        self.neighborhood
            .get_or_insert_with(|| {
                let mut edges = Vec::with_capacity(g.num_vertices() + 2 * g.num_edges());
                let mut scale = Vec::with_capacity(g.num_vertices());
                for v in 0..g.num_vertices() {
                    let nb = g.closed_neighborhood(v);
                    edges.extend(nb.iter().map(|&u| Edge {
                        src: u as u32,
                        dst: v as u32,
                        weight: 1.0,
                    }));
                    scale.push(1.0 / nb.len() as f32);
                }
                (Arc::new(edges), Arc::new(scale))
            })
            .clone()
    }
}

/// Lowers `compiled` for one input graph. Aggregation partitions are
/// computed here unless supplied.
pub fn lower(
    compiled: &CompiledModel,
    graph: &GridGraph,
    partitions: Option<&LevelPartitions>,
) -> Result<Schedule> {
    let model = &compiled.model;
    if graph.width() != model.input_width || graph.height() != model.input_height {
        return Err(Error::Lowering(format!(
            "model expects {}x{} input, graph is {}x{}",
            model.input_width,
            model.input_height,
            graph.width(),
            graph.height()
        )));
    }
    let p = compiled.config.pipelines;
    let start = Instant::now();
    let level_banks = |k: usize, g: &GridGraph| -> Result<Arc<BankAssignment>> {
        match partitions {
            None => Ok(Arc::new(partition_vak(g, p))),
            Some(parts) => {
                let b = parts
                    .levels
                    .get(k)
                    .ok_or_else(|| Error::Partition(format!("no partition for level {k}")))?;
                if b.num_dst() != g.num_vertices() {
                    return Err(Error::Partition(format!(
                        "level {k} partition covers {} destinations, graph has {} vertices",
                        b.num_dst(),
                        g.num_vertices()
                    )));
                }
                Ok(Arc::new(b.clone()))
            }
        }
    };
    let mut level = LevelStreams {
        graph: graph.clone(),
        banks: level_banks(0, graph)?,
        neighborhood: None,
    };
    let mut level_index = 0;
    let mut preprocessing = start.elapsed();

    let mut b = Builder {
        kernels: Vec::new(),
        buffers: Vec::new(),
        transposed: HashMap::new(),
        layer: 0,
    };
    let n0 = graph.num_vertices();
    let input_vm = b.buffer(n0, 1, Layout::VertexMajor);
    let input_fm = b.buffer(n0, 1, Layout::FeatureMajor);
    b.transposed.insert(input_vm, input_fm);
    b.transposed.insert(input_fm, input_vm);

    let mut h = input_vm;
    let mut layer_outputs = Vec::with_capacity(model.layers.len());
    let mut block = 0usize;
    for (i, layer) in model.layers.iter().enumerate() {
        b.layer = i;
        let n = level.graph.num_vertices();
        match layer {
            Layer::Gnn(l) => {
                let c = b.buffers[h].channels;
                let (edges, scale) = level.neighborhood();
                let z = b.buffer(n, c, Layout::VertexMajor);
                b.push(
                    "aggregate",
                    KernelOp::Vak(VakKernel {
                        edges,
                        gather: GatherOp::Acc,
                        dst_scale: Some(scale),
                        banks: level.banks.clone(),
                        channels: c,
                        input: h,
                        output: z,
                    }),
                );
                let z_fm = b.ensure(z, Layout::FeatureMajor);
                let h_fm = b.ensure(h, Layout::FeatureMajor);
                let out_fm = b.buffer(n, l.out_channels(), Layout::FeatureMajor);
                b.vuk(
                    "neighbor",
                    &compiled.blocks[block],
                    z_fm,
                    out_fm,
                    0,
                    PostOp::None,
                );
                b.vuk(
                    "self",
                    &compiled.blocks[block + 1],
                    h_fm,
                    out_fm,
                    l.neighbor.cols,
                    PostOp::None,
                );
                block += 2;
                let out_vm = b.ensure(out_fm, Layout::VertexMajor);
                let act = b.buffer(n, l.out_channels(), Layout::VertexMajor);
                let post = if l.activation {
                    PostOp::Relu
                } else {
                    PostOp::None
                };
                b.elementwise("concat_relu", ElementOp::Activate(post), out_vm, act);
                h = act;
            }
            Layer::Pool(pool) => {
                let c = b.buffers[h].channels;
                let t = Instant::now();
                let coarse = level.graph.coarsen(pool.size, pool.stride);
                level_index += 1;
                let banks = level_banks(level_index, &coarse.graph)?;
                let mut edges = Vec::with_capacity(n);
                for (k, members) in coarse.members.iter().enumerate() {
                    edges.extend(members.iter().map(|&m| Edge {
                        src: m as u32,
                        dst: k as u32,
                        weight: 1.0,
                    }));
                }
                preprocessing += t.elapsed();
                let out = b.buffer(coarse.graph.num_vertices(), c, Layout::VertexMajor);
                b.push(
                    "max_pool",
                    KernelOp::Vak(VakKernel {
                        edges: Arc::new(edges),
                        gather: GatherOp::Max,
                        dst_scale: None,
                        banks: banks.clone(),
                        channels: c,
                        input: h,
                        output: out,
                    }),
                );
                level = LevelStreams {
                    graph: coarse.graph,
                    banks,
                    neighborhood: None,
                };
                h = out;
            }
            Layer::Attention(a) => {
                let c = b.buffers[h].channels;
                let cells: Vec<usize> = level.graph.vertices_in_cell_order().collect();
                let edges: Vec<Edge> = cells
                    .iter()
                    .map(|&v| Edge {
                        src: v as u32,
                        dst: 0,
                        weight: 1.0,
                    })
                    .collect();
                let inv = 1.0 / n.max(1) as f32;
                let mut loads = vec![0; p];
                loads[0] = n;
                let banks = Arc::new(BankAssignment {
                    num_banks: p,
                    owner: vec![0],
                    loads,
                });
                let m = b.buffer(1, c, Layout::VertexMajor);
                b.push(
                    "global_mean",
                    KernelOp::Vak(VakKernel {
                        edges: Arc::new(edges),
                        gather: GatherOp::Acc,
                        dst_scale: Some(Arc::new(vec![inv])),
                        banks,
                        channels: c,
                        input: h,
                        output: m,
                    }),
                );
                let mut x = b.ensure(m, Layout::FeatureMajor);
                let depth = a.channel_mlp.len();
                for k in 0..depth {
                    let cols = a.channel_mlp[k].cols;
                    let y = b.buffer(1, cols, Layout::FeatureMajor);
                    let post = if k + 1 < depth {
                        PostOp::Relu
                    } else {
                        PostOp::Sigmoid
                    };
                    b.vuk("channel_mlp", &compiled.blocks[block + k], x, y, 0, post);
                    x = y;
                }
                let f = b.ensure(x, Layout::VertexMajor);
                let (edges, scale) = level.neighborhood();
                let z = b.buffer(n, c, Layout::VertexMajor);
                b.push(
                    "spatial_aggregate",
                    KernelOp::Vak(VakKernel {
                        edges,
                        gather: GatherOp::Acc,
                        dst_scale: Some(scale),
                        banks: level.banks.clone(),
                        channels: c,
                        input: h,
                        output: z,
                    }),
                );
                let z_fm = b.ensure(z, Layout::FeatureMajor);
                let alpha_fm = b.buffer(n, 1, Layout::FeatureMajor);
                b.vuk(
                    "spatial",
                    &compiled.blocks[block + depth],
                    z_fm,
                    alpha_fm,
                    0,
                    PostOp::Sigmoid,
                );
                block += depth + 1;
                let alpha = b.ensure(alpha_fm, Layout::VertexMajor);
                let t1 = b.buffer(n, c, Layout::VertexMajor);
                b.elementwise("channel_scale", ElementOp::ChannelScale { scale: f }, h, t1);
                let t2 = b.buffer(n, c, Layout::VertexMajor);
                b.elementwise(
                    "vertex_scale",
                    ElementOp::VertexScale { scale: alpha },
                    h,
                    t2,
                );
                let out = b.buffer(n, c, Layout::VertexMajor);
                b.elementwise("residual_sum", ElementOp::Add3 { a: t1, b: t2 }, h, out);
                h = out;
            }
            Layer::Flatten => {
                let c = b.buffers[h].channels;
                let cells: Vec<usize> = (0..n).map(|v| level.graph.vertex_cell(v)).collect();
                let num_cells = level.graph.num_cells();
                let out = b.buffer(1, num_cells * c, Layout::FeatureMajor);
                b.elementwise(
                    "flatten",
                    ElementOp::Flatten {
                        cells: Arc::new(cells),
                        num_cells,
                    },
                    h,
                    out,
                );
                h = out;
            }
            Layer::Mlp(m) => {
                let mut x = b.ensure(h, Layout::FeatureMajor);
                let depth = m.layers.len();
                for k in 0..depth {
                    let y = b.buffer(1, m.layers[k].cols, Layout::FeatureMajor);
                    let post = if k + 1 < depth {
                        PostOp::Relu
                    } else {
                        PostOp::None
                    };
                    b.vuk("dense", &compiled.blocks[block + k], x, y, 0, post);
                    x = y;
                }
                block += depth;
                h = x;
            }
        }
        layer_outputs.push(h);
    }
    let layer_names = (0..model.layers.len())
        .map(|i| model.layer_name(i))
        .collect();
    Ok(Schedule {
        kernels: b.kernels,
        buffers: b.buffers,
        input: (input_vm, input_fm),
        layer_outputs,
        layer_names,
        logits: h,
        preprocessing_us: preprocessing.as_secs_f64() * 1e6,
    })
}
