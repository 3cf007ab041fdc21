//! Beat-level functional execution of a schedule.
//!
//! Every kernel walks its work in the beats the hardware would use: an
//! aggregation kernel takes `p` edges per beat for each `q`-wide channel
//! slice, an update kernel takes `p` nonzeros per beat for each batch of `q`
//! vertices. The beat counters are the measured cycles.

use crate::activation::relu;
use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, Layout};
use crate::graph::GridGraph;

use super::kernel::{
    BufferId, ElementOp, ElementwiseKernel, GatherOp, KernelOp, MtuKernel, PostOp, Schedule,
    VakKernel, VukKernel,
};
use super::{AcceleratorConfig, MtuCost};

/// Cycles and per-bank update messages of one executed kernel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KernelRun {
    pub cycles: u64,
    pub bank_loads: Vec<usize>,
}

/// Buffer contents of a running schedule.
#[derive(Debug, Clone)]
pub struct SimState {
    buffers: Vec<Option<FeatureMatrix<f32>>>,
}

impl SimState {
    /// Empty buffers plus the host-loaded input features.
    pub fn new(schedule: &Schedule, graph: &GridGraph) -> Self {
        let mut buffers = vec![None; schedule.buffers.len()];
        let h: FeatureMatrix<f32> = graph.input_features();
        let fm = FeatureMatrix::from_values(
            h.num_vertices(),
            1,
            Layout::FeatureMajor,
            h.values().to_vec(),
        )
        .expect("single channel");
        buffers[schedule.input.0] = Some(h);
        buffers[schedule.input.1] = Some(fm);
        Self { buffers }
    }

    pub fn with_buffers(buffers: Vec<Option<FeatureMatrix<f32>>>) -> Self {
        Self { buffers }
    }

    pub fn get(&self, id: BufferId) -> Result<&FeatureMatrix<f32>> {
        self.buffers
            .get(id)
            .and_then(|b| b.as_ref())
            .ok_or_else(|| Error::Lowering(format!("buffer {id} read before it was written")))
    }

    pub fn set(&mut self, id: BufferId, m: FeatureMatrix<f32>) {
        if id >= self.buffers.len() {
            self.buffers.resize(id + 1, None);
        }
        self.buffers[id] = Some(m);
    }

    pub fn take(&mut self, id: BufferId) -> Option<FeatureMatrix<f32>> {
        self.buffers.get_mut(id).and_then(Option::take)
    }
}

fn post<F: Fn(f32) -> f32>(op: PostOp, sigmoid: F) -> impl Fn(f32) -> f32 {
    move |x| match op {
        PostOp::None => x,
        PostOp::Relu => relu(x),
        PostOp::Sigmoid => sigmoid(x),
    }
}

/// Scatter `weight · h[src]` per edge, gather at the owner bank of `dst`.
pub fn exec_vak(k: &VakKernel, state: &mut SimState, cfg: &AcceleratorConfig) -> Result<KernelRun> {
    let input = state.get(k.input)?;
    input.expect_layout(Layout::VertexMajor)?;
    let c = input.channels();
    if c != k.channels {
        return Err(Error::Shape(format!(
            "aggregation kernel built for {} channels, operand has {c}",
            k.channels
        )));
    }
    let num_dst = k.banks.num_dst();
    let mut out = FeatureMatrix::zeros(num_dst, c, Layout::VertexMajor);
    let mut seen = vec![false; num_dst];
    let mut loads = vec![0usize; k.banks.num_banks];
    let mut beats = 0u64;
    for c0 in (0..c).step_by(cfg.pes) {
        let c1 = (c0 + cfg.pes).min(c);
        seen.fill(false);
        for chunk in k.edges.chunks(cfg.pipelines) {
            beats += 1;
            for e in chunk {
                let dst = e.dst as usize;
                let bank = k.banks.owner_of(dst)?;
                if c0 == 0 {
                    loads[bank] += 1;
                }
                let src = &input.row(e.src as usize)[c0..c1];
                let acc = &mut out.row_mut(dst)[c0..c1];
                match k.gather {
                    GatherOp::Acc => {
                        for (a, &x) in acc.iter_mut().zip(src) {
                            *a += e.weight * x;
                        }
                    }
                    GatherOp::Max => {
                        // The first message to arrive initialises the slot.
                        let first = !seen[dst];
                        for (a, &x) in acc.iter_mut().zip(src) {
                            let u = e.weight * x;
                            if first || u > *a {
                                *a = u;
                            }
                        }
                        seen[dst] = true;
                    }
                }
            }
        }
    }
    if let Some(scale) = &k.dst_scale {
        for (v, &s) in scale.iter().enumerate().take(num_dst) {
            out.row_mut(v).iter_mut().for_each(|x| *x *= s);
        }
    }
    state.set(k.output, out);
    Ok(KernelRun {
        cycles: beats,
        bank_loads: loads,
    })
}

/// `r_dst += w · r_src` over batches of `q` vertices, bias and post-op at
/// kernel end. Writes into an existing output buffer when one is present
/// (the second half of a concatenation).
pub fn exec_vuk(
    k: &VukKernel,
    out_channels: usize,
    state: &mut SimState,
    cfg: &AcceleratorConfig,
) -> Result<KernelRun> {
    let input = state.get(k.input)?;
    input.expect_layout(Layout::FeatureMajor)?;
    let w = &k.weights;
    if input.channels() != w.rows || input.num_vertices() != k.num_vertices {
        return Err(Error::Shape(format!(
            "update kernel expects {}x{} operand, found {}x{}",
            k.num_vertices,
            w.rows,
            input.num_vertices(),
            input.channels()
        )));
    }
    if k.dst_offset + w.cols > out_channels {
        return Err(Error::Shape(
            "update kernel writes past its output buffer".into(),
        ));
    }
    let n = k.num_vertices;
    let mut out = match state.take(k.output) {
        Some(m) => {
            m.expect_layout(Layout::FeatureMajor)?;
            m
        }
        None => FeatureMatrix::zeros(n, out_channels, Layout::FeatureMajor),
    };
    let input = state.get(k.input)?;
    let mut loads = vec![0usize; k.banks.num_banks];
    let mut beats = 0u64;
    for v0 in (0..n).step_by(cfg.pes) {
        let v1 = (v0 + cfg.pes).min(n);
        for chunk in w.triples.chunks(cfg.pipelines) {
            beats += 1;
            for t in chunk {
                let bank = k.banks.owner_of(t.dst as usize)?;
                loads[bank] += 1;
                let src = &input.feature(t.src as usize)[v0..v1];
                let dst = &mut out.feature_mut(k.dst_offset + t.dst as usize)[v0..v1];
                for (d, &x) in dst.iter_mut().zip(src) {
                    *d += x * t.weight;
                }
            }
        }
    }
    let f = post(k.post, |x| cfg.sigmoid.apply(x));
    for (j, &b) in w.bias.iter().enumerate() {
        for d in out.feature_mut(k.dst_offset + j) {
            *d = f(*d + b);
        }
    }
    state.set(k.output, out);
    Ok(KernelRun {
        cycles: beats,
        bank_loads: loads,
    })
}

/// Exact transpose into the other layout; `p·q` elements move per beat in
/// bandwidth mode.
pub fn mtu_transpose(m: &FeatureMatrix<f32>, cfg: &AcceleratorConfig) -> (FeatureMatrix<f32>, u64) {
    let out = m.transposed();
    let beats = match cfg.mtu_cost {
        MtuCost::Free => 0,
        MtuCost::Bandwidth => out.values().chunks(cfg.pipelines * cfg.pes).count() as u64,
    };
    (out, beats)
}

fn exec_mtu(k: &MtuKernel, state: &mut SimState, cfg: &AcceleratorConfig) -> Result<KernelRun> {
    let input = state.get(k.input)?;
    let (out, cycles) = mtu_transpose(input, cfg);
    state.set(k.output, out);
    Ok(KernelRun {
        cycles,
        bank_loads: Vec::new(),
    })
}

fn exec_elementwise(
    k: &ElementwiseKernel,
    state: &mut SimState,
    cfg: &AcceleratorConfig,
) -> Result<KernelRun> {
    let h = state.get(k.input)?;
    h.expect_layout(Layout::VertexMajor)?;
    let (n, c) = (h.num_vertices(), h.channels());
    let operand = |id: BufferId| -> Result<&FeatureMatrix<f32>> {
        let m = state.get(id)?;
        m.expect_layout(Layout::VertexMajor)?;
        Ok(m)
    };
    let mut out = match &k.op {
        ElementOp::Flatten { num_cells, .. } => {
            FeatureMatrix::zeros(1, num_cells * c, Layout::FeatureMajor)
        }
        _ => FeatureMatrix::zeros(n, c, Layout::VertexMajor),
    };
    let mut beats = 0u64;
    for v0 in (0..n).step_by(cfg.pipelines) {
        let v1 = (v0 + cfg.pipelines).min(n);
        for c0 in (0..c).step_by(cfg.pes) {
            let c1 = (c0 + cfg.pes).min(c);
            beats += 1;
            for v in v0..v1 {
                let x = &h.row(v)[c0..c1];
                match &k.op {
                    ElementOp::Activate(op) => {
                        let f = post(*op, |x| cfg.sigmoid.apply(x));
                        for (o, &xi) in out.row_mut(v)[c0..c1].iter_mut().zip(x) {
                            *o = f(xi);
                        }
                    }
                    ElementOp::ChannelScale { scale } => {
                        let s = &operand(*scale)?.row(0)[c0..c1];
                        for ((o, &xi), &si) in out.row_mut(v)[c0..c1].iter_mut().zip(x).zip(s) {
                            *o = xi * si;
                        }
                    }
                    ElementOp::VertexScale { scale } => {
                        let a = operand(*scale)?.row(v)[0];
                        for (o, &xi) in out.row_mut(v)[c0..c1].iter_mut().zip(x) {
                            *o = a * xi;
                        }
                    }
                    ElementOp::Add3 { a, b } => {
                        let (ra, rb) = (&operand(*a)?.row(v)[c0..c1], &operand(*b)?.row(v)[c0..c1]);
                        for (((o, &xi), &ai), &bi) in
                            out.row_mut(v)[c0..c1].iter_mut().zip(x).zip(ra).zip(rb)
                        {
                            *o = xi + ai + bi;
                        }
                    }
                    ElementOp::Flatten { cells, .. } => {
                        let base = cells[v] * c;
                        for (ch, &xi) in (c0..c1).zip(x) {
                            out.feature_mut(base + ch)[0] = xi;
                        }
                    }
                }
            }
        }
    }
    state.set(k.output, out);
    Ok(KernelRun {
        cycles: beats,
        bank_loads: Vec::new(),
    })
}

/// Executes every kernel in order; returns the per-kernel runs.
pub fn run_schedule(
    schedule: &Schedule,
    state: &mut SimState,
    cfg: &AcceleratorConfig,
) -> Result<Vec<KernelRun>> {
    schedule
        .kernels
        .iter()
        .map(|kd| match &kd.op {
            KernelOp::Vak(k) => exec_vak(k, state, cfg),
            KernelOp::Vuk(k) => exec_vuk(k, schedule.buffers[k.output].channels, state, cfg),
            KernelOp::Mtu(k) => exec_mtu(k, state, cfg),
            KernelOp::Elementwise(k) => exec_elementwise(k, state, cfg),
        })
        .collect()
}
