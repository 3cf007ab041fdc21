//! Reverse-mode gradients through the reference network.
//!
//! The forward half reuses the reference operators (exact sigmoid) and keeps
//! whatever each layer needs for its backward step.

use std::borrow::Cow;

use crate::activation::{relu, sigmoid};
use crate::error::{shape_err, Result};
use crate::features::{FeatureMatrix, Layout};
use crate::graph::GridGraph;
use crate::model::ops::{flatten_pad, global_mean, grid_max_pool, mean_aggregate};
use crate::model::{Layer, ModelSpec};
use crate::real::Real;
use crate::weights::{Linear, Storage};

/// Gradient of one weight block, aligned entry-for-entry with its storage.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrad<T> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

/// One [`LinearGrad`] per block of [`ModelSpec::linears`], same order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub blocks: Vec<LinearGrad<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(model: &ModelSpec<T>) -> Self {
        let blocks = model
            .linears()
            .iter()
            .map(|l| LinearGrad {
                weights: vec![T::zero(); l.num_weights()],
                bias: vec![T::zero(); l.cols],
            })
            .collect();
        Self { blocks }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            a.weights
                .iter_mut()
                .zip(&b.weights)
                .for_each(|(x, &y)| *x += y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, &y)| *x += y);
        }
    }

    /// Adds the L1 subgradient `λ·sign(w)` (0 at `w = 0`) to the weight entries.
    pub fn add_l1(&mut self, model: &ModelSpec<T>, lambda: T) {
        for (g, l) in self.blocks.iter_mut().zip(model.linears()) {
            for (k, gk) in g.weights.iter_mut().enumerate() {
                let w = l.weight(k);
                if w > T::zero() {
                    *gk += lambda;
                } else if w < T::zero() {
                    *gk -= lambda;
                }
            }
        }
    }
}

enum Tape<T> {
    Gnn {
        level: usize,
        h: FeatureMatrix<T>,
        z: FeatureMatrix<T>,
        out: FeatureMatrix<T>,
    },
    Pool {
        fine_vertices: usize,
        argmax: Vec<usize>,
    },
    Attention {
        level: usize,
        h: FeatureMatrix<T>,
        /// Input of each channel-MLP layer; `acts[0]` is the global mean.
        acts: Vec<Vec<T>>,
        f: Vec<T>,
        z: FeatureMatrix<T>,
        alpha: Vec<T>,
    },
    Flatten {
        level: usize,
        channels: usize,
    },
    Mlp {
        acts: Vec<Vec<T>>,
    },
}

fn linear_grad<T: Real>(l: &Linear<T>, x: &[T], dy: &[T], g: &mut LinearGrad<T>) {
    match &l.storage {
        Storage::Dense(_) => {
            for (i, &xi) in x.iter().enumerate() {
                if xi == T::zero() {
                    continue;
                }
                let row = &mut g.weights[i * l.cols..(i + 1) * l.cols];
                for (gw, &d) in row.iter_mut().zip(dy) {
                    *gw += xi * d;
                }
            }
        }
        Storage::Sparse(ts) => {
            for (gw, t) in g.weights.iter_mut().zip(ts) {
                *gw += x[t.src as usize] * dy[t.dst as usize];
            }
        }
    }
    g.bias.iter_mut().zip(dy).for_each(|(b, &d)| *b += d);
}

/// Forward pass through an MLP chain keeping each layer's input.
fn mlp_forward<T: Real>(layers: &[Linear<T>], x: Vec<T>) -> (Vec<Vec<T>>, Vec<T>) {
    let mut acts = vec![x];
    let mut out = Vec::new();
    for (k, l) in layers.iter().enumerate() {
        let y = l.apply(acts.last().expect("input"));
        if k + 1 < layers.len() {
            acts.push(y.into_iter().map(relu).collect());
        } else {
            out = y;
        }
    }
    (acts, out)
}

/// Backward through an MLP chain; returns the gradient w.r.t. its input.
fn mlp_backward<T: Real>(
    layers: &[Linear<T>],
    acts: &[Vec<T>],
    dout: Vec<T>,
    grads: &mut [LinearGrad<T>],
) -> Vec<T> {
    let mut dy = dout;
    for k in (0..layers.len()).rev() {
        let l = &layers[k];
        linear_grad(l, &acts[k], &dy, &mut grads[k]);
        let mut dx = vec![T::zero(); l.rows];
        l.backprop_input(&dy, &mut dx);
        if k > 0 {
            for (d, &a) in dx.iter_mut().zip(&acts[k]) {
                if a <= T::zero() {
                    *d = T::zero();
                }
            }
        }
        dy = dx;
    }
    dy
}

/// Transposed mean aggregation: `dh_u += dz_v / |N(v) ∪ {v}|` for every `u` in `v`'s closed neighbourhood.
fn mean_aggregate_backward<T: Real>(
    graph: &GridGraph,
    dz: &FeatureMatrix<T>,
    dh: &mut FeatureMatrix<T>,
) {
    for v in 0..graph.num_vertices() {
        let nb = graph.closed_neighborhood(v);
        let n = T::of(nb.len() as f64);
        let scaled: Vec<T> = dz.row(v).iter().map(|&d| d / n).collect();
        for &u in nb {
            dh.row_mut(u)
                .iter_mut()
                .zip(&scaled)
                .for_each(|(a, &s)| *a += s);
        }
    }
}

fn block_offsets<T>(model: &ModelSpec<T>) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(model.layers.len());
    let mut next = 0;
    for layer in &model.layers {
        offsets.push(next);
        next += match layer {
            Layer::Gnn(_) => 2,
            Layer::Attention(a) => a.channel_mlp.len() + 1,
            Layer::Mlp(m) => m.layers.len(),
            Layer::Pool(_) | Layer::Flatten => 0,
        };
    }
    offsets
}

/// Squared error `‖target − logits‖²` for one graph; accumulates its exact
/// gradient into `grads` and returns `(loss, logits)`.
pub fn backprop<T: Real>(
    model: &ModelSpec<T>,
    graph: &GridGraph,
    target: &[T],
    grads: &mut Gradients<T>,
) -> Result<(T, Vec<T>)> {
    if graph.width() != model.input_width || graph.height() != model.input_height {
        return Err(shape_err(format!(
            "model expects {}x{} input, graph is {}x{}",
            model.input_width,
            model.input_height,
            graph.width(),
            graph.height()
        )));
    }
    let mut levels: Vec<Cow<GridGraph>> = vec![Cow::Borrowed(graph)];
    let mut h: FeatureMatrix<T> = graph.input_features();
    let mut vector: Option<Vec<T>> = None;
    let mut tape = Vec::with_capacity(model.layers.len());

    for layer in &model.layers {
        let level = levels.len() - 1;
        let g = &levels[level];
        match layer {
            Layer::Gnn(l) => {
                if h.channels() != l.neighbor.rows {
                    return Err(shape_err("GNN input width mismatch"));
                }
                let z = mean_aggregate(g, &h)?;
                let cn = l.neighbor.cols;
                let mut out =
                    FeatureMatrix::zeros(g.num_vertices(), l.out_channels(), Layout::VertexMajor);
                for v in 0..g.num_vertices() {
                    let row = out.row_mut(v);
                    l.neighbor.apply_into(z.row(v), &mut row[..cn]);
                    l.root.apply_into(h.row(v), &mut row[cn..]);
                    if l.activation {
                        row.iter_mut().for_each(|x| *x = relu(*x));
                    }
                }
                let input = std::mem::replace(&mut h, out.clone());
                tape.push(Tape::Gnn {
                    level,
                    h: input,
                    z,
                    out,
                });
            }
            Layer::Pool(p) => {
                let pooled = grid_max_pool(g, &h, p.size, p.stride)?;
                tape.push(Tape::Pool {
                    fine_vertices: h.num_vertices(),
                    argmax: pooled.argmax,
                });
                h = pooled.features;
                levels.push(Cow::Owned(pooled.coarse.graph));
            }
            Layer::Attention(a) => {
                let (acts, pre) = mlp_forward(&a.channel_mlp, global_mean(g, &h));
                if pre.len() != h.channels() {
                    return Err(shape_err("channel MLP must map c channels back to c"));
                }
                let f: Vec<T> = pre.into_iter().map(sigmoid).collect();
                let z = mean_aggregate(g, &h)?;
                let mut s = [T::zero()];
                let alpha: Vec<T> = (0..g.num_vertices())
                    .map(|v| {
                        a.spatial.apply_into(z.row(v), &mut s);
                        sigmoid(s[0])
                    })
                    .collect();
                let out = crate::model::ops::combine_attention(&h, &f, &alpha);
                let input = std::mem::replace(&mut h, out);
                tape.push(Tape::Attention {
                    level,
                    h: input,
                    acts,
                    f,
                    z,
                    alpha,
                });
            }
            Layer::Flatten => {
                vector = Some(flatten_pad(g, &h)?);
                tape.push(Tape::Flatten {
                    level,
                    channels: h.channels(),
                });
            }
            Layer::Mlp(m) => {
                let x = vector
                    .take()
                    .ok_or_else(|| shape_err("MLP head without flatten"))?;
                let (acts, out) = mlp_forward(&m.layers, x);
                vector = Some(out);
                tape.push(Tape::Mlp { acts });
            }
        }
    }

    let logits = vector.ok_or_else(|| shape_err("model produced no logits"))?;
    if logits.len() != target.len() {
        return Err(shape_err(format!(
            "{} logits for a {}-class target",
            logits.len(),
            target.len()
        )));
    }
    let mut loss = T::zero();
    let mut dvec: Vec<T> = Vec::with_capacity(logits.len());
    for (&o, &y) in logits.iter().zip(target) {
        let r = o - y;
        loss += r * r;
        dvec.push(T::of(2.0) * r);
    }

    let offsets = block_offsets(model);
    let mut dh: Option<FeatureMatrix<T>> = None;
    for ((layer, entry), &b) in model.layers.iter().zip(tape).zip(&offsets).rev() {
        match (layer, entry) {
            (Layer::Mlp(m), Tape::Mlp { acts }) => {
                let n = m.layers.len();
                dvec = mlp_backward(
                    &m.layers,
                    &acts,
                    std::mem::take(&mut dvec),
                    &mut grads.blocks[b..b + n],
                );
            }
            (Layer::Flatten, Tape::Flatten { level, channels }) => {
                let g = &levels[level];
                let mut d = FeatureMatrix::zeros(g.num_vertices(), channels, Layout::VertexMajor);
                for v in 0..g.num_vertices() {
                    let cell = g.vertex_cell(v);
                    d.row_mut(v)
                        .copy_from_slice(&dvec[cell * channels..(cell + 1) * channels]);
                }
                dh = Some(d);
            }
            (
                Layer::Pool(_),
                Tape::Pool {
                    fine_vertices,
                    argmax,
                },
            ) => {
                let dout = dh.take().expect("pool gradient");
                let c = dout.channels();
                let mut d = FeatureMatrix::zeros(fine_vertices, c, Layout::VertexMajor);
                for k in 0..dout.num_vertices() {
                    for (ch, &g) in dout.row(k).iter().enumerate() {
                        d.row_mut(argmax[k * c + ch])[ch] += g;
                    }
                }
                dh = Some(d);
            }
            (
                Layer::Attention(a),
                Tape::Attention {
                    level,
                    h,
                    acts,
                    f,
                    z,
                    alpha,
                },
            ) => {
                let g = &levels[level];
                let dout = dh.take().expect("attention gradient");
                let n = g.num_vertices();
                let c = h.channels();
                let mut d = FeatureMatrix::zeros(n, c, Layout::VertexMajor);
                let mut df = vec![T::zero(); c];
                let mut dz = FeatureMatrix::zeros(n, c, Layout::VertexMajor);
                let sb = b + a.channel_mlp.len();
                for v in 0..n {
                    let (hv, gv) = (h.row(v), dout.row(v));
                    let mut dalpha = T::zero();
                    for ch in 0..c {
                        d.row_mut(v)[ch] = gv[ch] * (T::one() + f[ch] + alpha[v]);
                        df[ch] += gv[ch] * hv[ch];
                        dalpha += gv[ch] * hv[ch];
                    }
                    let ds = [dalpha * alpha[v] * (T::one() - alpha[v])];
                    linear_grad(&a.spatial, z.row(v), &ds, &mut grads.blocks[sb]);
                    a.spatial.backprop_input(&ds, dz.row_mut(v));
                }
                mean_aggregate_backward(g, &dz, &mut d);
                let dpre: Vec<T> = df
                    .iter()
                    .zip(&f)
                    .map(|(&d, &fc)| d * fc * (T::one() - fc))
                    .collect();
                let nm = a.channel_mlp.len();
                let dm = mlp_backward(&a.channel_mlp, &acts, dpre, &mut grads.blocks[b..b + nm]);
                if n > 0 {
                    let nn = T::of(n as f64);
                    let share: Vec<T> = dm.iter().map(|&x| x / nn).collect();
                    for v in 0..n {
                        d.row_mut(v)
                            .iter_mut()
                            .zip(&share)
                            .for_each(|(x, &s)| *x += s);
                    }
                }
                dh = Some(d);
            }
            (Layer::Gnn(l), Tape::Gnn { level, h, z, out }) => {
                let g = &levels[level];
                let mut dout = dh.take().expect("gnn gradient");
                if l.activation {
                    for (d, &o) in dout.values_mut().iter_mut().zip(out.values()) {
                        if o <= T::zero() {
                            *d = T::zero();
                        }
                    }
                }
                let n = g.num_vertices();
                let cn = l.neighbor.cols;
                let mut d = FeatureMatrix::zeros(n, h.channels(), Layout::VertexMajor);
                let mut dz = FeatureMatrix::zeros(n, h.channels(), Layout::VertexMajor);
                let (gn, gr) = grads.blocks[b..b + 2].split_at_mut(1);
                for v in 0..n {
                    let (dn, ds) = dout.row(v).split_at(cn);
                    linear_grad(&l.neighbor, z.row(v), dn, &mut gn[0]);
                    linear_grad(&l.root, h.row(v), ds, &mut gr[0]);
                    l.neighbor.backprop_input(dn, dz.row_mut(v));
                    l.root.backprop_input(ds, d.row_mut(v));
                }
                mean_aggregate_backward(g, &dz, &mut d);
                dh = Some(d);
            }
            _ => unreachable!("tape entries follow the layer list"),
        }
    }
    Ok((loss, logits))
}
