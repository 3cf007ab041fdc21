//! Golden reference GNN: GraphSAGE layers, channel + spatial attention, grid
//! max-pooling, zero-padded flatten and an MLP classification head.

mod forward;
mod io;
pub(crate) mod ops;

pub use forward::{argmax, forward, ForwardOptions, ForwardOutput, TraceEntry};
pub use io::{load_model, model_from_json, model_to_json, save_model, MODEL_FILE_VERSION};
pub use ops::{
    attention_module, channel_attention, flatten_pad, graphsage_forward, grid_max_pool,
    mean_aggregate, mlp_head, spatial_attention, PoolOutput,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::weights::Linear;

/// GraphSAGE layer: `ReLU(mean(N(i) ∪ {i})·W_neighbor + b_neighbor ‖ h_i·W_self + b_self)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GnnLayer<T> {
    pub neighbor: Linear<T>,
    /// Self branch (`W_self`, `b_self`).
    pub root: Linear<T>,
    pub activation: bool,
}

impl<T: Real> GnnLayer<T> {
    pub fn in_channels(&self) -> usize {
        self.neighbor.rows
    }

    pub fn out_channels(&self) -> usize {
        self.neighbor.cols + self.root.cols
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolLayer {
    pub size: usize,
    pub stride: usize,
}

/// Channel attention MLP (ReLU between layers, sigmoid at the end) plus the
/// single-branch spatial GNNL producing one score per vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionLayer<T> {
    pub channel_mlp: Vec<Linear<T>>,
    pub spatial: Linear<T>,
}

impl<T: Real> AttentionLayer<T> {
    pub fn channels(&self) -> usize {
        self.spatial.rows
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpHead<T> {
    pub layers: Vec<Linear<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Gnn(GnnLayer<T>),
    Pool(PoolLayer),
    Attention(AttentionLayer<T>),
    Flatten,
    Mlp(MlpHead<T>),
}

impl<T> Layer<T> {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Gnn(_) => "gnn",
            Layer::Pool(_) => "pool",
            Layer::Attention(_) => "attention",
            Layer::Flatten => "flatten",
            Layer::Mlp(_) => "mlp",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec<T> {
    pub input_width: usize,
    pub input_height: usize,
    pub num_classes: usize,
    pub layers: Vec<Layer<T>>,
}

/// Tensor shape flowing between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Grid {
        width: usize,
        height: usize,
        channels: usize,
    },
    Vector {
        len: usize,
    },
}

/// Architecture knobs for [`ModelSpec::init`].
#[derive(Debug, Clone, PartialEq)]
pub struct ArchConfig {
    pub input_width: usize,
    pub input_height: usize,
    pub num_classes: usize,
    /// Output width of each GNN layer (split evenly between the two branches).
    pub gnn_widths: Vec<usize>,
    pub pool_size: usize,
    pub pool_stride: usize,
    /// Insert an attention module after every pooling layer except the last.
    pub attention: bool,
    /// Channel-MLP hidden width is `max(1, c / reduction)`.
    pub attention_reduction: usize,
    pub mlp_hidden: Vec<usize>,
}

impl Default for ArchConfig {
    /// 128×128 input, three GNN/pool stages (16, 32, 64 channels) with
    /// attention after the first two, flatten to 16×16×64, MLP 256 → 10.
    fn default() -> Self {
        Self {
            input_width: 128,
            input_height: 128,
            num_classes: 10,
            gnn_widths: vec![16, 32, 64],
            pool_size: 2,
            pool_stride: 2,
            attention: true,
            attention_reduction: 4,
            mlp_hidden: vec![256],
        }
    }
}

impl ArchConfig {
    /// Small variant for desk-scale experiments on 32×32 synthetic data.
    pub fn compact(input: usize, num_classes: usize) -> Self {
        Self {
            input_width: input,
            input_height: input,
            num_classes,
            gnn_widths: vec![8, 16],
            mlp_hidden: vec![32],
            ..Self::default()
        }
    }
}

impl<T: Real> ModelSpec<T> {
    /// Glorot-uniform weights and zero biases from a seeded generator.
    pub fn init(arch: &ArchConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut glorot = |rows: usize, cols: usize| {
            let a = (6.0 / (rows + cols) as f64).sqrt();
            let data = (0..rows * cols)
                .map(|_| T::of(rng.gen_range(-a..a)))
                .collect();
            Linear::dense(rows, cols, data, vec![T::zero(); cols]).expect("consistent dims")
        };
        let mut layers = Vec::new();
        let mut c = 1;
        let (mut w, mut h) = (arch.input_width, arch.input_height);
        for (i, &out) in arch.gnn_widths.iter().enumerate() {
            if out < 2 || out % 2 != 0 {
                return Err(Error::Config(format!(
                    "GNN width {out} must be even and >= 2"
                )));
            }
            layers.push(Layer::Gnn(GnnLayer {
                neighbor: glorot(c, out / 2),
                root: glorot(c, out / 2),
                activation: true,
            }));
            c = out;
            layers.push(Layer::Pool(PoolLayer {
                size: arch.pool_size,
                stride: arch.pool_stride,
            }));
            w = w.div_ceil(arch.pool_stride);
            h = h.div_ceil(arch.pool_stride);
            if arch.attention && i + 1 < arch.gnn_widths.len() {
                let hidden = (c / arch.attention_reduction.max(1)).max(1);
                layers.push(Layer::Attention(AttentionLayer {
                    channel_mlp: vec![glorot(c, hidden), glorot(hidden, c)],
                    spatial: glorot(c, 1),
                }));
            }
        }
        layers.push(Layer::Flatten);
        let mut dims = vec![w * h * c];
        dims.extend(&arch.mlp_hidden);
        dims.push(arch.num_classes);
        let head = dims.windows(2).map(|d| glorot(d[0], d[1])).collect();
        layers.push(Layer::Mlp(MlpHead { layers: head }));
        let model = Self {
            input_width: arch.input_width,
            input_height: arch.input_height,
            num_classes: arch.num_classes,
            layers,
        };
        model.validate()?;
        Ok(model)
    }

    /// Number of GNN layers (`L`).
    pub fn num_gnn_layers(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l, Layer::Gnn(_)))
            .count()
    }

    /// Number of pooling layers (`L_p`).
    pub fn num_pool_layers(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l, Layer::Pool(_)))
            .count()
    }

    pub fn layer_name(&self, index: usize) -> String {
        format!("{}{index}", self.layers[index].kind_name())
    }

    /// Checks the dimension chain end to end and returns the output stage of
    /// every layer.
    pub fn validate(&self) -> Result<Vec<Stage>> {
        let dim_err = |layer: usize, message: String| Error::Dimension { layer, message };
        let check_linear = |layer: usize, l: &Linear<T>, what: &str| -> Result<()> {
            l.validate()
                .map_err(|e| dim_err(layer, format!("{what}: {e}")))?;
            let finite = (0..l.num_weights()).all(|k| l.weight(k).is_finite())
                && l.bias.iter().all(|b| b.is_finite());
            if finite {
                Ok(())
            } else {
                Err(dim_err(layer, format!("{what}: non-finite weight")))
            }
        };
        let chain = |layer: usize, ls: &[Linear<T>], input: usize, what: &str| -> Result<usize> {
            if ls.is_empty() {
                return Err(dim_err(layer, format!("{what} has no layers")));
            }
            let mut d = input;
            for (k, l) in ls.iter().enumerate() {
                check_linear(layer, l, &format!("{what}[{k}]"))?;
                if l.rows != d {
                    return Err(dim_err(
                        layer,
                        format!("{what}[{k}] expects {} inputs, got {d}", l.rows),
                    ));
                }
                d = l.cols;
            }
            Ok(d)
        };
        if self.input_width == 0 || self.input_height == 0 {
            return Err(dim_err(0, "input size must be positive".into()));
        }
        let mut stage = Stage::Grid {
            width: self.input_width,
            height: self.input_height,
            channels: 1,
        };
        let mut stages = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            stage = match (layer, stage) {
                (
                    Layer::Gnn(g),
                    Stage::Grid {
                        width,
                        height,
                        channels,
                    },
                ) => {
                    check_linear(i, &g.neighbor, "neighbor")?;
                    check_linear(i, &g.root, "self")?;
                    if g.neighbor.rows != channels || g.root.rows != channels {
                        return Err(dim_err(
                            i,
                            format!(
                                "expects {}/{} input channels, got {channels}",
                                g.neighbor.rows, g.root.rows
                            ),
                        ));
                    }
                    Stage::Grid {
                        width,
                        height,
                        channels: g.out_channels(),
                    }
                }
                (
                    Layer::Pool(p),
                    Stage::Grid {
                        width,
                        height,
                        channels,
                    },
                ) => {
                    if p.size == 0 || p.stride == 0 {
                        return Err(dim_err(i, "pool size and stride must be positive".into()));
                    }
                    Stage::Grid {
                        width: width.div_ceil(p.stride),
                        height: height.div_ceil(p.stride),
                        channels,
                    }
                }
                (Layer::Attention(a), Stage::Grid { channels, .. }) => {
                    check_linear(i, &a.spatial, "spatial")?;
                    if a.spatial.rows != channels || a.spatial.cols != 1 {
                        return Err(dim_err(
                            i,
                            format!(
                                "spatial weights are {}x{}, need {channels}x1",
                                a.spatial.rows, a.spatial.cols
                            ),
                        ));
                    }
                    let out = chain(i, &a.channel_mlp, channels, "channel_mlp")?;
                    if out != channels {
                        return Err(dim_err(i, format!("channel MLP maps {channels} to {out}")));
                    }
                    stage
                }
                (
                    Layer::Flatten,
                    Stage::Grid {
                        width,
                        height,
                        channels,
                    },
                ) => Stage::Vector {
                    len: width * height * channels,
                },
                (Layer::Mlp(m), Stage::Vector { len }) => {
                    if i + 1 != self.layers.len() {
                        return Err(dim_err(i, "MLP head must be the last layer".into()));
                    }
                    Stage::Vector {
                        len: chain(i, &m.layers, len, "mlp")?,
                    }
                }
                (l, s) => {
                    return Err(dim_err(
                        i,
                        format!("{} layer cannot follow stage {s:?}", l.kind_name()),
                    ))
                }
            };
            stages.push(stage);
        }
        match stage {
            Stage::Vector { len } if len == self.num_classes => Ok(stages),
            other => Err(dim_err(
                self.layers.len().saturating_sub(1),
                format!(
                    "model ends in {other:?}, expected {} logits",
                    self.num_classes
                ),
            )),
        }
    }

    /// Every weight block in a fixed traversal order.
    pub fn linears(&self) -> Vec<&Linear<T>> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Gnn(g) => out.extend([&g.neighbor, &g.root]),
                Layer::Attention(a) => {
                    out.extend(a.channel_mlp.iter());
                    out.push(&a.spatial);
                }
                Layer::Mlp(m) => out.extend(m.layers.iter()),
                Layer::Pool(_) | Layer::Flatten => {}
            }
        }
        out
    }

    /// Mutable counterpart of [`ModelSpec::linears`], same order.
    pub fn linears_mut(&mut self) -> Vec<&mut Linear<T>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Gnn(g) => {
                    out.push(&mut g.neighbor);
                    out.push(&mut g.root);
                }
                Layer::Attention(a) => {
                    out.extend(a.channel_mlp.iter_mut());
                    out.push(&mut a.spatial);
                }
                Layer::Mlp(m) => out.extend(m.layers.iter_mut()),
                Layer::Pool(_) | Layer::Flatten => {}
            }
        }
        out
    }

    /// Human-readable name of each weight block, aligned with [`ModelSpec::linears`].
    pub fn linear_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Gnn(_) => {
                    out.push(format!("gnn{i}.neighbor"));
                    out.push(format!("gnn{i}.self"));
                }
                Layer::Attention(a) => {
                    out.extend(
                        (0..a.channel_mlp.len()).map(|k| format!("attention{i}.channel{k}")),
                    );
                    out.push(format!("attention{i}.spatial"));
                }
                Layer::Mlp(m) => out.extend((0..m.layers.len()).map(|k| format!("mlp{i}.{k}"))),
                Layer::Pool(_) | Layer::Flatten => {}
            }
        }
        out
    }

    /// Stored weights plus biases.
    pub fn num_parameters(&self) -> usize {
        self.linears()
            .iter()
            .map(|l| l.num_weights() + l.bias.len())
            .sum()
    }

    pub fn cast<U: Real>(&self) -> ModelSpec<U> {
        ModelSpec {
            input_width: self.input_width,
            input_height: self.input_height,
            num_classes: self.num_classes,
            layers: self
                .layers
                .iter()
                .map(|l| match l {
                    Layer::Gnn(g) => Layer::Gnn(GnnLayer {
                        neighbor: g.neighbor.cast(),
                        root: g.root.cast(),
                        activation: g.activation,
                    }),
                    Layer::Pool(p) => Layer::Pool(*p),
                    Layer::Attention(a) => Layer::Attention(AttentionLayer {
                        channel_mlp: a.channel_mlp.iter().map(Linear::cast).collect(),
                        spatial: a.spatial.cast(),
                    }),
                    Layer::Flatten => Layer::Flatten,
                    Layer::Mlp(m) => Layer::Mlp(MlpHead {
                        layers: m.layers.iter().map(Linear::cast).collect(),
                    }),
                })
                .collect(),
        }
    }
}
