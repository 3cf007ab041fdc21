//! JSON model files.
//!
//! ```text
//! {version, input_size: [w, h], num_classes,
//!  layers: [{kind, ...dims, weights: {dense: [[..]]} | {triples: [[src, dst, w]]}, bias}]}
//! ```
//! Weights are written with the shortest decimal form that reads back to the
//! same `f32`, so a save/load cycle is bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::weights::{Linear, Storage, Triple};

use super::{AttentionLayer, GnnLayer, Layer, MlpHead, ModelSpec, PoolLayer};

pub const MODEL_FILE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    version: u32,
    input_size: [usize; 2],
    num_classes: usize,
    layers: Vec<LayerFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum LayerFile {
    Gnn {
        in_channels: usize,
        out_channels: usize,
        activation: bool,
        neighbor: LinearFile,
        root: LinearFile,
    },
    Pool {
        size: usize,
        stride: usize,
    },
    Attention {
        channels: usize,
        channel_mlp: Vec<LinearFile>,
        spatial: LinearFile,
    },
    Flatten,
    Mlp {
        layers: Vec<LinearFile>,
    },
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinearFile {
    rows: usize,
    cols: usize,
    weights: WeightsFile,
    bias: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
enum WeightsFile {
    Dense(Vec<Vec<f32>>),
    Triples(Vec<(u32, u32, f32)>),
}

impl From<&Linear<f32>> for LinearFile {
    fn from(l: &Linear<f32>) -> Self {
        let weights = match &l.storage {
            Storage::Dense(d) => WeightsFile::Dense(
                d.chunks(l.cols.max(1))
                    .take(l.rows)
                    .map(<[f32]>::to_vec)
                    .collect(),
            ),
            Storage::Sparse(ts) => {
                WeightsFile::Triples(ts.iter().map(|t| (t.src, t.dst, t.weight)).collect())
            }
        };
        Self {
            rows: l.rows,
            cols: l.cols,
            weights,
            bias: l.bias.clone(),
        }
    }
}

fn linear_from(f: LinearFile, layer: usize, what: &str) -> Result<Linear<f32>> {
    let dim_err = |message: String| Error::Dimension {
        layer,
        message: format!("{what}: {message}"),
    };
    let storage = match f.weights {
        WeightsFile::Dense(rows) => {
            if rows.len() != f.rows || rows.iter().any(|r| r.len() != f.cols) {
                return Err(dim_err(format!(
                    "dense weights are not {}x{}",
                    f.rows, f.cols
                )));
            }
            Storage::Dense(rows.concat())
        }
        WeightsFile::Triples(ts) => Storage::Sparse(
            ts.into_iter()
                .map(|(src, dst, weight)| Triple { src, dst, weight })
                .collect(),
        ),
    };
    let l = Linear {
        rows: f.rows,
        cols: f.cols,
        storage,
        bias: f.bias,
    };
    l.validate().map_err(|e| dim_err(e.to_string()))?;
    Ok(l)
}

pub fn model_to_json(model: &ModelSpec<f32>) -> String {
    let layers = model
        .layers
        .iter()
        .map(|l| match l {
            Layer::Gnn(g) => LayerFile::Gnn {
                in_channels: g.in_channels(),
                out_channels: g.out_channels(),
                activation: g.activation,
                neighbor: (&g.neighbor).into(),
                root: (&g.root).into(),
            },
            Layer::Pool(p) => LayerFile::Pool {
                size: p.size,
                stride: p.stride,
            },
            Layer::Attention(a) => LayerFile::Attention {
                channels: a.channels(),
                channel_mlp: a.channel_mlp.iter().map(Into::into).collect(),
                spatial: (&a.spatial).into(),
            },
            Layer::Flatten => LayerFile::Flatten,
            Layer::Mlp(m) => LayerFile::Mlp {
                layers: m.layers.iter().map(Into::into).collect(),
            },
        })
        .collect();
    let file = ModelFile {
        version: MODEL_FILE_VERSION,
        input_size: [model.input_width, model.input_height],
        num_classes: model.num_classes,
        layers,
    };
    serde_json::to_string(&file).expect("model serialises")
}

/// Parses and validates a model file body.
pub fn model_from_json(text: &str) -> Result<ModelSpec<f32>> {
    let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
    if file.version != MODEL_FILE_VERSION {
        return Err(Error::Schema(format!(
            "unsupported model file version {}",
            file.version
        )));
    }
    let mut layers = Vec::with_capacity(file.layers.len());
    for (i, l) in file.layers.into_iter().enumerate() {
        let layer = match l {
            LayerFile::Gnn {
                in_channels,
                out_channels,
                activation,
                neighbor,
                root,
            } => {
                let g = GnnLayer {
                    neighbor: linear_from(neighbor, i, "neighbor")?,
                    root: linear_from(root, i, "self")?,
                    activation,
                };
                if g.in_channels() != in_channels
                    || g.root.rows != in_channels
                    || g.out_channels() != out_channels
                {
                    return Err(Error::Dimension {
                        layer: i,
                        message: format!(
                            "declared {in_channels}->{out_channels} but weights give {}->{}",
                            g.in_channels(),
                            g.out_channels()
                        ),
                    });
                }
                Layer::Gnn(g)
            }
            LayerFile::Pool { size, stride } => Layer::Pool(PoolLayer { size, stride }),
            LayerFile::Attention {
                channels,
                channel_mlp,
                spatial,
            } => {
                let a = AttentionLayer {
                    channel_mlp: channel_mlp
                        .into_iter()
                        .enumerate()
                        .map(|(k, f)| linear_from(f, i, &format!("channel_mlp[{k}]")))
                        .collect::<Result<_>>()?,
                    spatial: linear_from(spatial, i, "spatial")?,
                };
                if a.channels() != channels {
                    return Err(Error::Dimension {
                        layer: i,
                        message: format!(
                            "declared {channels} channels, spatial weights have {}",
                            a.channels()
                        ),
                    });
                }
                Layer::Attention(a)
            }
            LayerFile::Flatten => Layer::Flatten,
            LayerFile::Mlp { layers } => Layer::Mlp(MlpHead {
                layers: layers
                    .into_iter()
                    .enumerate()
                    .map(|(k, f)| linear_from(f, i, &format!("mlp[{k}]")))
                    .collect::<Result<_>>()?,
            }),
        };
        layers.push(layer);
    }
    let model = ModelSpec {
        input_width: file.input_size[0],
        input_height: file.input_size[1],
        num_classes: file.num_classes,
        layers,
    };
    model.validate()?;
    Ok(model)
}

pub fn save_model(model: &ModelSpec<f32>, path: &Path) -> Result<()> {
    std::fs::write(path, model_to_json(model))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelSpec<f32>> {
    model_from_json(&std::fs::read_to_string(path)?)
}
