//! Lasso training: squared error on raw logits against one-hot targets plus
//! `λ Σ|w|`, minimised with plain SGD, followed by magnitude pruning.

mod backprop;

pub use backprop::{backprop, Gradients, LinearGrad};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::graph::{build_graph, GridGraph};
use crate::model::ModelSpec;
use crate::real::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Magnitude below which weights count as pruned.
    pub i_weight: f64,
    /// Input pruning threshold used to build the training graphs.
    pub i_vertex: f32,
    /// Also train on the unpruned graph of every image, so one model serves
    /// both pruned and unpruned inputs.
    pub mix_unpruned: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            learning_rate: 1e-2,
            epochs: 50,
            batch_size: 8,
            seed: 0,
            i_weight: 0.0,
            i_vertex: 0.1,
            mix_unpruned: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            ));
        }
        if !(self.i_weight >= 0.0) {
            return bad(format!("i_weight must be >= 0, got {}", self.i_weight));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad(format!(
                "learning rate must be finite and > 0, got {}",
                self.learning_rate
            ));
        }
        if self.batch_size == 0 {
            return bad("batch size must be >= 1".into());
        }
        if !(self.i_vertex >= 0.0) {
            return bad(format!("i_vertex must be >= 0, got {}", self.i_vertex));
        }
        Ok(())
    }
}

/// A pruned input graph with its class.
#[derive(Debug, Clone)]
pub struct LabeledGraph {
    pub graph: GridGraph,
    pub label: usize,
}

/// Builds every sample's graph at `i_vertex`, keeping dataset order.
pub fn prepare(dataset: &Dataset, i_vertex: f32) -> Vec<LabeledGraph> {
    dataset
        .samples
        .par_iter()
        .map(|s| LabeledGraph {
            graph: build_graph(&s.image, i_vertex),
            label: s.label,
        })
        .collect()
}

/// Training graphs per `cfg`: pruned at `i_vertex`, followed by the unpruned
/// copies when mixing is on.
pub fn prepare_training(dataset: &Dataset, cfg: &TrainConfig) -> Vec<LabeledGraph> {
    let mut graphs = prepare(dataset, cfg.i_vertex);
    if cfg.mix_unpruned && cfg.i_vertex > 0.0 {
        graphs.extend(prepare(dataset, 0.0));
    }
    graphs
}

pub fn one_hot<T: Real>(label: usize, num_classes: usize) -> Vec<T> {
    let mut y = vec![T::zero(); num_classes];
    y[label] = T::one();
    y
}

/// `Σ|w|` over weight entries (biases excluded).
pub fn l1_norm<T: Real>(model: &ModelSpec<T>) -> T {
    let mut s = T::zero();
    for l in model.linears() {
        for k in 0..l.num_weights() {
            s += l.weight(k).abs();
        }
    }
    s
}

fn check_labels<T>(model: &ModelSpec<T>, batch: &[LabeledGraph]) -> Result<()> {
    match batch.iter().find(|s| s.label >= model.num_classes) {
        Some(s) => Err(Error::Validation(format!(
            "label {} outside {} classes",
            s.label, model.num_classes
        ))),
        None => Ok(()),
    }
}

/// `Σᵢ ‖yᵢ − Model(𝒢ᵢ)‖² + λ Σ|w|`, summed over the batch in order.
pub fn loss<T: Real>(model: &ModelSpec<T>, batch: &[LabeledGraph], lambda: T) -> Result<T> {
    check_labels(model, batch)?;
    let per: Vec<T> = batch
        .par_iter()
        .map(|s| {
            let logits = model.logits(&s.graph)?;
            let y: Vec<T> = one_hot(s.label, model.num_classes);
            Ok(logits
                .iter()
                .zip(&y)
                .map(|(&o, &t)| (t - o) * (t - o))
                .fold(T::zero(), |a, b| a + b))
        })
        .collect::<Result<_>>()?;
    let mut total = T::zero();
    per.into_iter().for_each(|l| total += l);
    Ok(total + lambda * l1_norm(model))
}

/// Data-term loss and gradient of a batch without the L1 term. Per-sample
/// work runs in parallel; results are reduced in batch order.
fn data_gradients<T: Real>(
    model: &ModelSpec<T>,
    batch: &[&LabeledGraph],
) -> Result<(T, Gradients<T>)> {
    let parts: Vec<(T, Gradients<T>)> = batch
        .par_iter()
        .map(|s| {
            let mut g = Gradients::zeros_like(model);
            let y: Vec<T> = one_hot(s.label, model.num_classes);
            let (l, _) = backprop(model, &s.graph, &y, &mut g)?;
            Ok((l, g))
        })
        .collect::<Result<_>>()?;
    let mut total = Gradients::zeros_like(model);
    let mut loss = T::zero();
    for (l, g) in &parts {
        loss += *l;
        total.add_assign(g);
    }
    Ok((loss, total))
}

/// Loss and its gradient: exact for the squared-error term, `λ·sign(w)` for the penalty.
pub fn gradients<T: Real>(
    model: &ModelSpec<T>,
    batch: &[LabeledGraph],
    lambda: T,
) -> Result<(T, Gradients<T>)> {
    check_labels(model, batch)?;
    let refs: Vec<&LabeledGraph> = batch.iter().collect();
    let (data, mut g) = data_gradients(model, &refs)?;
    g.add_l1(model, lambda);
    Ok((data + lambda * l1_norm(model), g))
}

/// `w ← w − lr·g` for every stored weight and bias.
pub fn sgd_step<T: Real>(model: &mut ModelSpec<T>, grads: &Gradients<T>, lr: T) {
    for (l, g) in model.linears_mut().into_iter().zip(&grads.blocks) {
        for (k, &gk) in g.weights.iter().enumerate() {
            *l.weight_mut(k) -= lr * gk;
        }
        l.bias
            .iter_mut()
            .zip(&g.bias)
            .for_each(|(b, &gb)| *b -= lr * gb);
    }
}

/// Fraction of samples whose predicted class equals the label.
pub fn accuracy<T: Real>(model: &ModelSpec<T>, data: &[LabeledGraph]) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let hits: Vec<bool> = data
        .par_iter()
        .map(|s| Ok(model.predict(&s.graph)? == s.label))
        .collect::<Result<_>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / data.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Summed data loss over the epoch's batches plus `λ Σ|w|` at epoch end.
    pub loss: f64,
    pub train_acc: f64,
    pub test_acc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelSpec<f32>,
    pub history: Vec<EpochStats>,
}

pub fn train(
    model: &ModelSpec<f32>,
    train_set: &[LabeledGraph],
    test_set: Option<&[LabeledGraph]>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with(model, train_set, test_set, cfg, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    model: &ModelSpec<f32>,
    train_set: &[LabeledGraph],
    test_set: Option<&[LabeledGraph]>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model.validate()?;
    check_labels(model, train_set)?;
    let mut model = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let lr = cfg.learning_rate as f32;
    let lambda = cfg.lambda as f32;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&LabeledGraph> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (l, mut g) = data_gradients(&model, &batch)?;
            if !l.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    loss: l as f64,
                });
            }
            epoch_loss += l as f64;
            g.add_l1(&model, lambda);
            sgd_step(&mut model, &g, lr);
        }
        let loss = epoch_loss + cfg.lambda * l1_norm(&model) as f64;
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch, loss });
        }
        let stats = EpochStats {
            epoch,
            loss,
            train_acc: accuracy(&model, train_set)?,
            test_acc: test_set.map(|t| accuracy(&model, t)).transpose()?,
        };
        on_epoch(&stats);
        history.push(stats);
    }
    Ok(TrainOutcome { model, history })
}

/// Fraction of stored weights with `|w| < threshold`.
pub fn fraction_below<T: Real>(model: &ModelSpec<T>, threshold: f64) -> f64 {
    let (mut below, mut total) = (0usize, 0usize);
    for l in model.linears() {
        for k in 0..l.num_weights() {
            total += 1;
            below += usize::from(l.weight(k).abs().as_f64() < threshold);
        }
    }
    if total == 0 {
        0.0
    } else {
        below as f64 / total as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerDensity {
    pub layer: String,
    pub rows: usize,
    pub cols: usize,
    pub nnz: usize,
    pub density: f64,
}

pub fn density_report<T: Real>(model: &ModelSpec<T>) -> Vec<LayerDensity> {
    model
        .linear_names()
        .into_iter()
        .zip(model.linears())
        .map(|(layer, l)| LayerDensity {
            layer,
            rows: l.rows,
            cols: l.cols,
            nnz: l.nnz(),
            density: l.density(),
        })
        .collect()
}

/// Converts every weight block to triples, dropping `|w| < i_weight`.
/// Biases are kept.
pub fn prune_weights<T: Real>(
    model: &ModelSpec<T>,
    i_weight: f64,
) -> (ModelSpec<T>, Vec<LayerDensity>) {
    let mut pruned = model.clone();
    for l in pruned.linears_mut() {
        *l = l.pruned(i_weight);
    }
    let report = density_report(&pruned);
    (pruned, report)
}

/// Smallest single threshold that brings every weight block to density
/// `<= target`.
pub fn threshold_for_density<T: Real>(model: &ModelSpec<T>, target: f64) -> f64 {
    let mut t = 0.0f64;
    for l in model.linears() {
        let allowed = (target * (l.rows * l.cols) as f64).floor() as usize;
        let mut mags: Vec<f64> = (0..l.num_weights())
            .map(|k| l.weight(k).abs().as_f64())
            .collect();
        if mags.len() <= allowed {
            continue;
        }
        mags.sort_by(|a, b| b.total_cmp(a));
        t = t.max(mags[allowed].next_up());
    }
    t
}
