//! Lightweight grid-graph GNN for SAR automatic target recognition.
//!
//! The crate covers the whole pipeline: turning grayscale images into pruned
//! 4-neighbour grid graphs, a golden reference GNN (GraphSAGE layers, channel
//! and spatial attention, grid max-pooling, zero-padded flatten, MLP head),
//! lasso training with weight pruning, and a functional simulator plus
//! analytic cycle model of a scatter-gather accelerator with its two
//! load-balancing partitioners.

pub mod accel;
pub mod activation;
pub mod dataset;
pub mod error;
pub mod features;
pub mod graph;
pub mod image;
pub mod model;
pub mod partition;
pub mod real;
pub mod trainer;
pub mod weights;

pub use error::{Error, Result};
pub use features::{FeatureMatrix, Layout};
pub use graph::{build_graph, GridGraph};
pub use image::Image;
pub use model::ModelSpec;
pub use real::Real;
