//! Schema-alignment meta-learning for few-shot tabular classification.
//!
//! A small permutation-equivariant network maps each task's predictor
//! block to a row-stochastic reordering matrix, which places the task's
//! features into a fixed-width shared space. A plain feed-forward
//! classifier operates on that space, and Reptile learns a joint
//! initialization for both across tasks whose feature sets differ.
//!
//! Module map:
//! - [`grid`], [`autodiff`], [`params`]: dense grids, reverse-mode
//!   differentiation, parameter stores and optimizers.
//! - [`encoder`]: the reordering network and the alignment operator.
//! - [`base_model`]: the classifier on the aligned space.
//! - [`data`], [`sampler`]: dataset ingestion, splits and task sampling.
//! - [`reorder`]: supervised pretraining of the reordering network.
//! - [`meta`]: Reptile meta-training, variants and evaluation.
//! - [`stats`]: aggregation, Wilcoxon signed-rank, Holm, mean ranks.
//! - [`experiment`]: the end-to-end pipeline behind the CLI.

pub mod autodiff;
pub mod base_model;
pub mod checkpoint;
pub mod data;
pub mod encoder;
pub mod error;
pub mod experiment;
pub mod grid;
pub mod meta;
pub mod params;
pub mod reorder;
pub mod rng;
pub mod sampler;
pub mod stats;
pub mod synthetic;

pub use error::{Error, Result};
pub use grid::ValueGrid;
