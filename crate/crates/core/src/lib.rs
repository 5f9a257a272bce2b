//! Stylized data-to-text generation.
//!
//! Attribute-value pairs are ordered by a GRU planner that reads GCN-refined
//! pair embeddings over a corpus-derived logic graph, encoded in plan order,
//! and decoded by a transformer conditioned on a style vector extracted from
//! a reference text. Training adds gated pseudo triplets for the style each
//! instance lacks.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod data_encoder;
pub mod error;
pub mod evaluation;
pub mod exec;
pub mod gate;
pub mod generator;
pub mod logic_graph;
pub mod model;
pub mod nn;
pub mod planner;
pub mod style_embedder;
pub mod training;

pub use error::{Error, Result};
pub use model::{Ablations, Model, ModelConfig, StyleMode};
pub use training::{train, TrainConfig};
