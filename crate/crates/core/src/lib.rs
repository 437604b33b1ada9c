//! Multimodal graph-attention fusion for fake news classification.
//!
//! A news sample becomes a small complete graph whose nodes are text and
//! image embeddings. A shared projection maps both modalities into one space,
//! a graph attention layer mixes them, and a mean-pooled graph vector feeds a
//! two-layer classifier.

pub mod autodiff;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod io;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, ErrorClass, Result};
pub use graph::{
    build_multimodal_graph, build_unimodal_graph, resize_visual_feature, BatchedGraph, Modality,
    MultimodalGraph, TEXT_DIM, VISUAL_RAW_DIM,
};
pub use io::{DatasetManifest, SampleBundle, Split};
pub use model::{GameOn, ModelConfig, Prediction, Variant};
pub use tensor::{Real, Tensor};
