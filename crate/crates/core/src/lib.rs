//! GAMLP: graph attention multi-layer perceptron.
//!
//! Features and training labels are propagated over a normalized adjacency
//! once, before training. A per-node attention then weighs the propagated
//! steps, and two MLPs (one per branch) turn the combinations into class
//! logits. Training never touches the graph, so every node is an independent
//! row.
//!
//! The usual flow is [`data::load_dataset`] or [`data::generate_sbm`], then
//! [`pipeline::prepare`] and [`pipeline::train`].

pub mod config;
pub mod data;
pub mod error;
pub mod experiments;
pub mod graph;
pub mod matrix;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod propagation;

pub use error::{Error, Result};
pub use matrix::Matrix;

// The guide's code blocks run as doc-tests, one module per chapter.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/propagation.md")]
    mod propagation {}
    #[doc = include_str!("../../../book/src/attention.md")]
    mod attention {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
