//! Continuous-time discrete diffusion for categorical graphs.
//!
//! Graphs are corrupted by independent per-node and per-pair Markov chains
//! ([`ctmc`]), a message-passing network learns to predict the clean graph
//! ([`backbone`], trained by [`trainer`]), and new graphs are generated by
//! tau-leaping the reverse chain ([`sampler`]). [`metrics`] scores generated
//! sets against held-out data.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod backbone;
pub mod checkpoint;
pub mod config;
pub mod ctmc;
pub mod dataset;
pub mod denoise;
pub mod error;
pub mod graph;
pub mod iso;
pub mod jsonl;
pub mod linalg;
pub mod metrics;
pub mod rng;
pub mod sampler;
pub mod trainer;

pub use error::{Error, Result};
