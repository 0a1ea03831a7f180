//! Min-sum belief propagation for constraint optimization, with damping
//! factors and neighbor weights inferred online by a recurrent graph-attention
//! model.
//!
//! The crate is organized bottom-up:
//!
//! - [`factor_graph`]: instances, factor graphs, generators, file format
//! - [`bp_engine`]: synchronous min-sum message passing
//! - [`diff`]: tape-based reverse-mode differentiation and Adam
//! - [`model`]: the hyperparameter-inference network
//! - [`trainer`]: smoothed-cost loss and the online restart loop
//! - [`oracle`]: exhaustive ground truth for small instances

pub mod bp_engine;
pub mod diff;
pub mod factor_graph;
pub mod model;
pub mod oracle;
pub mod trainer;
