//! Graph neural networks that diffuse node signals over learned flat vector
//! bundles, together with the numerical substrate to train and verify them.
//!
//! The crate is organized bottom-up:
//!
//! - [`graph`]: immutable graphs, Laplacian operators, synthetic generators,
//!   positional encodings;
//! - [`linalg`]: Jacobi symmetric eigensolver and dense matrix exponential;
//! - [`tensor`]: dense tensors with reverse-mode differentiation on a tape;
//! - [`bundle`]: orthogonal-map parameterizations and flat-bundle operators;
//! - [`heat`]: graph and bundle heat-kernel actions (Taylor, spectral,
//!   infinite-time limit) plus dense oracles;
//! - [`model`]: the bundle diffusion layer and full model, including the
//!   closed-form constructions used to verify its theory;
//! - [`baselines`]: MLP/GCN/GraphSAGE/GAT message-passing baselines;
//! - [`train`]: Adam and the deterministic training loop;
//! - [`synthetic`]: dataset generators for the averaging and
//!   neighbors-match tasks;
//! - [`experiment`]: experiment orchestration and CSV/JSON result emission.

pub mod baselines;
pub mod bundle;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod heat;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod synthetic;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::Graph;
