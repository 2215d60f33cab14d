//! A desk-scale plain graph transformer built from first principles.
//!
//! The crate provides, bottom-up:
//!
//! - [`tensor`]: a dense f64 tensor engine with reverse-mode automatic
//!   differentiation and finite-difference gradient checking;
//! - [`optim`]: AdamW and a warmup + cosine-annealing schedule;
//! - [`graph`]: immutable undirected graphs, permutations, BFS subgraph
//!   extraction, and a curated bank of hard-to-distinguish graph pairs;
//! - [`rational`]: exact rational matrices backing the random-walk oracle;
//! - [`pe`]: relative random walk probability (RRWP) positional encodings
//!   with sinusoidal enhancement and auxiliary feature injection;
//! - [`norm`]: LayerNorm, RMSNorm, adaptive RMSNorm, and 1-D BatchNorm;
//! - [`attention`]: scaled dot-product, cosine, simplified-L2, and
//!   simplified-L2 + URPE attention;
//! - [`stem`] and [`backbone`]: the node/PE stems, pre-norm transformer
//!   blocks, and prediction heads assembled into a full model;
//! - [`wl`]: exact 1-WL and generalized-distance WL color refinement with
//!   collision-free fingerprints;
//! - [`harness`]: the expressivity protocol over the pair bank, the
//!   normalization autoencoder case study, and sensitivity sweeps.

pub mod attention;
pub mod backbone;
pub mod bank;
pub mod error;
pub mod graph;
pub mod harness;
pub mod norm;
pub mod optim;
pub mod pe;
pub mod rational;
pub mod rng;
pub mod stem;
pub mod tensor;
pub mod wl;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::{grad_check, grad_check_named, Tape, Tensor};
