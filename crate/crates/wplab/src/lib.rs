//! A desk-scale laboratory for parameter-space causal analysis of paired
//! transformers.
//!
//! The crate builds a small decoder-only transformer (GQA attention, SwiGLU
//! MLP, RMSNorm, RoPE) whose residual stream decomposes into per-head and
//! per-neuron write-back contributions, then layers the full analysis stack
//! on top of paired base/specialized models:
//!
//! - [`tensor`] / [`autodiff`]: row-major f32 tensors and a recorded-operation
//!   reverse-mode engine, with a double-precision finite-difference oracle.
//! - [`model`] / [`forward`] / [`grad`]: the toy transformer, residual traces
//!   with component capture/replacement hooks, and taped forwards for
//!   gradients of scalar utilities.
//! - [`workshop`]: synthetic instruction tasks, paired base/specialized
//!   training, and ground-truth planted component edits.
//! - [`anchor`]: task-direction extraction, anchor-layer selection, the
//!   anchor utility, and calibrated steering.
//! - [`patching`]: exact weight patching, cross-model activation patching,
//!   and knockout, all scored through the shared anchor criterion.
//! - [`attribution`]: first-order weight/activation attribution, top-K
//!   screening, overlap metrics, and the static parameter-drift profile.
//! - [`hierarchy`]: need directions, supplier link strength, source
//!   validation, downstream execution readouts, and circuit assembly.
//! - [`fusion`]: score-guided component-wise model merging with GQA KV-group
//!   handling and structure-agnostic fallback averaging.
//! - [`checkpoint`] / [`config`] / [`score`] / [`pipeline`]: flat binary
//!   checkpoints, run configuration, score tables, and the staged pipeline
//!   driven by the `wplab` binary and the runnable examples.

pub mod anchor;
pub mod attribution;
pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod forward;
pub mod fusion;
pub mod grad;
pub mod hierarchy;
pub mod model;
pub mod patching;
pub mod pipeline;
pub mod score;
pub mod tensor;
pub mod workshop;

pub use error::{Error, Result};
