//! Fault localization from enhanced code-coverage matrices.
//!
//! The pipeline: build per-method coverage matrices, mark error-exhibiting
//! cells from failure messages, reorder test columns so failing/similar tests
//! cluster on the left, combine with statement-dependency embeddings and
//! source-code representations, and classify statements/methods with a small
//! CNN. A synthetic buggy-program generator makes the whole thing trainable
//! and measurable without external instrumentation toolchains.

pub mod code;
pub mod dataset;
pub mod ee;
pub mod embed;
pub mod engine;
pub mod error;
pub mod matrix;
pub mod nn;
pub mod sbfl;
pub mod synth;

pub use error::{CovrankError, Result};
