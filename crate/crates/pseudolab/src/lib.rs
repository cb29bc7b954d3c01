//! pseudolab — a self-training pseudo-label engine over synthetic detection
//! worlds.
//!
//! The pipeline couples a toy differentiable student detector with two
//! teachers: an EMA shadow of the student that proposes and refines boxes,
//! and an external embedding-based classifier that names them. Pseudo-labels
//! flow through jitter-variance box filters into a dynamic, category-indexed
//! label queue that is sampled back into training.
//!
//! Modules:
//! - [`geometry`] — horizontal/rotated box arithmetic, IoU, NMS, patch grids.
//! - [`annotations`] — DOTA-style annotation parsing, vocabularies, datasets.
//! - [`classifier`] — prompt-template embeddings and cosine classifier head.
//! - [`selection`] — RPN/RJV/BJV/SJV/AJV confidence scores and keep policies.
//! - [`queue`] — the dynamic label queue with class-balanced sampling.
//! - [`model`] — the toy student, analytic gradients, SGD, EMA teacher.
//! - [`eval`] — AP/AR/HM detection metrics and PR-curve export.
//! - [`sim`] — synthetic world generation, the training loop, ablations.

pub mod annotations;
pub mod classifier;
pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod model;
pub mod queue;
pub mod rng;
pub mod selection;
pub mod sim;

pub use error::{Error, Result};
pub use geometry::{BoxAny, HBox, OBox};
