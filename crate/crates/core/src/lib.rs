//! Video semantic segmentation with coarse-to-fine temporal context.
//!
//! The crate assembles a compact set of context tokens per spatial window
//! from past frames (coarser the further back in time), refines the target
//! frame's features by attending from window queries to those static
//! tokens, and ships the tooling around that mechanism: a toy end-to-end
//! pipeline on synthetic clips, exact multiply accounting against a full
//! self-attention baseline, and video-consistency/IoU metrics.

pub mod assemble;
pub mod cost;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod mining;
pub mod schedule;
pub mod tensor;

pub use error::{Error, Result};
