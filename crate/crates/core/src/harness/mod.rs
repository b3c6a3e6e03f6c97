//! Experiment plumbing: synthetic data, a toy encoder and model, the
//! training loop, streaming inference, gradient checking, and wall-clock
//! benchmarks. The CLI is a thin wrapper over these functions.

pub mod benchmark;
pub mod clip;
pub mod config;
pub mod encode;
pub mod gradcheck;
pub mod model;
pub mod stream;
pub mod train;
