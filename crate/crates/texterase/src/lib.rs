//! Stroke-based scene text erasing.
//!
//! A synthetic training-data engine, a two-branch erasing network (stroke
//! mask prediction + partial-convolution background inpainting with a
//! global-context attention bottleneck), the full training loss stack, and
//! the crop/rectify/erase/paste inference pipeline, plus the image-quality
//! metrics used to evaluate results.

// Index loops over pixel buffers mirror the math; iterator chains obscure it.
#![allow(clippy::needless_range_loop)]

pub mod cli;
pub mod geom;
pub mod imagecore;
pub mod losses;
pub mod metrics;
pub mod net;
pub mod synthgen;
pub mod trainer;
