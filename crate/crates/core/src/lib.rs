//! Segmentation-driven visual object tracking.

pub mod boxfit;
mod error;
pub mod eval;
pub mod features;
pub mod geometry;
pub mod gem;
pub mod gim;
pub mod harness;
pub mod network;
pub mod nn;
pub mod refine;
pub mod synth;
pub mod tracker;
pub mod train;

pub use error::{Error, Result};
