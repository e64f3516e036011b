//! Language-guided camouflaged object segmentation.
//!
//! The network extracts a four-scale feature pyramid, grounds a text prompt
//! into a coarse object mask that gates those features, derives edge
//! features with a Fourier high-pass, and decodes coarse-to-fine with
//! guided linear attention and quadrant-wise local refinement.

pub mod backbone;
pub mod cglrm;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod feem;
pub mod fft;
pub mod grounding;
pub mod loss;
pub mod network;
pub mod nn;
pub mod ops;
pub mod saam;
pub mod train;

pub use config::{AblationFlags, RunConfig};
pub use error::{LgsanError, Result};
pub use network::{Lgsan, LossBreakdown, Output, Predictions};
