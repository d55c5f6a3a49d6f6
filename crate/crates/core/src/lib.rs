//! Training-free motion segmentation of tracked object proposals.
//!
//! Each proposal gets a parametric flow model per frame pair, fitted to its
//! optical flow and relative inverse depth. Cross-object residuals feed an
//! ordered-residual-kernel affinity that is spectrally clustered into a
//! fixed number of motion groups. A rigid-scene simulator renders exact
//! ground truth for end-to-end checks.

pub mod affinity;
pub mod cli;
pub mod clustering;
pub mod cues;
pub mod error;
pub mod evaluation;
pub mod motion_model;
pub mod pipeline;
pub mod proposal_filter;
pub mod seed;
pub mod synthetic;

pub use error::{Error, Result};
