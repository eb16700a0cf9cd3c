//! Scene segmentation for broadcast video shot sequences.
//!
//! Shots are embedded by a twin-branch network with shared weights, the
//! pairwise embedding distances become a Gaussian similarity matrix, and
//! spectral clustering groups adjacent shots into scenes. The [`metrics`]
//! module scores a detected segmentation against ground truth with
//! Coverage/Overflow, their F-score and the intersection-over-union measure.

pub mod cluster;
pub mod error;
pub mod features;
pub mod kmeans;
pub mod linalg;
pub mod metrics;
pub mod siamese;
pub mod timeline;

pub use error::{Error, Result};
