//! Monocular open-set semantic Gaussian-splatting SLAM at desk scale.
//!
//! The crate renders color and semantic feature fields from a 3D Gaussian
//! map, tracks cameras with ray-error matching, converts multi-granularity
//! masks into scale-conditioned supervision, grounds low-dimensional features
//! in a language-embedding memory bank, and optimizes the combined objective.
//! Synthetic oracle scenes stand in for the foundation-model inputs.

pub mod dataset_io;
pub mod error;
pub mod geometry;
pub mod image;
pub mod objectives;
pub mod pipeline_eval;
pub mod scale_supervision;
pub mod scene_synth;
pub mod semantic_memory;
pub mod splatting;
pub mod tracking;

pub use error::{Error, Result};
pub use geometry::{Intrinsics, Pose};
pub use image::Image;
