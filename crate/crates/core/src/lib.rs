//! Dynamic multi-reference-frame Gaussian splatting for monocular
//! human-centric clips: prior ingestion, shape-aware initialization, joint
//! optimization of per-reference-frame Gaussians with a neural deformation
//! field, and RGB/depth rendering, plus a synthetic-scene generator used as
//! ground truth for end-to-end evaluation.

pub mod adam;
pub mod error;
pub mod io;
pub mod net;
pub mod scene;

pub use error::{Error, Result};
