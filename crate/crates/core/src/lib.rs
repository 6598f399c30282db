//! Thermal infrared face matching from facial vessel networks.
//!
//! The pipeline segments the face, enhances fine detail with anisotropic
//! diffusion, fits an ensemble of active appearance models to bring faces
//! into a canonical frame, extracts multi-scale vesselness signatures and
//! compares them with normalized cross-correlation.

pub mod aam;
pub mod enhance;
pub mod ensemble;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod imgcore;
pub mod matching;
pub mod segment;
pub mod vesselness;

pub use error::{Error, Result};
