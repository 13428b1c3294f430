//! Dense pixel-aligned 3D trajectory maps ("motion maps").
//!
//! A motion map stores, for every pixel of a reference video frame, the 3D
//! position of the surface point seen through that pixel at every time step
//! of a short clip, expressed in the reference camera's coordinate frame.
//! Alongside the trajectory tensor it carries a per-entry validity mask, an
//! optional rigid-patch segmentation, optional camera intrinsics/extrinsics,
//! and optional per-pixel reference colors.
//!
//! The crate covers the full life cycle of such maps:
//!
//! * [`types`]   core containers and validation
//! * [`io`]      binary `.momap` serialization with a JSON sidecar
//! * [`synth`]   synthetic rigid-body scene generation and occlusion
//! * [`infill`]  optimization-based completion of occluded trajectories
//! * [`compress`] low-rank temporal compression and `.momapz` serialization
//! * [`metrics`] trajectory quality metrics and best-of-N evaluation
//! * [`render`]  z-buffered point splatting back into image space
//! * [`dsl`]     compact per-patch motion descriptions and pixel grounding

pub mod compress;
pub mod dsl;
pub mod error;
pub mod infill;
pub mod io;
pub mod metrics;
pub mod render;
pub mod synth;
pub mod types;

pub use error::Error;
pub use types::{Camera, MoMap, RigidTransform, SegMap};

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
