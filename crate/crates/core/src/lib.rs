//! Ensemble summarization for uncertain gridded fields.
//!
//! Two pipelines share the data model in [`grid`]:
//!
//! * statistical direct volume rendering: per-voxel distributions fitted by
//!   [`noise`] are classified through a [`tf::TransferFunction`] in
//!   expectation and composited by the CPU raycaster in [`render`];
//! * probabilistic Morse maps: each 2D member is segmented into
//!   gradient-destination cells ([`morse`]), maxima are associated across
//!   members ([`labeling`]) and summarized per pixel ([`pmap`]).
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the CLI and
//! the HTTP service live in the `eddyscope` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod error;
pub mod features;
pub mod grid;
pub mod image;
pub mod labeling;
pub mod morse;
pub mod noise;
pub mod pmap;
pub mod render;
pub mod rng;
pub mod synth;
pub mod tf;
mod unionfind;

pub use error::{Error, Result};
pub use grid::{Dims, Ensemble, ScalarGrid, VectorGrid};
pub use image::Image;
pub use noise::{DistributionSummary, ModelKind, PointDistribution};
pub use tf::TransferFunction;
