//! Multi-scale center-aligned pillar voxelization with a decomposable
//! dynamic detection head, built on a minimal dense-tensor core whose
//! backward passes are all hand-written and finite-difference verified.
//!
//! Modules mirror the pipeline: [`pointcloud`] ingests and synthesizes
//! scenes, [`voxelizer`] gathers overlapped multi-scale pillars, [`encoder`]
//! turns them into dense maps, [`fusion`] runs the top-down backbone,
//! [`ddconv`] provides the dynamic head convolution, [`losses`] the
//! detection loss, and [`numcore`]-level pieces ([`tensor`], [`ops`],
//! [`adam`], [`gradcheck`]) supply the numeric substrate.

pub mod adam;
pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod losses;
pub mod model;
pub mod ops;
pub mod ddconv;
pub mod encoder;
pub mod pointcloud;
pub mod tensor;
pub mod train;
pub mod voxelizer;

pub use error::{Error, Result};
pub use tensor::{Dtype, Scalar, Tensor};
