//! Generative topology optimization toolkit.
//!
//! The crate covers the whole "generate, then refine" workflow for 2D
//! minimum-compliance design:
//!
//! - [`fea`]: plane-stress analysis on a regular quad grid.
//! - [`simp`]: optimality-criteria SIMP, used as a full optimizer and as a
//!   few-iteration refiner.
//! - [`kernels`]: closed-form load/support kernels and conditioning stacks.
//! - [`diffusion`]: noise schedules, a small convolutional denoiser, training
//!   and respaced ancestral sampling.
//! - [`guidance`]: floating-material and compliance mean-shift providers.
//! - [`metrics`]: compliance error, volume-fraction error, floating material,
//!   load disrespect and report aggregation.
//! - [`pipeline`]: datasets, the generate/refine/evaluate loop and benchmarks.
//! - [`tensor_io`]: the binary tensor container used for every array on disk.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod components;
pub mod density;
pub mod diffusion;
pub mod error;
pub mod fea;
pub mod guidance;
pub mod kernels;
pub mod metrics;
pub mod pipeline;
pub mod problem;
pub mod simp;
pub mod sparse;
pub mod tensor_io;

pub use density::DensityField;
pub use error::{Error, Result};
pub use fea::{BoundaryConditions, Grid, Loads, Material, PointLoad};
pub use problem::ProblemSpec;
