//! Core library for deep brain structure segmentation and transcranial
//! current stimulation modelling on regular voxel grids.
//!
//! The crate is organised as a pipeline:
//!
//! * [`volume`] — voxel volumes (scalar images and label maps), slicing along
//!   the three anatomical axes, and synthetic phantom generation.
//! * [`network`] — a single-encoder, multi-decoder convolutional network that
//!   segments one 2D slice into `N` binary structure maps, trained with ADAM
//!   on a binary cross-entropy loss. Three independent networks (one per
//!   anatomical plane) are trained and fused downstream.
//! * [`fusion`] — per-slice probability-map labelling and the three-direction
//!   majority fuse that combines the axial, sagittal and coronal results.
//! * [`metrics`] — segmentation overlap and surface distances plus electric
//!   field comparison errors.
//! * [`conductor`] — tissue conductivity assignment and sponge-electrode
//!   placement, producing a montage ready for the field solver.
//! * [`spfd`] — the scalar-potential finite-difference solver: system
//!   assembly on the node grid, SOR and geometric multigrid solvers, electric
//!   field computation and current audits.
//!
//! Everything is deterministic: the same inputs, seeds and configuration
//! reproduce bit-identical volumes, checkpoints and solver outputs.

/// Data files bundled with the crate.
pub mod assets {
    /// Seven-ellipsoid deep-structure phantom inside a two-shell head.
    pub const DEEP7_PHANTOM_JSON: &str = include_str!("../assets/deep7.json");
    /// Head tissue conductivity table (19 tissues + electrode materials).
    pub const HEAD_TISSUES_JSON: &str = include_str!("../assets/tissues.json");
    /// Plate-electrode montage across the z faces (analytic slab benchmark).
    pub const SLAB_PLATES_JSON: &str = include_str!("../assets/slab_plates.json");
}

pub mod conductor;
pub mod error;
pub mod fusion;
pub mod metrics;
pub mod network;
pub mod spfd;
pub mod volume;

pub use error::{Error, Result};
