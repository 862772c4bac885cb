//! femforge: a self-contained 2D finite-element multiphysics kernel.
//!
//! Physics on quad4 meshes: transient heat conduction, solute transport with
//! microstructure drift terms, small-strain J2 elastoplasticity and
//! phase-field fracture, coupled by a staggered scheme. Ships with a batch
//! CLI (`run`, `verify`, `mesh-gen`) writing legacy VTK and CSV output.

pub mod config;
pub mod driver;
pub mod element;
pub mod error;
pub mod fracture;
pub mod heat;
pub mod mechanics;
pub mod mesh;
pub mod output;
pub mod sparse;
pub mod transport;
pub mod verify;

pub use error::{FemError, Result};
