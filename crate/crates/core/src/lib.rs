//! Randomized multiresolution scanning (RAMUS) for sparse E/MEG source
//! reconstruction with a hierarchical Bayesian prior.
//!
//! The crate bundles a spherical-head forward model, the IAS MAP solver,
//! random coarse-to-fine source decompositions, the RAMUS driver and a
//! seeded experiment harness.

pub mod error;
pub mod experiment;
pub mod forward;
pub mod hbm;
pub mod multires;
pub mod ramus;
pub mod seeds;

pub use nalgebra;

pub use error::{Error, Result};
pub use forward::{
    build_upper_hemisphere_sensors, combine_emeg, eeg_sphere_leadfield, generate_source_space, load_leadfield,
    meg_radial_leadfield, save_leadfield, Dipole, LeadField, Modality, Point3, SensorArray, SensorKind, SourceSpace,
};
pub use hbm::{ias_map, ias_theta_update, ias_x_update, HyperpriorConfig, HyperpriorFamily, IasState};
pub use multires::{build_decomposition, prolong, restrict_leadfield, restrict_vector, MultiresDecomposition, ResolutionLevel};
pub use ramus::{ramus_reconstruct, reconstruction_summary, RamusConfig, Reconstruction};
