//! Simulation laboratory for excursion-set percolation of Gaussian ensembles
//! on the two-sphere and their planar scaling limits.
//!
//! The crate is organised around a pipeline:
//!
//! * [`spectral`] — covariance kernels and orthogonal-polynomial machinery
//!   (Legendre, Jacobi, Christoffel–Darboux forms, kernel decay bounds);
//! * [`geometry`] — sphere points, caps, squares, exponential map,
//!   iso-latitude grids with adjacency, and square tilings;
//! * [`samplers`] — field realizations for the Kostlan ensemble, random
//!   spherical harmonics, band-limited/monochromatic ensembles, arbitrary
//!   isotropic spectra, and planar limit fields (Bargmann–Fock, plane waves);
//! * [`finite_range`] — coupled finite-range approximations with exactly
//!   vanishing covariance beyond a range `r`, and their error diagnostics;
//! * [`excursion`] — excursion masks, connected-component labeling, giant
//!   components, and crossing/arm/local-uniqueness events;
//! * [`experiments`] — reproducible Monte Carlo campaigns with persisted
//!   records;
//! * [`render`] — equirectangular PPM rendering of excursion overlays.
//!
//! Replicate-level parallelism is provided by `rayon` behind the `parallel`
//! feature (enabled by default); disabling it yields a sequential fallback
//! with byte-identical results.

pub mod error;
pub mod exec;
pub mod excursion;
pub mod experiments;
pub mod finite_range;
pub mod geometry;
pub mod io;
pub(crate) mod numeric;
pub mod render;
pub mod rng;
pub mod samplers;
pub mod spectral;

pub use error::{Error, Result};
