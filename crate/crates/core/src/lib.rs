//! Exact emulation of quantum vortex detection (QVD).
//!
//! Vorticity fields are amplitude encoded into statevectors and processed by
//! shift, permutation and Fourier operators:
//!
//! * [`flowgen`] builds synthetic Lamb-Oseen datasets;
//! * [`qstate`] holds the statevector and its linear maps;
//! * [`seqqvd`] runs sliding-window detection with contour power spectra;
//! * [`parqvd`] computes density spectra of the position-parallel circuit;
//! * [`trainer`] fits the detection parameters;
//! * [`classifier`] separates vortical from non-vortical density spectra;
//! * [`io`] reads and writes datasets and renders heatmaps;
//! * [`cli`] is the `qvd` command-line front end.

pub mod classifier;
pub mod cli;
pub mod error;
pub mod flowgen;
pub mod io;
pub mod parqvd;
pub mod qstate;
pub mod rng;
pub mod seqqvd;
pub mod trainer;

pub use error::{Error, Result};
