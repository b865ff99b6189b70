//! Thermal simulation of single-track laser powder bed fusion with a
//! finite-difference reference solver and a physics-informed neural surrogate
//! that the solver periodically corrects.
//!
//! The crate is organised bottom-up:
//!
//! * [`material`] – temperature- and phase-dependent SS 316L properties,
//!   apparent heat capacity and volumetric enthalpy.
//! * [`grid`] – half-symmetry domain, graded structured grid and collocation
//!   sampling.
//! * [`solver`] – backward-Euler/Picard heat conduction with a moving Gaussian
//!   source, used as oracle and corrector.
//! * [`nn`] – a tanh MLP with exact first/second input derivatives, parameter
//!   gradients through them, Glorot initialisation and Adam.
//! * [`pinn`] – the four training losses, the melt-state ledger and training.
//! * [`hybrid`] – train → infer → correct → retrain orchestration and
//!   cost accounting.
//! * [`io`] – configuration, checkpoints, field export and metrics.
//! * [`verify`] – solver convergence/conservation and autodiff self-checks.

pub mod error;
pub mod grid;
pub mod hybrid;
pub mod io;
pub mod material;
pub mod nn;
pub mod pinn;
pub mod solver;
pub mod verify;

pub use error::{Error, Result};

/// Micrometres to metres.
pub const UM: f64 = 1e-6;
/// Microseconds to seconds.
pub const US: f64 = 1e-6;
