//! Adaptive Koopman surrogate models for nonlinear control-affine systems.
//!
//! The crate is organized along the pipeline it implements:
//!
//! * [`dynamics`] — ground-truth plant simulators (coupled pendulum chain,
//!   planar 3R manipulator, planar quadrotor) with parameter perturbation,
//!   input disturbances, and measurement noise.
//! * [`neural`] — a small dense-network engine (forward, reverse-mode
//!   gradients, Adam) sized for the lifting networks used here.
//! * [`koopman`] — lifted linear/bilinear model types, prediction kernels,
//!   and model-file serialization.
//! * [`offline`] — nominal dataset generation and offline training of the
//!   nominal Koopman model.
//! * [`adapt`] — online estimation of additive model corrections
//!   (ΔA, ΔB) over a sliding window of prediction residuals.
//! * [`mpc`] — reference-tracking MPC on the lifted model: QP construction,
//!   an operator-splitting (ADMM) QP solver, and an SQP loop for the
//!   bilinear mode.
//! * [`harness`] — closed-loop experiment runner, reference generators,
//!   tracking metrics, and robustness sweeps.

pub mod adapt;
pub mod dynamics;
pub mod error;
pub mod harness;
pub mod koopman;
pub mod mpc;
pub mod neural;
pub mod offline;

pub use error::{Error, Result};
pub use nalgebra::{DMatrix, DVector};
