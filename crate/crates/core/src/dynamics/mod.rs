//! Ground-truth nonlinear plant simulators with uncertainty, disturbance,
//! and sensor-noise injection.
//!
//! All plants are pure functions over value inputs; RNG streams are passed
//! in explicitly. State layouts are documented per plant.

mod manipulator;
mod noise;
mod pendulum;
mod quadrotor;

pub use manipulator::{manipulator_deriv, Manipulator, ManipulatorParams};
pub use noise::{DisturbanceSpec, NoiseSpec};
pub use pendulum::{pendulum_deriv, single_pendulum_deriv, PendulumChain, PendulumChainParams};
pub use quadrotor::{quadrotor_deriv, PlanarQuadrotor, QuadrotorParams};

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Continuous-time plant model `ẋ = f(x, u)`.
pub trait Plant {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn name(&self) -> &'static str;
    fn deriv(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>>;
}

/// Classical fourth-order Runge–Kutta update with the input held constant
/// over the step (zero-order hold).
pub fn rk4_step<F>(deriv: F, x: &DVector<f64>, u: &DVector<f64>, dt: f64) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>, &DVector<f64>) -> Result<DVector<f64>>,
{
    if dt <= 0.0 {
        return Err(Error::config("rk4_step requires dt > 0"));
    }
    let k1 = deriv(x, u)?;
    let k2 = deriv(&(x + &k1 * (dt / 2.0)), u)?;
    let k3 = deriv(&(x + &k2 * (dt / 2.0)), u)?;
    let k4 = deriv(&(x + &k3 * dt), u)?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0))
}

/// Advance a plant by one control period of length `dt` using `substeps`
/// inner RK4 steps, input held constant throughout.
///
/// Inner substeps keep fast modes (the stiff pendulum-chain springs) stable
/// at the 0.01 s loop period.
pub fn integrate(
    plant: &dyn Plant,
    x: &DVector<f64>,
    u: &DVector<f64>,
    dt: f64,
    substeps: usize,
) -> Result<DVector<f64>> {
    if substeps == 0 {
        return Err(Error::config("integrate requires at least one substep"));
    }
    let h = dt / substeps as f64;
    let mut cur = x.clone();
    for step in 0..substeps {
        cur = rk4_step(|x, u| plant.deriv(x, u), &cur, u, h)?;
        if cur.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical(format!(
                "{} produced a non-finite state at substep {step}",
                plant.name()
            )));
        }
    }
    Ok(cur)
}

pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}
