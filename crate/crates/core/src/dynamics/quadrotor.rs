//! Planar quadrotor in the vertical y–z plane with two thrust inputs and a
//! quadratic wind drag force.
//!
//! State layout: `[y, z, θ, ẏ, ż, θ̇]`, inputs `[T₁, T₂]`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{check_dim, Plant};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadrotorParams {
    /// Vehicle mass (kg).
    pub mass: f64,
    /// Rotational inertia (kg·m²).
    pub inertia: f64,
    /// Propeller arm length (m).
    pub arm_length: f64,
    /// Gravitational acceleration (m/s²).
    pub gravity: f64,
    /// Wind drag coefficient (kg/m).
    pub drag_coeff: f64,
    /// Wind speed (m/s).
    pub wind_speed: f64,
    /// Wind direction, counterclockwise from the +y axis (rad).
    pub wind_direction: f64,
}

impl QuadrotorParams {
    /// Nominal training configuration: no wind.
    pub fn standard() -> Self {
        QuadrotorParams {
            mass: 2.0,
            inertia: 1.0,
            arm_length: 0.2,
            gravity: 9.81,
            drag_coeff: 0.1,
            wind_speed: 0.0,
            wind_direction: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0 && self.inertia > 0.0 && self.arm_length > 0.0) {
            return Err(Error::config(
                "quadrotor mass, inertia, and arm length must be positive",
            ));
        }
        if self.drag_coeff < 0.0 || self.wind_speed < 0.0 {
            return Err(Error::config(
                "quadrotor drag coefficient and wind speed must be non-negative",
            ));
        }
        Ok(())
    }

    /// Planar wind drag force `K·v_w²·(cos α_w, sin α_w)`.
    pub fn wind_force(&self) -> [f64; 2] {
        let magnitude = self.drag_coeff * self.wind_speed * self.wind_speed;
        [
            magnitude * self.wind_direction.cos(),
            magnitude * self.wind_direction.sin(),
        ]
    }

    /// Per-rotor thrust that balances gravity at level attitude.
    pub fn hover_thrust(&self) -> f64 {
        self.mass * self.gravity / 2.0
    }
}

pub fn quadrotor_deriv(
    x: &DVector<f64>,
    u: &DVector<f64>,
    p: &QuadrotorParams,
) -> Result<DVector<f64>> {
    check_dim("quadrotor_deriv state", 6, x.len())?;
    check_dim("quadrotor_deriv input", 2, u.len())?;
    let theta = x[2];
    let thrust = u[0] + u[1];
    let [fw_y, fw_z] = p.wind_force();

    let mut dx = DVector::zeros(6);
    dx[0] = x[3];
    dx[1] = x[4];
    dx[2] = x[5];
    dx[3] = -thrust * theta.sin() / p.mass + fw_y / p.mass;
    dx[4] = thrust * theta.cos() / p.mass - p.gravity + fw_z / p.mass;
    dx[5] = p.arm_length * (u[1] - u[0]) / p.inertia;
    Ok(dx)
}

#[derive(Debug, Clone)]
pub struct PlanarQuadrotor {
    pub params: QuadrotorParams,
}

impl PlanarQuadrotor {
    pub fn new(params: QuadrotorParams) -> Result<Self> {
        params.validate()?;
        Ok(PlanarQuadrotor { params })
    }
}

impl Plant for PlanarQuadrotor {
    fn state_dim(&self) -> usize {
        6
    }

    fn input_dim(&self) -> usize {
        2
    }

    fn name(&self) -> &'static str {
        "planar-quadrotor"
    }

    fn deriv(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        quadrotor_deriv(x, u, &self.params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn hover_is_an_equilibrium() {
        let p = QuadrotorParams::standard();
        let t = p.hover_thrust();
        let x = DVector::zeros(6);
        let dx = quadrotor_deriv(&x, &DVector::from_vec(vec![t, t]), &p).unwrap();
        assert!(dx.norm() < 1e-14);
    }

    #[test]
    fn wind_force_matches_direct_evaluation() {
        let mut p = QuadrotorParams::standard();
        p.wind_speed = 3.0;
        p.wind_direction = std::f64::consts::FRAC_PI_4;
        let [fy, fz] = p.wind_force();
        // K·v² = 0.9 at 45°.
        assert_relative_eq!(fy, 0.636396103067892, max_relative = 1e-12);
        assert_relative_eq!(fz, 0.636396103067892, max_relative = 1e-12);

        let t = p.hover_thrust();
        let dx =
            quadrotor_deriv(&DVector::zeros(6), &DVector::from_vec(vec![t, t]), &p).unwrap();
        assert_relative_eq!(dx[3], fy / p.mass, max_relative = 1e-12);
        assert_relative_eq!(dx[4], fz / p.mass, max_relative = 1e-12);
    }

    #[test]
    fn differential_thrust_gives_exact_angular_acceleration() {
        let p = QuadrotorParams::standard();
        let u = DVector::from_vec(vec![8.0, 11.5]);
        let dx = quadrotor_deriv(&DVector::zeros(6), &u, &p).unwrap();
        assert_relative_eq!(
            dx[5],
            p.arm_length * (u[1] - u[0]) / p.inertia,
            epsilon = 1e-15
        );
    }

    #[test]
    fn deriv_rejects_bad_dimensions() {
        let p = QuadrotorParams::standard();
        assert!(quadrotor_deriv(&DVector::zeros(5), &DVector::zeros(2), &p).is_err());
        assert!(quadrotor_deriv(&DVector::zeros(6), &DVector::zeros(3), &p).is_err());
    }
}
