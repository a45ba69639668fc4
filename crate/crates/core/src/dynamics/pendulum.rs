//! Coupled pendulum chain: a one-dimensional array of identical pendulums
//! with shared pivots, adjacent pairs coupled by torsion springs with
//! viscous dissipation. Only pendulum 1 is actuated.
//!
//! State layout: `[θ₁, θ̇₁, θ₂, θ̇₂, …, θ_N, θ̇_N]`.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_dim, Plant};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PendulumChainParams {
    /// Number of pendulums in the chain (≥ 2).
    pub count: usize,
    /// Bob mass (kg).
    pub mass: f64,
    /// Pendulum length (m).
    pub length: f64,
    /// Moment of inertia about the pivot (kg·m²).
    pub inertia: f64,
    /// Viscous damping at each pivot (N·m·s/rad).
    pub pivot_damping: f64,
    /// Viscous dissipation in the couplings (N·m·s/rad).
    pub coupling_damping: f64,
    /// Torsion stiffness of the springs coupling adjacent pendulums (N·m/rad).
    pub stiffness: f64,
    /// Gravitational acceleration (m/s²).
    pub gravity: f64,
}

impl PendulumChainParams {
    /// Five-pendulum chain used throughout the synchronization experiments.
    /// Inertia defaults to m·l² (point bob).
    pub fn synchronization_benchmark() -> Self {
        let mass = 0.017;
        let length = 0.1;
        PendulumChainParams {
            count: 5,
            mass,
            length,
            inertia: mass * length * length,
            pivot_damping: 3.195_633_2e-4,
            coupling_damping: 6.819e-4,
            stiffness: 0.079,
            gravity: 9.81,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.count < 2 {
            return Err(Error::config("pendulum chain needs at least 2 pendulums"));
        }
        let positive = [
            self.mass,
            self.length,
            self.inertia,
            self.pivot_damping,
            self.coupling_damping,
            self.stiffness,
            self.gravity,
        ];
        if positive.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::config(
                "pendulum chain physical parameters must be strictly positive",
            ));
        }
        Ok(())
    }

    /// Static parametric uncertainty: each constant (I, m, l, γ, κ, b) is
    /// independently multiplied by `1 ± delta_pct/100`, the sign drawn
    /// uniformly from `rng`. Deterministic for a fixed stream.
    pub fn perturbed<R: Rng + ?Sized>(&self, delta_pct: f64, rng: &mut R) -> Result<Self> {
        if !(0.0..100.0).contains(&delta_pct) {
            return Err(Error::config("delta_pct must lie in [0, 100)"));
        }
        let mut flip = |nominal: f64| {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            nominal * (1.0 + sign * delta_pct / 100.0)
        };
        Ok(PendulumChainParams {
            count: self.count,
            inertia: flip(self.inertia),
            mass: flip(self.mass),
            length: flip(self.length),
            pivot_damping: flip(self.pivot_damping),
            stiffness: flip(self.stiffness),
            coupling_damping: flip(self.coupling_damping),
            gravity: self.gravity,
        })
    }
}

/// Uncoupled single-pendulum drift: `[θ̇, −(mgl/I)·sin θ − (γ/I)·θ̇]`.
pub fn single_pendulum_deriv(theta: f64, theta_dot: f64, p: &PendulumChainParams) -> [f64; 2] {
    let accel = -(p.mass * p.gravity * p.length / p.inertia) * theta.sin()
        - (p.pivot_damping / p.inertia) * theta_dot;
    [theta_dot, accel]
}

/// Chain dynamics: per-pendulum drift plus path-graph Laplacian coupling
/// `−(1/I)(L ⊗ GK)x` and actuation `(1/I)(d ⊗ G)u` on pendulum 1, with
/// `G = [0, 1]ᵀ`, `K = [κ, b]`, `d = e₁`.
pub fn pendulum_deriv(
    x: &DVector<f64>,
    torque: f64,
    p: &PendulumChainParams,
) -> Result<DVector<f64>> {
    check_dim("pendulum_deriv state", 2 * p.count, x.len())?;
    let n = p.count;
    let mut dx = DVector::zeros(2 * n);
    for i in 0..n {
        let theta = x[2 * i];
        let theta_dot = x[2 * i + 1];
        let [d_theta, mut d_theta_dot] = single_pendulum_deriv(theta, theta_dot, p);

        // Unweighted path-graph Laplacian row applied to (κθ + bθ̇).
        let mut coupling = 0.0;
        let spring = |j: usize| p.stiffness * x[2 * j] + p.coupling_damping * x[2 * j + 1];
        if i > 0 {
            coupling += spring(i) - spring(i - 1);
        }
        if i + 1 < n {
            coupling += spring(i) - spring(i + 1);
        }
        d_theta_dot -= coupling / p.inertia;

        if i == 0 {
            d_theta_dot += torque / p.inertia;
        }
        dx[2 * i] = d_theta;
        dx[2 * i + 1] = d_theta_dot;
    }
    Ok(dx)
}

#[derive(Debug, Clone)]
pub struct PendulumChain {
    pub params: PendulumChainParams,
}

impl PendulumChain {
    pub fn new(params: PendulumChainParams) -> Result<Self> {
        params.validate()?;
        Ok(PendulumChain { params })
    }
}

impl Plant for PendulumChain {
    fn state_dim(&self) -> usize {
        2 * self.params.count
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn name(&self) -> &'static str {
        "pendulum-chain"
    }

    fn deriv(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("pendulum input", 1, u.len())?;
        pendulum_deriv(x, u[0], &self.params)
    }
}
