//! Planar 3R serial manipulator in a vertical plane.
//!
//! `M(θ)θ̈ + h(θ, θ̇) + G(θ) = τ` with uniform thin-rod links (center of
//! mass at mid-link, I_i = m_i·l_i²/12). The matrices come from the chain's
//! Lagrangian via center-of-mass Jacobians and Christoffel symbols, so they
//! stay consistent with the energy expressions used to verify them.
//!
//! Joint angles are measured counterclockwise, joint 1 from the +x axis,
//! gravity along −y. State layout: `[θ₁, θ₂, θ₃, θ̇₁, θ̇₂, θ̇₃]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{check_dim, Plant};
use crate::error::{Error, Result};

const LINKS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManipulatorParams {
    /// Link masses (kg).
    pub masses: [f64; LINKS],
    /// Link lengths (m).
    pub lengths: [f64; LINKS],
    /// Link inertias about their centers of mass (kg·m²).
    pub inertias: [f64; LINKS],
    /// Gravitational acceleration (m/s²).
    pub gravity: f64,
}

impl ManipulatorParams {
    /// Benchmark arm: every link 0.8 kg and 1 m, thin-rod inertia.
    pub fn standard() -> Self {
        let masses = [0.8; LINKS];
        let lengths = [1.0; LINKS];
        let inertias = std::array::from_fn(|i| masses[i] * lengths[i] * lengths[i] / 12.0);
        ManipulatorParams {
            masses,
            lengths,
            inertias,
            gravity: 9.81,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let strictly_positive = self
            .masses
            .iter()
            .chain(&self.lengths)
            .chain(&self.inertias)
            .all(|&v| v > 0.0);
        if !strictly_positive {
            return Err(Error::config(
                "manipulator masses, lengths, and inertias must be strictly positive",
            ));
        }
        Ok(())
    }

    /// Scale every link mass (and its inertia, which is proportional to
    /// mass for a uniform rod) by `factor`. `factor = 0.5` is the
    /// "-50% mass" deployment scenario.
    pub fn with_mass_scale(&self, factor: f64) -> Self {
        let mut out = *self;
        for i in 0..LINKS {
            out.masses[i] *= factor;
            out.inertias[i] *= factor;
        }
        out
    }
}

/// Dense chain geometry at a configuration: center-of-mass Jacobians and
/// their configuration derivatives.
struct ChainGeometry {
    /// `jac[i]` is the 2×n Jacobian of COM_i (columns = joints).
    jac: Vec<DMatrix<f64>>,
    /// `jac_grad[i][s]` is ∂(jac[i])/∂q_s.
    jac_grad: Vec<Vec<DMatrix<f64>>>,
    /// COM positions (for potential energy).
    com: Vec<[f64; 2]>,
}

fn chain_geometry(q: &[f64], lengths: &[f64]) -> ChainGeometry {
    let n = q.len();
    // Absolute link angles and their unit vectors.
    let mut phi = vec![0.0; n];
    let mut acc = 0.0;
    for (j, &qj) in q.iter().enumerate() {
        acc += qj;
        phi[j] = acc;
    }
    // coeff[i][j]: contribution of link j's direction to COM_i.
    let coeff = |i: usize, j: usize| -> f64 {
        if j < i {
            lengths[j]
        } else if j == i {
            lengths[i] / 2.0
        } else {
            0.0
        }
    };

    let mut jac = Vec::with_capacity(n);
    let mut jac_grad = Vec::with_capacity(n);
    let mut com = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = 0.0;
        let mut y = 0.0;
        for j in 0..=i {
            x += coeff(i, j) * phi[j].cos();
            y += coeff(i, j) * phi[j].sin();
        }
        com.push([x, y]);

        // ∂p_i/∂q_k = Σ_{j ≥ k, j ≤ i} coeff·(−sin φ_j, cos φ_j)
        let mut ji = DMatrix::zeros(2, n);
        for k in 0..n {
            for j in k..=i.min(n - 1) {
                if j > i {
                    break;
                }
                let c = coeff(i, j);
                ji[(0, k)] -= c * phi[j].sin();
                ji[(1, k)] += c * phi[j].cos();
            }
        }
        // ∂²p_i/∂q_k∂q_s = Σ_{j ≥ max(k,s), j ≤ i} coeff·(−cos φ_j, −sin φ_j)
        let mut grads = Vec::with_capacity(n);
        for s in 0..n {
            let mut g = DMatrix::zeros(2, n);
            for k in 0..n {
                for j in k.max(s)..=i.min(n - 1) {
                    if j > i {
                        break;
                    }
                    let c = coeff(i, j);
                    g[(0, k)] -= c * phi[j].cos();
                    g[(1, k)] -= c * phi[j].sin();
                }
            }
            grads.push(g);
        }
        jac.push(ji);
        jac_grad.push(grads);
    }
    ChainGeometry { jac, jac_grad, com }
}

#[derive(Debug, Clone)]
pub struct Manipulator {
    pub params: ManipulatorParams,
}

impl Manipulator {
    pub fn new(params: ManipulatorParams) -> Result<Self> {
        params.validate()?;
        Ok(Manipulator { params })
    }

    /// Joint-space mass matrix `M(θ)`, symmetric positive-definite.
    pub fn mass_matrix(&self, q: &[f64; LINKS]) -> DMatrix<f64> {
        let geo = chain_geometry(q, &self.params.lengths);
        let mut m = DMatrix::zeros(LINKS, LINKS);
        for i in 0..LINKS {
            let mi = self.params.masses[i];
            let izz = self.params.inertias[i];
            for k in 0..LINKS {
                for l in k..LINKS {
                    let mut v = mi * geo.jac[i].column(k).dot(&geo.jac[i].column(l));
                    // Planar angular velocity of link i is Σ_{j≤i} q̇_j.
                    if k <= i && l <= i {
                        v += izz;
                    }
                    m[(k, l)] += v;
                }
            }
        }
        for k in 0..LINKS {
            for l in 0..k {
                m[(k, l)] = m[(l, k)];
            }
        }
        m
    }

    /// Coriolis/centrifugal torque vector from the Christoffel symbols of
    /// the mass matrix.
    pub fn coriolis_vector(&self, q: &[f64; LINKS], qd: &[f64; LINKS]) -> DVector<f64> {
        let geo = chain_geometry(q, &self.params.lengths);
        // dm[s] = ∂M/∂q_s.
        let mut dm = vec![DMatrix::<f64>::zeros(LINKS, LINKS); LINKS];
        for i in 0..LINKS {
            let mi = self.params.masses[i];
            for s in 0..LINKS {
                for k in 0..LINKS {
                    for l in 0..LINKS {
                        dm[s][(k, l)] += mi
                            * (geo.jac_grad[i][s].column(k).dot(&geo.jac[i].column(l))
                                + geo.jac[i].column(k).dot(&geo.jac_grad[i][s].column(l)));
                    }
                }
            }
        }
        let mut h = DVector::zeros(LINKS);
        for k in 0..LINKS {
            let mut acc = 0.0;
            for j in 0..LINKS {
                for s in 0..LINKS {
                    let christoffel =
                        0.5 * (dm[s][(k, j)] + dm[j][(k, s)] - dm[k][(j, s)]);
                    acc += christoffel * qd[j] * qd[s];
                }
            }
            h[k] = acc;
        }
        h
    }

    /// Gravity torque vector `G(θ)` (potential zero at the base joint).
    pub fn gravity_vector(&self, q: &[f64; LINKS]) -> DVector<f64> {
        let geo = chain_geometry(q, &self.params.lengths);
        let mut g = DVector::zeros(LINKS);
        for i in 0..LINKS {
            for k in 0..LINKS {
                g[k] += self.params.masses[i] * self.params.gravity * geo.jac[i][(1, k)];
            }
        }
        g
    }

    pub fn kinetic_energy(&self, x: &DVector<f64>) -> f64 {
        let (q, qd) = split_state(x);
        let m = self.mass_matrix(&q);
        let qd = DVector::from_row_slice(&qd);
        0.5 * qd.dot(&(m * &qd))
    }

    /// Total mechanical energy; the potential reference is the base joint
    /// height.
    pub fn energy(&self, x: &DVector<f64>) -> f64 {
        let (q, _) = split_state(x);
        let geo = chain_geometry(&q, &self.params.lengths);
        let potential: f64 = (0..LINKS)
            .map(|i| self.params.masses[i] * self.params.gravity * geo.com[i][1])
            .sum();
        self.kinetic_energy(x) + potential
    }
}

fn split_state(x: &DVector<f64>) -> ([f64; LINKS], [f64; LINKS]) {
    (
        std::array::from_fn(|i| x[i]),
        std::array::from_fn(|i| x[LINKS + i]),
    )
}

/// Forward dynamics `θ̈ = M(θ)⁻¹(τ − h(θ, θ̇) − G(θ))`.
pub fn manipulator_deriv(
    x: &DVector<f64>,
    tau: &DVector<f64>,
    p: &ManipulatorParams,
) -> Result<DVector<f64>> {
    check_dim("manipulator_deriv state", 2 * LINKS, x.len())?;
    check_dim("manipulator_deriv input", LINKS, tau.len())?;
    let arm = Manipulator { params: *p };
    let (q, qd) = split_state(x);
    let m = arm.mass_matrix(&q);

    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::numerical("manipulator mass matrix is not positive definite"))?;
    // Cheap conditioning guard from the Cholesky diagonal.
    let diag = chol.l_dirty().diagonal();
    let (dmin, dmax) = diag
        .iter()
        .fold((f64::INFINITY, 0.0_f64), |(lo, hi), &d| (lo.min(d), hi.max(d)));
    if dmin <= 0.0 || (dmax / dmin).powi(2) > 1e12 {
        return Err(Error::numerical(
            "manipulator mass matrix is numerically singular",
        ));
    }

    let rhs = tau - arm.coriolis_vector(&q, &qd) - arm.gravity_vector(&q);
    let qdd = chol.solve(&rhs);

    let mut dx = DVector::zeros(2 * LINKS);
    for i in 0..LINKS {
        dx[i] = qd[i];
        dx[LINKS + i] = qdd[i];
    }
    Ok(dx)
}

impl Plant for Manipulator {
    fn state_dim(&self) -> usize {
        2 * LINKS
    }

    fn input_dim(&self) -> usize {
        LINKS
    }

    fn name(&self) -> &'static str {
        "manipulator-3r"
    }

    fn deriv(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        manipulator_deriv(x, u, &self.params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::rk4_step;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn arm() -> Manipulator {
        Manipulator::new(ManipulatorParams::standard()).unwrap()
    }

    #[test]
    fn no_forces_means_no_acceleration() {
        let mut p = ManipulatorParams::standard();
        p.gravity = 0.0;
        let x = DVector::from_vec(vec![0.4, -0.9, 1.3, 0.0, 0.0, 0.0]);
        let dx = manipulator_deriv(&x, &DVector::zeros(3), &p).unwrap();
        assert!(dx.norm() < 1e-12);
    }

    #[test]
    fn gravity_compensation_torque_holds_the_arm_still() {
        let arm = arm();
        let q = [0.4, -0.9, 1.3];
        let x = DVector::from_vec(vec![q[0], q[1], q[2], 0.0, 0.0, 0.0]);
        let tau = arm.gravity_vector(&q);
        let dx = manipulator_deriv(&x, &tau, &arm.params).unwrap();
        assert!(dx.norm() < 1e-10, "residual {}", dx.norm());
    }

    #[test]
    fn dynamics_match_symbolic_lagrangian_evaluation() {
        // Frozen from a CAS derivation of the planar 3R Lagrangian at
        // q = (0.3, -0.5, 0.7), q̇ = (0.2, -0.4, 0.5), τ = (0.5, -0.3, 0.1).
        let arm = arm();
        let q = [0.3, -0.5, 0.7];
        let qd = [0.2, -0.4, 0.5];

        let m = arm.mass_matrix(&q);
        let m_expected = DMatrix::from_row_slice(
            3,
            3,
            &[
                6.7021251606374786,
                3.3903327885658680,
                0.96463017271695869,
                3.3903327885658680,
                1.9452070831609241,
                0.57260354158046204,
                0.96463017271695869,
                0.57260354158046204,
                0.26666666666666667,
            ],
        );
        assert_relative_eq!(m, m_expected, max_relative = 1e-13);

        let g = arm.gravity_vector(&q);
        let g_expected = [33.724679643849309, 14.980977727204919, 3.4436339728578225];
        for i in 0..3 {
            assert_relative_eq!(g[i], g_expected[i], max_relative = 1e-13);
        }

        let h = arm.coriolis_vector(&q, &qd);
        let h_expected = [
            -0.016857740360655045,
            -0.032718070305034586,
            0.013486192288524036,
        ];
        for i in 0..3 {
            assert_relative_eq!(h[i], h_expected[i], max_relative = 1e-11);
        }

        let x = DVector::from_vec(vec![0.3, -0.5, 0.7, 0.2, -0.4, 0.5]);
        let tau = DVector::from_vec(vec![0.5, -0.3, 0.1]);
        let dx = manipulator_deriv(&x, &tau, &arm.params).unwrap();
        let qdd_expected = [-7.9908853220324988, 3.4938710570112878, 8.8144724330142637];
        for i in 0..3 {
            assert_relative_eq!(dx[3 + i], qdd_expected[i], max_relative = 1e-11);
        }

        let e = arm.energy(&x);
        assert_relative_eq!(e, 5.3743449951282053, max_relative = 1e-13);
    }

    #[test]
    fn kinetic_energy_is_conserved_without_gravity_or_torque() {
        let mut p = ManipulatorParams::standard();
        p.gravity = 0.0;
        let arm = Manipulator::new(p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut x = DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0));
        let e0 = arm.kinetic_energy(&x);
        let tau = DVector::zeros(3);
        let dt = 1e-4;
        for _ in 0..10_000 {
            x = rk4_step(|x, u| arm.deriv(x, u), &x, &tau, dt).unwrap();
        }
        let drift = (arm.kinetic_energy(&x) - e0).abs() / e0.abs();
        assert!(drift < 1e-6, "relative energy drift {drift}");
    }

    #[test]
    fn mass_matrix_is_symmetric_positive_definite_over_random_draws() {
        let arm = arm();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10_000 {
            let q: [f64; 3] = std::array::from_fn(|_| rng.random_range(-std::f64::consts::PI..std::f64::consts::PI));
            let m = arm.mass_matrix(&q);
            assert_relative_eq!(m.clone(), m.transpose(), epsilon = 1e-12);
            assert!(m.cholesky().is_some(), "M not PD at {q:?}");
        }
    }

    #[test]
    fn deriv_rejects_bad_dimensions() {
        let p = ManipulatorParams::standard();
        assert!(manipulator_deriv(&DVector::zeros(5), &DVector::zeros(3), &p).is_err());
        assert!(manipulator_deriv(&DVector::zeros(6), &DVector::zeros(2), &p).is_err());
    }

    #[test]
    fn mass_scaling_scales_inertia_proportionally() {
        let p = ManipulatorParams::standard().with_mass_scale(0.5);
        for i in 0..3 {
            assert_relative_eq!(p.masses[i], 0.4, epsilon = 1e-15);
            assert_relative_eq!(p.inertias[i], 0.4 / 12.0, epsilon = 1e-15);
        }
    }
}
