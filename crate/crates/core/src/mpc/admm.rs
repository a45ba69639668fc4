//! Operator-splitting solver for box-constrained quadratic programs
//!
//! `min ½xᵀPx + qᵀx  s.t.  l ≤ Ax ≤ u`
//!
//! using the standard splitting: an x-update through the factorized matrix
//! `P + σI + ρAᵀA`, a z-update by projection onto `[l, u]`, a scaled dual
//! ascent on y, with over-relaxation and periodic ρ adaptation. A solution
//! polish step re-solves the KKT system on the detected active set so
//! well-conditioned problems come back at near machine precision.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::sparse::SparseMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdmmSettings {
    /// Initial constraint weight ρ.
    pub rho: f64,
    /// Tikhonov weight σ on the x-update.
    pub sigma: f64,
    /// Over-relaxation α ∈ (0, 2).
    pub alpha: f64,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iterations: usize,
    /// Residuals checked (and ρ possibly adapted) every this many iterations.
    pub check_interval: usize,
    /// ρ is updated only when the rebalanced value differs by more than
    /// this factor, to limit refactorizations.
    pub rho_update_threshold: f64,
    pub rho_min: f64,
    pub rho_max: f64,
    /// Re-solve the KKT system on the detected active set after convergence.
    pub polish: bool,
    /// Tolerance of the (normalized) primal-infeasibility certificate.
    pub eps_infeasible: f64,
}

impl Default for AdmmSettings {
    fn default() -> Self {
        AdmmSettings {
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            eps_abs: 1e-8,
            eps_rel: 1e-8,
            max_iterations: 4000,
            check_interval: 25,
            rho_update_threshold: 5.0,
            rho_min: 1e-6,
            rho_max: 1e6,
            polish: false,
            eps_infeasible: 1e-5,
        }
    }
}

/// Box-constrained QP in solver form.
#[derive(Debug, Clone)]
pub struct QpProblem {
    pub p: SparseMatrix,
    pub q: DVector<f64>,
    pub a: SparseMatrix,
    pub l: DVector<f64>,
    pub u: DVector<f64>,
}

impl QpProblem {
    pub fn validate(&self) -> Result<()> {
        let n = self.q.len();
        if self.p.nrows() != n || self.p.ncols() != n {
            return Err(Error::config("QP cost matrix must be n×n"));
        }
        if self.a.ncols() != n {
            return Err(Error::config("QP constraint matrix column count must be n"));
        }
        let c = self.a.nrows();
        if self.l.len() != c || self.u.len() != c {
            return Err(Error::config("QP bound vectors must match constraint rows"));
        }
        if self.l.iter().zip(self.u.iter()).any(|(lo, hi)| lo > hi) {
            return Err(Error::config("infeasible bounds: l > u on some row"));
        }
        Ok(())
    }

    pub fn num_vars(&self) -> usize {
        self.q.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.a.nrows()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        let mut px = DVector::zeros(x.len());
        self.p.mul_vec(x, &mut px);
        0.5 * x.dot(&px) + self.q.dot(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Solved,
    MaxIterations,
    PrimalInfeasibleSuspected,
    NumericalFault,
}

#[derive(Debug, Clone)]
pub struct AdmmSolution {
    pub x: DVector<f64>,
    /// Constraint-space iterate `z ∈ [l, u]`.
    pub z: DVector<f64>,
    /// Dual variables, one per constraint row.
    pub y: DVector<f64>,
    pub status: SolveStatus,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
}

#[derive(Debug, Clone)]
pub struct AdmmWarmStart {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
}

struct Kkt {
    chol: Cholesky<f64, Dyn>,
    /// Per-row constraint weights; equality rows run ~10³ stiffer than
    /// inequality rows, which is what makes the splitting converge fast on
    /// equality-heavy MPC problems.
    rho: DVector<f64>,
    base_rho: f64,
}

fn rho_vector(qp: &QpProblem, base_rho: f64, settings: &AdmmSettings) -> DVector<f64> {
    DVector::from_fn(qp.num_constraints(), |i, _| {
        if qp.l[i] == qp.u[i] {
            (base_rho * 1e3).clamp(settings.rho_min, settings.rho_max)
        } else {
            base_rho
        }
    })
}

fn factorize(qp: &QpProblem, sigma: f64, base_rho: f64, settings: &AdmmSettings) -> Result<Kkt> {
    let n = qp.num_vars();
    let rho = rho_vector(qp, base_rho, settings);
    let mut m = qp.a.weighted_normal_product_dense(Some(&rho));
    qp.p.add_to_dense(&mut m, 1.0);
    for i in 0..n {
        m[(i, i)] += sigma;
    }
    let chol = m
        .cholesky()
        .ok_or_else(|| Error::numerical("ADMM KKT matrix is not positive definite"))?;
    Ok(Kkt {
        chol,
        rho,
        base_rho,
    })
}

/// Solve a box-constrained QP. `warm` seeds the primal/dual iterates
/// (receding-horizon callers pass the previous shifted solution).
pub fn admm_qp_solve(
    qp: &QpProblem,
    settings: &AdmmSettings,
    warm: Option<&AdmmWarmStart>,
) -> Result<AdmmSolution> {
    qp.validate()?;
    let n = qp.num_vars();
    let c = qp.num_constraints();

    let mut x = DVector::zeros(n);
    let mut y = DVector::zeros(c);
    if let Some(w) = warm {
        if w.x.len() == n && w.y.len() == c {
            x.copy_from(&w.x);
            y.copy_from(&w.y);
        }
    }
    let mut z = DVector::zeros(c);
    qp.a.mul_vec(&x, &mut z);
    clamp_into(&mut z, &qp.l, &qp.u);

    let mut kkt = factorize(qp, settings.sigma, settings.rho, settings)?;

    let mut ax = DVector::zeros(c);
    let mut px = DVector::zeros(n);
    let mut aty = DVector::zeros(n);
    let mut rhs = DVector::zeros(n);
    let mut scratch_c = DVector::zeros(c);

    let mut status = SolveStatus::MaxIterations;
    let mut iterations = settings.max_iterations;
    let mut primal_residual = f64::INFINITY;
    let mut dual_residual = f64::INFINITY;

    for iter in 1..=settings.max_iterations {
        // x-update rhs: σx − q + Aᵀ(ρ∘z − y)
        for i in 0..c {
            scratch_c[i] = kkt.rho[i] * z[i] - y[i];
        }
        qp.a.tr_mul_vec(&scratch_c, &mut rhs);
        rhs.axpy(settings.sigma, &x, 1.0);
        rhs -= &qp.q;
        let x_tilde = kkt.chol.solve(&rhs);

        qp.a.mul_vec(&x_tilde, &mut ax); // z̃ = A·x̃

        // Over-relaxed updates: z⁺ = Π(relaxed + y/ρ), y⁺ = y + ρ∘(relaxed − z⁺).
        let alpha = settings.alpha;
        x.axpy(alpha, &x_tilde, 1.0 - alpha);
        let mut relaxed = &ax * alpha;
        relaxed.axpy(1.0 - alpha, &z, 1.0);
        let mut z_next = relaxed.clone();
        for i in 0..c {
            z_next[i] += y[i] / kkt.rho[i];
        }
        clamp_into(&mut z_next, &qp.l, &qp.u);
        let mut delta_y = relaxed;
        for i in 0..c {
            delta_y[i] = (delta_y[i] - z_next[i]) * kkt.rho[i];
        }
        y += &delta_y;
        z = z_next;

        if !x.iter().all(|v| v.is_finite()) || !y.iter().all(|v| v.is_finite()) {
            return Ok(AdmmSolution {
                x,
                z,
                y,
                status: SolveStatus::NumericalFault,
                iterations: iter,
                primal_residual,
                dual_residual,
            });
        }

        if iter % settings.check_interval == 0 || iter == settings.max_iterations {
            qp.a.mul_vec(&x, &mut ax);
            qp.p.mul_vec(&x, &mut px);
            qp.a.tr_mul_vec(&y, &mut aty);

            primal_residual = (&ax - &z).amax();
            dual_residual = (&px + &qp.q + &aty).amax();

            let prim_scale = ax.amax().max(z.amax());
            let dual_scale = px.amax().max(aty.amax()).max(qp.q.amax());
            let eps_prim = settings.eps_abs + settings.eps_rel * prim_scale;
            let eps_dual = settings.eps_abs + settings.eps_rel * dual_scale;

            if primal_residual <= eps_prim && dual_residual <= eps_dual {
                status = SolveStatus::Solved;
                iterations = iter;
                break;
            }

            if primal_infeasible(qp, &delta_y, settings) {
                status = SolveStatus::PrimalInfeasibleSuspected;
                iterations = iter;
                break;
            }

            // Rebalance ρ toward equal scaled residuals.
            let scaled_prim = primal_residual / prim_scale.max(1e-12);
            let scaled_dual = dual_residual / dual_scale.max(1e-12);
            let proposal = (kkt.base_rho * (scaled_prim / scaled_dual.max(1e-16)).sqrt())
                .clamp(settings.rho_min, settings.rho_max);
            let ratio = proposal / kkt.base_rho;
            if ratio > settings.rho_update_threshold
                || ratio < 1.0 / settings.rho_update_threshold
            {
                kkt = factorize(qp, settings.sigma, proposal, settings)?;
            }
        }
    }

    let mut solution = AdmmSolution {
        x,
        z,
        y,
        status,
        iterations,
        primal_residual,
        dual_residual,
    };
    if settings.polish && solution.status == SolveStatus::Solved {
        polish(qp, &mut solution);
    }
    Ok(solution)
}

fn clamp_into(v: &mut DVector<f64>, l: &DVector<f64>, u: &DVector<f64>) {
    for i in 0..v.len() {
        v[i] = v[i].clamp(l[i], u[i]);
    }
}

/// Certificate test on the normalized dual step: a direction e = δy/‖δy‖∞
/// with Aᵀe ≈ 0 and negative support value witnesses primal infeasibility.
fn primal_infeasible(qp: &QpProblem, delta_y: &DVector<f64>, settings: &AdmmSettings) -> bool {
    let norm = delta_y.amax();
    if norm < 1e-10 {
        return false;
    }
    let e = delta_y / norm;
    let mut at_e = DVector::zeros(qp.num_vars());
    qp.a.tr_mul_vec(&e, &mut at_e);
    if at_e.amax() > settings.eps_infeasible {
        return false;
    }
    let mut support = 0.0;
    for i in 0..e.len() {
        let d = e[i];
        if d > 1e-10 {
            if qp.u[i].is_infinite() {
                return false;
            }
            support += qp.u[i] * d;
        } else if d < -1e-10 {
            if qp.l[i].is_infinite() {
                return false;
            }
            support += qp.l[i] * d;
        }
    }
    support < -settings.eps_infeasible
}

/// Re-solve the equality-constrained KKT system on the active set guessed
/// from the converged iterate; keep the result only if it actually reduces
/// the KKT residuals.
fn polish(qp: &QpProblem, solution: &mut AdmmSolution) {
    let n = qp.num_vars();
    let c = qp.num_constraints();
    let tol = 1e-7_f64;

    let mut active: Vec<(usize, f64)> = Vec::new();
    for i in 0..c {
        let at_lower = solution.z[i] <= qp.l[i] + tol.max(qp.l[i].abs() * tol);
        let at_upper = solution.z[i] >= qp.u[i] - tol.max(qp.u[i].abs() * tol);
        if qp.l[i] == qp.u[i] || (at_lower && solution.y[i] < 0.0) {
            active.push((i, qp.l[i]));
        } else if at_upper && solution.y[i] > 0.0 {
            active.push((i, qp.u[i]));
        }
    }

    let na = active.len();
    let a_dense = qp.a.to_dense();
    let mut kkt = DMatrix::zeros(n + na, n + na);
    let mut p_dense = DMatrix::zeros(n, n);
    qp.p.add_to_dense(&mut p_dense, 1.0);
    kkt.view_range_mut(0..n, 0..n).copy_from(&p_dense);
    // Tiny regularization keeps redundant active sets factorizable.
    for i in 0..n + na {
        kkt[(i, i)] += if i < n { 1e-12 } else { -1e-12 };
    }
    let mut rhs = DVector::zeros(n + na);
    for i in 0..n {
        rhs[i] = -qp.q[i];
    }
    for (row, &(ci, bound)) in active.iter().enumerate() {
        for col in 0..n {
            let v = a_dense[(ci, col)];
            kkt[(n + row, col)] = v;
            kkt[(col, n + row)] = v;
        }
        rhs[n + row] = bound;
    }

    let Some(sol) = kkt.lu().solve(&rhs) else {
        return;
    };
    let x_new = sol.rows(0, n).into_owned();
    let mut y_new = DVector::zeros(c);
    for (row, &(ci, _)) in active.iter().enumerate() {
        y_new[ci] = sol[n + row];
    }
    let mut z_new = DVector::zeros(c);
    qp.a.mul_vec(&x_new, &mut z_new);
    clamp_into(&mut z_new, &qp.l, &qp.u);

    let res_of = |x: &DVector<f64>, y: &DVector<f64>, z: &DVector<f64>| {
        let mut px = DVector::zeros(n);
        qp.p.mul_vec(x, &mut px);
        let mut aty = DVector::zeros(n);
        qp.a.tr_mul_vec(y, &mut aty);
        let mut ax = DVector::zeros(c);
        qp.a.mul_vec(x, &mut ax);
        let stationarity = (&px + &qp.q + &aty).amax();
        let feasibility = (&ax - z).amax();
        stationarity.max(feasibility)
    };
    let before = res_of(&solution.x, &solution.y, &solution.z);
    let after = res_of(&x_new, &y_new, &z_new);
    if after.is_finite() && after <= before {
        solution.x = x_new;
        solution.y = y_new;
        solution.z = z_new;
        solution.primal_residual = solution.primal_residual.min(after);
        solution.dual_residual = solution.dual_residual.min(after);
    }
}
