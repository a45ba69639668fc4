//! Reference-tracking model predictive control on the lifted model.
//!
//! The optimal control problem over horizon S,
//!
//! `min Σ (C·z_k − x_ref,k)ᵀQ(C·z_k − x_ref,k) + u_kᵀR·u_k`
//! `s.t. z_{k+1} = A_k·z_k + B_k·u_k + c_k,  z_0 = φ(x_0),`
//! `     x⁻ ≤ C·z_k ≤ x⁺,  u⁻ ≤ u_k ≤ u⁺,`
//!
//! is stacked sparsely over the decision vector `(u_0, z_1, u_1, z_2, …)`
//! — the dynamics rows stay explicit so the bilinear mode can re-linearize
//! them between solves — and handed to the operator-splitting QP solver.
//! The bilinear mode wraps this in an SQP loop that linearizes
//! `z⁺ = A·z + B(z ⊗ u)` about the current iterate until the iterate
//! settles.

pub mod admm;
pub mod reference;
pub mod sparse;

pub use admm::{admm_qp_solve, AdmmSettings, AdmmSolution, AdmmWarmStart, QpProblem, SolveStatus};
pub use reference::{kkt_residuals, solve_qp_reference, KktResiduals};
pub use sparse::SparseMatrix;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::adapt::effective_matrices;
use crate::error::{Error, Result};
use crate::koopman::{AdaptationDelta, KoopmanMode, KoopmanModel};

#[derive(Debug, Clone)]
pub struct MpcConfig {
    /// Prediction (and control) horizon S.
    pub horizon: usize,
    /// State-tracking weight, n×n symmetric PSD.
    pub q: DMatrix<f64>,
    /// Input weight, m×m symmetric PD.
    pub r: DMatrix<f64>,
    /// Box on the projected state C·z, elementwise; `None` leaves the state
    /// unconstrained.
    pub x_min: Option<DVector<f64>>,
    pub x_max: Option<DVector<f64>>,
    /// Box on the input (entries may be ±∞).
    pub u_min: DVector<f64>,
    pub u_max: DVector<f64>,
    pub solver: AdmmSettings,
    pub sqp: SqpSettings,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SqpSettings {
    pub max_iterations: usize,
    /// Stop when the iterate changes less than this in the ∞-norm.
    pub step_tolerance: f64,
}

impl Default for SqpSettings {
    fn default() -> Self {
        SqpSettings {
            max_iterations: 8,
            step_tolerance: 1e-4,
        }
    }
}

impl MpcConfig {
    /// Identity tracking weight on every state channel, R = 0.01·I, and
    /// unbounded states: the starting point the experiments override.
    pub fn new(horizon: usize, state_dim: usize, input_dim: usize) -> Self {
        MpcConfig {
            horizon,
            q: DMatrix::identity(state_dim, state_dim),
            r: DMatrix::identity(input_dim, input_dim) * 0.01,
            x_min: None,
            x_max: None,
            u_min: DVector::from_element(input_dim, f64::NEG_INFINITY),
            u_max: DVector::from_element(input_dim, f64::INFINITY),
            solver: AdmmSettings::default(),
            sqp: SqpSettings::default(),
        }
    }

    pub fn with_input_bounds(mut self, u_min: DVector<f64>, u_max: DVector<f64>) -> Self {
        self.u_min = u_min;
        self.u_max = u_max;
        self
    }

    pub fn validate(&self, state_dim: usize, input_dim: usize) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::config("MPC horizon must be at least 1"));
        }
        if self.q.shape() != (state_dim, state_dim) {
            return Err(Error::config("Q must be n×n"));
        }
        if self.r.shape() != (input_dim, input_dim) {
            return Err(Error::config("R must be m×m"));
        }
        if (&self.q - self.q.transpose()).amax() > 1e-10 {
            return Err(Error::config("Q must be symmetric"));
        }
        if (&self.r - self.r.transpose()).amax() > 1e-10 {
            return Err(Error::config("R must be symmetric"));
        }
        if self.u_min.len() != input_dim || self.u_max.len() != input_dim {
            return Err(Error::config("input bounds must have length m"));
        }
        if self
            .u_min
            .iter()
            .zip(self.u_max.iter())
            .any(|(lo, hi)| lo > hi)
        {
            return Err(Error::config("infeasible input bounds: u⁻ > u⁺"));
        }
        if let (Some(lo), Some(hi)) = (&self.x_min, &self.x_max) {
            if lo.iter().zip(hi.iter()).any(|(a, b)| a > b) {
                return Err(Error::config("infeasible state bounds: x⁻ > x⁺"));
            }
        }
        Ok(())
    }
}

/// Dynamics of one prediction stage: `z⁺ = a·z + b·u + affine`.
#[derive(Debug, Clone)]
pub struct StageDynamics {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub affine: DVector<f64>,
}

/// Index map of the stacked decision vector `(u_0, z_1, u_1, z_2, …)`.
#[derive(Debug, Clone, Copy)]
pub struct MpcLayout {
    pub horizon: usize,
    pub lifted_dim: usize,
    pub input_dim: usize,
    pub state_dim: usize,
    pub state_rows: bool,
}

impl MpcLayout {
    pub fn num_vars(&self) -> usize {
        self.horizon * (self.lifted_dim + self.input_dim)
    }

    pub fn num_constraints(&self) -> usize {
        let dyn_rows = self.horizon * self.lifted_dim;
        let state_rows = if self.state_rows {
            self.horizon * self.state_dim
        } else {
            0
        };
        dyn_rows + state_rows + self.horizon * self.input_dim
    }

    /// Offset of `u_k`, k ∈ [0, S).
    pub fn input_offset(&self, k: usize) -> usize {
        k * (self.lifted_dim + self.input_dim)
    }

    /// Offset of `z_k`, k ∈ [1, S].
    pub fn state_offset(&self, k: usize) -> usize {
        (k - 1) * (self.lifted_dim + self.input_dim) + self.input_dim
    }

    pub fn stage_input(&self, decision: &DVector<f64>, k: usize) -> DVector<f64> {
        decision.rows(self.input_offset(k), self.input_dim).into_owned()
    }

    pub fn stage_state(&self, decision: &DVector<f64>, k: usize) -> DVector<f64> {
        decision.rows(self.state_offset(k), self.lifted_dim).into_owned()
    }

    /// Receding-horizon shift: stage blocks move one step earlier, the
    /// terminal block is duplicated.
    pub fn shift_decision(&self, decision: &DVector<f64>) -> DVector<f64> {
        let stride = self.lifted_dim + self.input_dim;
        let mut out = decision.clone();
        for k in 0..self.horizon - 1 {
            let src = decision.rows((k + 1) * stride, stride).into_owned();
            out.rows_mut(k * stride, stride).copy_from(&src);
        }
        out
    }

    /// Same shift for the dual vector, section by section.
    pub fn shift_duals(&self, duals: &DVector<f64>) -> DVector<f64> {
        let mut out = duals.clone();
        let mut base = 0;
        let mut shift_section = |stride: usize, out: &mut DVector<f64>| {
            for k in 0..self.horizon - 1 {
                let src = duals
                    .rows(base + (k + 1) * stride, stride)
                    .into_owned();
                out.rows_mut(base + k * stride, stride).copy_from(&src);
            }
            base += self.horizon * stride;
        };
        shift_section(self.lifted_dim, &mut out);
        if self.state_rows {
            shift_section(self.state_dim, &mut out);
        }
        shift_section(self.input_dim, &mut out);
        out
    }
}

/// Stack the stage dynamics, tracking cost, and boxes into a sparse QP.
///
/// `stages[k]` advances `z_k` to `z_{k+1}`; `x_ref[k-1]` is the reference
/// for `C·z_k`, k = 1..=S. Infeasible box configurations are rejected here.
pub fn build_stage_qp(
    stages: &[StageDynamics],
    z0: &DVector<f64>,
    x_ref: &[DVector<f64>],
    cfg: &MpcConfig,
    state_dim: usize,
) -> Result<(QpProblem, MpcLayout)> {
    let horizon = cfg.horizon;
    if stages.len() != horizon {
        return Err(Error::config("one StageDynamics required per horizon step"));
    }
    if x_ref.len() != horizon {
        return Err(Error::DimensionMismatch {
            context: "MPC reference slice",
            expected: horizon,
            actual: x_ref.len(),
        });
    }
    let p_dim = z0.len();
    let m_dim = stages[0].b.ncols();
    cfg.validate(state_dim, m_dim)?;

    let layout = MpcLayout {
        horizon,
        lifted_dim: p_dim,
        input_dim: m_dim,
        state_dim,
        state_rows: cfg.x_min.is_some() || cfg.x_max.is_some(),
    };

    // Cost: ½xᵀPx + qᵀx realizes Σ (Cz−r)ᵀQ(Cz−r) + uᵀRu.
    let mut p_triplets = Vec::new();
    let mut q_vec = DVector::zeros(layout.num_vars());
    for k in 0..horizon {
        let u_off = layout.input_offset(k);
        for i in 0..m_dim {
            for j in 0..m_dim {
                let v = 2.0 * cfg.r[(i, j)];
                if v != 0.0 {
                    p_triplets.push((u_off + i, u_off + j, v));
                }
            }
        }
        let z_off = layout.state_offset(k + 1);
        let reference = &x_ref[k];
        if reference.len() != state_dim {
            return Err(Error::DimensionMismatch {
                context: "MPC reference entry",
                expected: state_dim,
                actual: reference.len(),
            });
        }
        let q_ref = &cfg.q * reference;
        for i in 0..state_dim {
            for j in 0..state_dim {
                let v = 2.0 * cfg.q[(i, j)];
                if v != 0.0 {
                    p_triplets.push((z_off + i, z_off + j, v));
                }
            }
            q_vec[z_off + i] = -2.0 * q_ref[i];
        }
    }

    let mut a_triplets = Vec::new();
    let rows = layout.num_constraints();
    let mut l = DVector::zeros(rows);
    let mut u = DVector::zeros(rows);

    // Dynamics rows: z_{k+1} − A_k z_k − B_k u_k = c_k (+ A_0 z_0 at k=0).
    for (k, stage) in stages.iter().enumerate() {
        if stage.a.shape() != (p_dim, p_dim)
            || stage.b.shape() != (p_dim, m_dim)
            || stage.affine.len() != p_dim
        {
            return Err(Error::config("stage dynamics shapes disagree with z0/u"));
        }
        let row0 = k * p_dim;
        let z_next = layout.state_offset(k + 1);
        let u_off = layout.input_offset(k);
        for i in 0..p_dim {
            a_triplets.push((row0 + i, z_next + i, 1.0));
            for j in 0..m_dim {
                let v = -stage.b[(i, j)];
                if v != 0.0 {
                    a_triplets.push((row0 + i, u_off + j, v));
                }
            }
        }
        let rhs = if k == 0 {
            &stage.a * z0 + &stage.affine
        } else {
            let z_prev = layout.state_offset(k);
            for i in 0..p_dim {
                for j in 0..p_dim {
                    let v = -stage.a[(i, j)];
                    if v != 0.0 {
                        a_triplets.push((row0 + i, z_prev + j, v));
                    }
                }
            }
            stage.affine.clone()
        };
        for i in 0..p_dim {
            l[row0 + i] = rhs[i];
            u[row0 + i] = rhs[i];
        }
    }

    let mut row_base = horizon * p_dim;
    if layout.state_rows {
        let lo = cfg
            .x_min
            .clone()
            .unwrap_or_else(|| DVector::from_element(state_dim, f64::NEG_INFINITY));
        let hi = cfg
            .x_max
            .clone()
            .unwrap_or_else(|| DVector::from_element(state_dim, f64::INFINITY));
        if lo.len() != state_dim || hi.len() != state_dim {
            return Err(Error::config("state bounds must have length n"));
        }
        for k in 1..=horizon {
            let z_off = layout.state_offset(k);
            for i in 0..state_dim {
                let row = row_base + (k - 1) * state_dim + i;
                a_triplets.push((row, z_off + i, 1.0));
                l[row] = lo[i];
                u[row] = hi[i];
            }
        }
        row_base += horizon * state_dim;
    }
    for k in 0..horizon {
        let u_off = layout.input_offset(k);
        for i in 0..m_dim {
            let row = row_base + k * m_dim + i;
            a_triplets.push((row, u_off + i, 1.0));
            l[row] = cfg.u_min[i];
            u[row] = cfg.u_max[i];
        }
    }

    let qp = QpProblem {
        p: SparseMatrix::from_triplets(layout.num_vars(), layout.num_vars(), &p_triplets)?,
        q: q_vec,
        a: SparseMatrix::from_triplets(rows, layout.num_vars(), &a_triplets)?,
        l,
        u,
    };
    qp.validate()?;
    Ok((qp, layout))
}

/// Stack the QP for a linear-mode model with the current correction.
pub fn build_linear_mpc_qp(
    model: &KoopmanModel,
    delta: Option<&AdaptationDelta>,
    z0: &DVector<f64>,
    x_ref: &[DVector<f64>],
    cfg: &MpcConfig,
) -> Result<(QpProblem, MpcLayout)> {
    if model.mode != KoopmanMode::Linear {
        return Err(Error::config("build_linear_mpc_qp requires a linear model"));
    }
    let zero = AdaptationDelta::zeros(model);
    let (a_eff, b_eff) = effective_matrices(model, delta.unwrap_or(&zero));
    let stage = StageDynamics {
        affine: DVector::zeros(model.lifted_dim),
        a: a_eff,
        b: b_eff,
    };
    let stages = vec![stage; cfg.horizon];
    build_stage_qp(&stages, z0, x_ref, cfg, model.state_dim)
}

/// Outcome of one receding-horizon solve.
#[derive(Debug, Clone)]
pub struct MpcStepResult {
    pub u0: DVector<f64>,
    pub status: SolveStatus,
    pub iterations: usize,
    /// True when the controller fell back to its previous input.
    pub degraded: bool,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// Dynamics violation of each SQP iterate under the true bilinear map
    /// (empty in linear mode).
    pub sqp_residuals: Vec<f64>,
}

/// Receding-horizon controller for linear-mode models with warm starting
/// and a fail-safe fallback to the previous input.
#[derive(Debug, Clone)]
pub struct LinearMpc {
    pub config: MpcConfig,
    warm: Option<(DVector<f64>, DVector<f64>)>,
    last_input: Option<DVector<f64>>,
}

impl LinearMpc {
    pub fn new(config: MpcConfig) -> Self {
        LinearMpc {
            config,
            warm: None,
            last_input: None,
        }
    }

    pub fn reset(&mut self) {
        self.warm = None;
        self.last_input = None;
    }

    pub fn solve(
        &mut self,
        model: &KoopmanModel,
        delta: Option<&AdaptationDelta>,
        x0: &DVector<f64>,
        x_ref: &[DVector<f64>],
    ) -> Result<MpcStepResult> {
        let z0 = model.lift(x0)?;
        let (qp, layout) = build_linear_mpc_qp(model, delta, &z0, x_ref, &self.config)?;
        let warm = self.warm.as_ref().map(|(x, y)| AdmmWarmStart {
            x: layout.shift_decision(x),
            y: layout.shift_duals(y),
        });
        let solution = admm_qp_solve(&qp, &self.config.solver, warm.as_ref())?;
        Ok(self.finish(solution, &layout, model.input_dim, Vec::new()))
    }

    fn finish(
        &mut self,
        solution: AdmmSolution,
        layout: &MpcLayout,
        input_dim: usize,
        sqp_residuals: Vec<f64>,
    ) -> MpcStepResult {
        let usable = matches!(
            solution.status,
            SolveStatus::Solved | SolveStatus::MaxIterations
        ) && solution.x.iter().all(|v| v.is_finite());
        let (u0, degraded) = if usable {
            self.warm = Some((solution.x.clone(), solution.y.clone()));
            (layout.stage_input(&solution.x, 0), false)
        } else {
            log::warn!(
                "MPC solve unusable ({:?}); holding previous input",
                solution.status
            );
            self.warm = None;
            (
                self.last_input
                    .clone()
                    .unwrap_or_else(|| DVector::zeros(input_dim)),
                true,
            )
        };
        self.last_input = Some(u0.clone());
        MpcStepResult {
            u0,
            status: solution.status,
            iterations: solution.iterations,
            degraded,
            primal_residual: solution.primal_residual,
            dual_residual: solution.dual_residual,
            sqp_residuals,
        }
    }
}

/// Column-collapsed views of the bilinear input matrix.
///
/// With v = z ⊗ u (entry i·m + j = z_i·u_j):
/// `B·v = (Σ_j u_j·B_{:,·m+j})·z = (Σ_i z_i·B_{:,i·m+·})·u`.
fn collapse_on_input(b: &DMatrix<f64>, u: &DVector<f64>) -> DMatrix<f64> {
    let p = b.nrows();
    let m = u.len();
    let mut out = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in 0..m {
            if u[j] != 0.0 {
                let col = b.column(i * m + j);
                for r in 0..p {
                    out[(r, i)] += col[r] * u[j];
                }
            }
        }
    }
    out
}

fn collapse_on_state(b: &DMatrix<f64>, z: &DVector<f64>) -> DMatrix<f64> {
    let p = b.nrows();
    let m = b.ncols() / p;
    let mut out = DMatrix::zeros(p, m);
    for i in 0..p {
        if z[i] != 0.0 {
            for j in 0..m {
                let col = b.column(i * m + j);
                for r in 0..p {
                    out[(r, j)] += col[r] * z[i];
                }
            }
        }
    }
    out
}

/// SQP controller for bilinear-mode models: re-linearize the dynamics about
/// the current trajectory iterate, solve the stacked QP, repeat.
#[derive(Debug, Clone)]
pub struct BilinearMpc {
    pub config: MpcConfig,
    /// Previous trajectory iterate (z̄_0..z̄_S, ū_0..ū_{S-1}).
    guess: Option<(Vec<DVector<f64>>, Vec<DVector<f64>>)>,
    warm: Option<(DVector<f64>, DVector<f64>)>,
    last_input: Option<DVector<f64>>,
}

impl BilinearMpc {
    pub fn new(config: MpcConfig) -> Self {
        BilinearMpc {
            config,
            guess: None,
            warm: None,
            last_input: None,
        }
    }

    pub fn reset(&mut self) {
        self.guess = None;
        self.warm = None;
        self.last_input = None;
    }

    pub fn solve(
        &mut self,
        model: &KoopmanModel,
        delta: Option<&AdaptationDelta>,
        x0: &DVector<f64>,
        x_ref: &[DVector<f64>],
    ) -> Result<MpcStepResult> {
        if model.mode != KoopmanMode::Bilinear {
            return Err(Error::config("BilinearMpc requires a bilinear model"));
        }
        let horizon = self.config.horizon;
        let z0 = model.lift(x0)?;
        let zero = AdaptationDelta::zeros(model);
        let (a_eff, b_eff) = effective_matrices(model, delta.unwrap_or(&zero));

        // Trajectory guess: previous shifted solution, or a zero-input
        // rollout on the first call.
        let (mut z_bar, mut u_bar) = match self.guess.take() {
            Some((mut zs, mut us)) => {
                zs.remove(0);
                zs[0] = z0.clone();
                let last_z = zs.last().expect("horizon ≥ 1").clone();
                zs.push(last_z);
                us.remove(0);
                let last_u = us.last().expect("horizon ≥ 1").clone();
                us.push(last_u);
                (zs, us)
            }
            None => {
                let mut zs = Vec::with_capacity(horizon + 1);
                zs.push(z0.clone());
                for k in 0..horizon {
                    zs.push(&a_eff * &zs[k]);
                }
                (zs, vec![DVector::zeros(model.input_dim); horizon])
            }
        };

        let mut best: Option<AdmmSolution> = None;
        let mut layout = None;
        let mut sqp_residuals = Vec::new();
        for _ in 0..self.config.sqp.max_iterations {
            let stages: Vec<StageDynamics> = (0..horizon)
                .map(|k| {
                    let a_k = &a_eff + collapse_on_input(&b_eff, &u_bar[k]);
                    let b_k = collapse_on_state(&b_eff, &z_bar[k]);
                    let affine = -(&b_k * &u_bar[k]);
                    StageDynamics {
                        a: a_k,
                        b: b_k,
                        affine,
                    }
                })
                .collect();
            let (qp, lay) =
                build_stage_qp(&stages, &z0, x_ref, &self.config, model.state_dim)?;
            let warm = self.warm.as_ref().map(|(x, y)| AdmmWarmStart {
                x: x.clone(),
                y: y.clone(),
            });
            let solution = admm_qp_solve(&qp, &self.config.solver, warm.as_ref())?;
            if !matches!(
                solution.status,
                SolveStatus::Solved | SolveStatus::MaxIterations
            ) {
                break;
            }
            self.warm = Some((solution.x.clone(), solution.y.clone()));

            // Step size and true-dynamics violation of the new iterate.
            let mut step = 0.0_f64;
            let mut violation = 0.0_f64;
            let mut z_new = Vec::with_capacity(horizon + 1);
            let mut u_new = Vec::with_capacity(horizon);
            z_new.push(z0.clone());
            for k in 0..horizon {
                let uk = lay.stage_input(&solution.x, k);
                let zk1 = lay.stage_state(&solution.x, k + 1);
                step = step.max((&uk - &u_bar[k]).amax());
                step = step.max((&zk1 - &z_bar[k + 1]).amax());
                let truth = &a_eff * &z_new[k] + &b_eff * crate::koopman::kron(&z_new[k], &uk);
                violation = violation.max((&zk1 - &truth).amax());
                z_new.push(zk1);
                u_new.push(uk);
            }
            sqp_residuals.push(violation);
            z_bar = z_new;
            u_bar = u_new;
            layout = Some(lay);
            best = Some(solution);
            if step < self.config.sqp.step_tolerance {
                break;
            }
        }

        let (Some(solution), Some(_lay)) = (best, layout) else {
            // No usable QP solve at all: degrade to the previous input.
            log::warn!("bilinear MPC produced no usable iterate; holding previous input");
            let u0 = self
                .last_input
                .clone()
                .unwrap_or_else(|| DVector::zeros(model.input_dim));
            self.last_input = Some(u0.clone());
            return Ok(MpcStepResult {
                u0,
                status: SolveStatus::NumericalFault,
                iterations: 0,
                degraded: true,
                primal_residual: f64::INFINITY,
                dual_residual: f64::INFINITY,
                sqp_residuals,
            });
        };

        self.guess = Some((z_bar.clone(), u_bar.clone()));
        let u0 = u_bar[0].clone();
        self.last_input = Some(u0.clone());
        Ok(MpcStepResult {
            u0,
            status: solution.status,
            iterations: solution.iterations,
            degraded: false,
            primal_residual: solution.primal_residual,
            dual_residual: solution.dual_residual,
            sqp_residuals,
        })
    }
}

#[cfg(test)]
mod tests;
