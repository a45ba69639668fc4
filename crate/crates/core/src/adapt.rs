//! Online estimation of additive model corrections (ΔA, ΔB) over a sliding
//! window of lifted prediction residuals, plus a closed-form least-squares
//! reference used to verify the gradient-descent path.
//!
//! At step k the window holds triples `(z_{k-1,obs}, u_{k-1}, Δz_k)` with
//! `Δz_k = z_{k,obs} − ẑ_k`, where `ẑ_k` is the one-step prediction from
//! the previous observation. The adapter minimizes
//!
//! `L = mean_t ‖Δz_t − ΔA·z_{t-1} − ΔB·v_{t-1}‖² + β₁‖ΔA‖₁ + β₂‖ΔB‖₁
//!      + β₃‖ΔA‖_F² + β₄‖ΔB‖_F²`
//!
//! with `v = u` (linear) or `v = z ⊗ u` (bilinear), warm-starting from the
//! previous control step. Deltas stay zero until the window fills.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::koopman::{kron, AdaptationDelta, KoopmanMode, KoopmanModel};
use crate::neural::{AdamConfig, AdamState};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdaptConfig {
    /// Window size w (steps).
    pub window: usize,
    /// Optimizer passes over the window per control step.
    pub epochs: usize,
    pub learning_rate: f64,
    /// Per-epoch multiplicative learning-rate decay. 1.0 keeps the rate
    /// constant, which is what the online loop uses; offline verification
    /// runs decay it to polish convergence.
    pub lr_decay: f64,
    /// L1 weight on ΔA (β₁).
    pub l1_a: f64,
    /// L1 weight on ΔB (β₂).
    pub l1_b: f64,
    /// Squared-Frobenius weight on ΔA (β₃).
    pub l2_a: f64,
    /// Squared-Frobenius weight on ΔB (β₄).
    pub l2_b: f64,
    /// Fold each step's correction into a running total and measure
    /// residuals against the corrected model (the in-place `A ← A + ΔA`
    /// reading). Off by default: residuals are measured against the
    /// nominal model and the controller receives `A_nom + ΔA_current`,
    /// which keeps the per-step optimization target well-defined.
    pub compounding: bool,
}

impl AdaptConfig {
    pub fn new(window: usize, epochs: usize, learning_rate: f64) -> Self {
        AdaptConfig {
            window,
            epochs,
            learning_rate,
            lr_decay: 1.0,
            l1_a: 0.0,
            l1_b: 0.0,
            l2_a: 0.0,
            l2_b: 0.0,
            compounding: false,
        }
    }

    /// Pendulum-chain benchmark settings: w = 4, 2 epochs,
    /// β₁ = β₂ = 0.05, β₃ = β₄ = 0.05.
    pub fn pendulum_defaults() -> Self {
        AdaptConfig {
            window: 4,
            epochs: 2,
            learning_rate: 0.02,
            lr_decay: 1.0,
            l1_a: 0.05,
            l1_b: 0.05,
            l2_a: 0.05,
            l2_b: 0.05,
            compounding: false,
        }
    }

    /// Manipulator benchmark settings: w = 10, 10 epochs,
    /// β₁ = β₂ = 1, β₃ = β₄ = 0.01.
    pub fn manipulator_defaults() -> Self {
        AdaptConfig {
            window: 10,
            epochs: 10,
            learning_rate: 0.02,
            lr_decay: 1.0,
            l1_a: 1.0,
            l1_b: 1.0,
            l2_a: 0.01,
            l2_b: 0.01,
            compounding: false,
        }
    }

    /// Quadrotor benchmark settings: w = 10, 10 epochs, β₁..β₄ = 1.
    pub fn quadrotor_defaults() -> Self {
        AdaptConfig {
            window: 10,
            epochs: 10,
            learning_rate: 0.02,
            lr_decay: 1.0,
            l1_a: 1.0,
            l1_b: 1.0,
            l2_a: 1.0,
            l2_b: 1.0,
            compounding: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::config("adaptation window must be at least 1"));
        }
        if [self.l1_a, self.l1_b, self.l2_a, self.l2_b]
            .iter()
            .any(|&b| b < 0.0)
        {
            return Err(Error::config("regularization weights must be non-negative"));
        }
        Ok(())
    }
}

/// One residual record: regressors at step t−1, residual at step t.
#[derive(Debug, Clone)]
pub struct WindowRecord {
    pub z_prev: DVector<f64>,
    pub u_prev: DVector<f64>,
    pub residual: DVector<f64>,
}

/// Ring buffer of the `w` most recent residual records.
#[derive(Debug, Clone)]
pub struct AdaptationWindow {
    capacity: usize,
    records: VecDeque<WindowRecord>,
    last_observation: Option<DVector<f64>>,
}

impl AdaptationWindow {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("adaptation window must hold at least 1 record"));
        }
        Ok(AdaptationWindow {
            capacity,
            records: VecDeque::with_capacity(capacity + 1),
            last_observation: None,
        })
    }

    /// Store the initial observation before any transition exists.
    pub fn prime(&mut self, z_obs: DVector<f64>) {
        self.last_observation = Some(z_obs);
    }

    /// Append the transition that ended at `z_obs`: the regressors are the
    /// previous observation and `u_prev`, the residual is `z_obs − z_hat`.
    /// The first call on an unprimed window only stores `z_obs`.
    pub fn record_step(
        &mut self,
        z_obs: DVector<f64>,
        u_prev: &DVector<f64>,
        z_hat: &DVector<f64>,
    ) {
        if let Some(z_prev) = self.last_observation.replace(z_obs.clone()) {
            self.records.push_back(WindowRecord {
                z_prev,
                u_prev: u_prev.clone(),
                residual: &z_obs - z_hat,
            });
            while self.records.len() > self.capacity {
                self.records.pop_front();
            }
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.records.len() == self.capacity
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn records(&self) -> impl Iterator<Item = &WindowRecord> {
        self.records.iter()
    }

    pub fn clear(&mut self) {
        self.records.clear();
        self.last_observation = None;
    }

    /// Stacked regressor/target matrices `(Z, V, D)` with one column per
    /// record; `V` holds `u` or `z ⊗ u` per `mode`.
    fn stacked(&self, mode: KoopmanMode) -> Option<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
        let w = self.records.len();
        let first = self.records.front()?;
        let p = first.z_prev.len();
        let m = first.u_prev.len();
        let q = mode.b_cols(p, m);
        let mut z = DMatrix::zeros(p, w);
        let mut v = DMatrix::zeros(q, w);
        let mut d = DMatrix::zeros(p, w);
        for (t, rec) in self.records.iter().enumerate() {
            z.set_column(t, &rec.z_prev);
            let vt = match mode {
                KoopmanMode::Linear => rec.u_prev.clone(),
                KoopmanMode::Bilinear => kron(&rec.z_prev, &rec.u_prev),
            };
            v.set_column(t, &vt);
            d.set_column(t, &rec.residual);
        }
        Some((z, v, d))
    }
}

/// Exact unregularized minimizer of the window residual fit, via normal
/// equations with an SVD pseudo-inverse fallback (minimum-norm when the
/// regressors are rank-deficient).
pub fn least_squares_oracle(
    win: &AdaptationWindow,
    mode: KoopmanMode,
) -> Result<AdaptationDelta> {
    let Some((z, v, d)) = win.stacked(mode) else {
        return Err(Error::config("least-squares oracle needs a non-empty window"));
    };
    let p = z.nrows();
    let q = v.nrows();
    // Regressor matrix Θ with rows [zᵀ | vᵀ]; solve min ‖G·Θ − D‖_F for
    // G = [ΔA | ΔB].
    let w = z.ncols();
    let mut theta = DMatrix::zeros(p + q, w);
    theta.rows_mut(0, p).copy_from(&z);
    theta.rows_mut(p, q).copy_from(&v);

    let gram = &theta * theta.transpose();
    let rhs = &d * theta.transpose(); // p × (p+q)
    let g = match gram.clone().cholesky() {
        Some(chol) => {
            // Gᵀ solves (ΘΘᵀ) Gᵀ = Θ Dᵀ.
            chol.solve(&rhs.transpose()).transpose()
        }
        None => {
            let svd = theta.transpose().svd(true, true);
            let pinv = svd
                .pseudo_inverse(1e-12)
                .map_err(Error::numerical)?;
            // Gᵀ = pinv(Θᵀ)·Dᵀ is the minimum-norm fit.
            (pinv * d.transpose()).transpose()
        }
    };
    Ok(AdaptationDelta {
        d_a: g.columns(0, p).into_owned(),
        d_b: g.columns(p, q).into_owned(),
    })
}

/// Nominal matrices plus the current correction, handed to the controller.
/// The nominal model itself is never mutated.
pub fn effective_matrices(
    model: &KoopmanModel,
    delta: &AdaptationDelta,
) -> (DMatrix<f64>, DMatrix<f64>) {
    (&model.a + &delta.d_a, &model.b + &delta.d_b)
}

/// Gradient-descent adapter with weights that persist across control steps.
#[derive(Debug, Clone)]
pub struct OnlineAdapter {
    pub config: AdaptConfig,
    mode: KoopmanMode,
    delta: AdaptationDelta,
    /// Running total in compounding mode.
    base: AdaptationDelta,
    adam: AdamState,
    faults: usize,
}

impl OnlineAdapter {
    pub fn new(model: &KoopmanModel, config: AdaptConfig) -> Result<Self> {
        config.validate()?;
        let delta = AdaptationDelta::zeros(model);
        let lens = [delta.d_a.len(), delta.d_b.len()];
        let adam = AdamState::new(
            &lens,
            AdamConfig::with_learning_rate(config.learning_rate),
        );
        Ok(OnlineAdapter {
            config,
            mode: model.mode,
            delta: delta.clone(),
            base: delta,
            adam,
        faults: 0,
        })
    }

    /// Correction the controller should use right now.
    pub fn current(&self) -> AdaptationDelta {
        if self.config.compounding {
            self.base.clone()
        } else {
            self.delta.clone()
        }
    }

    /// Delta used when predicting `ẑ` for residual bookkeeping: nominal
    /// (none) by default, the running total when compounding.
    pub fn prediction_delta(&self) -> Option<AdaptationDelta> {
        if self.config.compounding {
            Some(self.base.clone())
        } else {
            None
        }
    }

    pub fn fault_count(&self) -> usize {
        self.faults
    }

    /// Run `epochs` Adam passes over the window and return the correction
    /// for this control step. Deltas remain zero while the window is not
    /// yet full. Any non-finite loss resets the adapter to zero (graceful
    /// degradation to the nominal controller).
    ///
    /// Descent runs on per-channel normalized regressors (z̃ = z/s with s
    /// the window-wise channel magnitudes). The objective and its full-rank
    /// minimizer are unchanged; on rank-deficient windows the conditioning
    /// steers the correction onto well-scaled channels instead of letting
    /// the largest raw coordinates soak it up.
    pub fn adapt(&mut self, win: &AdaptationWindow) -> Result<AdaptationDelta> {
        if !win.is_full() {
            return Ok(AdaptationDelta {
                d_a: DMatrix::zeros(self.delta.d_a.nrows(), self.delta.d_a.ncols()),
                d_b: DMatrix::zeros(self.delta.d_b.nrows(), self.delta.d_b.ncols()),
            });
        }
        let (mut z, mut v, d) = win
            .stacked(self.mode)
            .expect("full window is non-empty");
        if z.nrows() != self.delta.d_a.nrows() {
            return Err(Error::config("window record dimensions do not match model"));
        }

        let channel_scales = |m: &DMatrix<f64>| -> DVector<f64> {
            DVector::from_fn(m.nrows(), |i, _| {
                m.row(i).iter().fold(1.0_f64, |acc, e| acc.max(e.abs()))
            })
        };
        let s_z = channel_scales(&z);
        let s_v = channel_scales(&v);
        for (mut row, s) in z.row_iter_mut().zip(s_z.iter()) {
            row /= *s;
        }
        for (mut row, s) in v.row_iter_mut().zip(s_v.iter()) {
            row /= *s;
        }
        // Work on Δ̃ = Δ·diag(s): Δ̃·z̃ = Δ·z.
        let mut da = self.delta.d_a.clone();
        for (mut col, s) in da.column_iter_mut().zip(s_z.iter()) {
            col *= *s;
        }
        let mut db = self.delta.d_b.clone();
        for (mut col, s) in db.column_iter_mut().zip(s_v.iter()) {
            col *= *s;
        }

        let w = z.ncols() as f64;
        let cfg = self.config;
        let mut lr = cfg.learning_rate;
        for _ in 0..cfg.epochs {
            let residual = &d - &da * &z - &db * &v;
            let loss = residual.norm_squared() / w
                + cfg.l1_a * da.iter().map(|e| e.abs()).sum::<f64>()
                + cfg.l1_b * db.iter().map(|e| e.abs()).sum::<f64>()
                + cfg.l2_a * da.norm_squared()
                + cfg.l2_b * db.norm_squared();
            if !loss.is_finite() {
                log::warn!("adaptation loss became non-finite; resetting deltas to zero");
                self.reset();
                self.faults += 1;
                return Ok(self.current());
            }

            let scale = -2.0 / w;
            let mut grad_a = &residual * z.transpose();
            grad_a *= scale;
            let mut grad_b = &residual * v.transpose();
            grad_b *= scale;
            // L1 subgradient (0 at 0) and squared-Frobenius terms.
            grad_a.zip_apply(&da, |g, p| {
                *g += cfg.l1_a * p.signum() * f64::from(p != 0.0) + 2.0 * cfg.l2_a * p;
            });
            grad_b.zip_apply(&db, |g, p| {
                *g += cfg.l1_b * p.signum() * f64::from(p != 0.0) + 2.0 * cfg.l2_b * p;
            });

            self.adam.config.learning_rate = lr;
            self.adam.step(
                &mut [da.as_mut_slice(), db.as_mut_slice()],
                &[grad_a.as_slice(), grad_b.as_slice()],
            )?;
            lr *= cfg.lr_decay;
        }

        // Back to raw coordinates.
        for (mut col, s) in da.column_iter_mut().zip(s_z.iter()) {
            col /= *s;
        }
        for (mut col, s) in db.column_iter_mut().zip(s_v.iter()) {
            col /= *s;
        }
        self.delta.d_a = da;
        self.delta.d_b = db;

        if !self.delta.d_a.iter().chain(self.delta.d_b.iter()).all(|e| e.is_finite()) {
            log::warn!("adaptation produced non-finite deltas; resetting to zero");
            self.reset();
            self.faults += 1;
            return Ok(self.current());
        }

        if cfg.compounding {
            self.base.d_a += &self.delta.d_a;
            self.base.d_b += &self.delta.d_b;
            self.delta.d_a.fill(0.0);
            self.delta.d_b.fill(0.0);
            self.adam.reset();
        }
        Ok(self.current())
    }

    pub fn reset(&mut self) {
        self.delta.d_a.fill(0.0);
        self.delta.d_b.fill(0.0);
        self.base.d_a.fill(0.0);
        self.base.d_b.fill(0.0);
        self.adam.reset();
    }
}
