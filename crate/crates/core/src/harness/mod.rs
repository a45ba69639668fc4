//! Closed-loop experiment runner, robustness sweeps, and their artifacts.
//!
//! One control step runs: measure (truth + noise) → lift → record the
//! lifted residual → update (ΔA, ΔB) when adaptive and the window is full
//! → solve the MPC with the corrected matrices → apply the input plus any
//! injected disturbance to the perturbed plant → integrate one loop
//! period. Nominal and adaptive arms of a comparison share the plant
//! perturbation, noise, and disturbance realizations exactly (same seed).

mod metrics;
mod refs;
mod sweep;
mod trace;

pub use metrics::{
    channel_groups, compute_metrics, improvement_pct, timing_stats, MetricsReport, TimingStats,
};
pub use refs::{ReferenceSpec, ReferenceTrajectory, ShapeId};
pub use sweep::{run_sweep, write_sweep_csv, SweepAxis, SweepGrid, SweepRow};
pub use trace::{read_trace, write_trace, Trace, TraceRow};

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adapt::{AdaptConfig, AdaptationWindow, OnlineAdapter};
use crate::dynamics::{
    integrate, DisturbanceSpec, Manipulator, ManipulatorParams, NoiseSpec, PendulumChain,
    PendulumChainParams, Plant, PlanarQuadrotor, QuadrotorParams,
};
use crate::error::{Error, Result};
use crate::koopman::{AdaptationDelta, KoopmanMode, KoopmanModel};
use crate::mpc::{AdmmSettings, BilinearMpc, LinearMpc, MpcConfig, MpcStepResult, SqpSettings};
use crate::offline::SystemId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    Nominal,
    Adaptive,
}

/// Static plant-side uncertainty applied once at episode start.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct UncertaintySpec {
    /// Pendulum: every constant independently scaled by ±delta_pct %.
    #[serde(default)]
    pub delta_pct: Option<f64>,
    /// Manipulator: link-mass (and proportional inertia) scale factor.
    #[serde(default)]
    pub mass_scale: Option<f64>,
    /// Quadrotor deployment overrides.
    #[serde(default)]
    pub quadrotor: Option<QuadrotorOverride>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct QuadrotorOverride {
    pub mass: Option<f64>,
    pub inertia: Option<f64>,
    pub wind_speed: Option<f64>,
    pub wind_direction: Option<f64>,
}

/// MPC settings in config-file form (diagonal weights).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MpcFileConfig {
    pub horizon: usize,
    pub q_diag: Vec<f64>,
    pub r_diag: Vec<f64>,
    pub u_min: Vec<f64>,
    pub u_max: Vec<f64>,
    #[serde(default)]
    pub x_min: Option<Vec<f64>>,
    #[serde(default)]
    pub x_max: Option<Vec<f64>>,
    #[serde(default)]
    pub solver: Option<AdmmSettings>,
    #[serde(default)]
    pub sqp: Option<SqpSettings>,
}

impl MpcFileConfig {
    pub fn to_mpc_config(&self, state_dim: usize, input_dim: usize) -> Result<MpcConfig> {
        if self.q_diag.len() != state_dim {
            return Err(Error::config("q_diag length must equal the state dimension"));
        }
        if self.r_diag.len() != input_dim
            || self.u_min.len() != input_dim
            || self.u_max.len() != input_dim
        {
            return Err(Error::config("input weight/bound lengths must equal m"));
        }
        let mut cfg = MpcConfig::new(self.horizon, state_dim, input_dim);
        cfg.q = DMatrix::from_diagonal(&DVector::from_row_slice(&self.q_diag));
        cfg.r = DMatrix::from_diagonal(&DVector::from_row_slice(&self.r_diag));
        cfg.u_min = DVector::from_row_slice(&self.u_min);
        cfg.u_max = DVector::from_row_slice(&self.u_max);
        cfg.x_min = self.x_min.as_ref().map(|v| DVector::from_row_slice(v));
        cfg.x_max = self.x_max.as_ref().map(|v| DVector::from_row_slice(v));
        if let Some(solver) = self.solver {
            cfg.solver = solver;
        }
        if let Some(sqp) = self.sqp {
            cfg.sqp = sqp;
        }
        cfg.validate(state_dim, input_dim)?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub system: SystemId,
    pub mode: RunMode,
    /// Episode length (s).
    pub duration: f64,
    /// Control loop rate (Hz); duration × rate must be integral.
    pub rate_hz: f64,
    /// Inner RK4 substeps per loop period.
    pub substeps: usize,
    pub seed: u64,
    #[serde(default)]
    pub uncertainty: UncertaintySpec,
    #[serde(default)]
    pub disturbance: DisturbanceSpec,
    /// Measurement SNR in dB; absent means noise off.
    #[serde(default)]
    pub snr_db: Option<f64>,
    pub reference: ReferenceSpec,
    pub mpc: MpcFileConfig,
    pub adapt: AdaptConfig,
    /// Episode start state; per-system default when absent.
    #[serde(default)]
    pub initial_state: Option<Vec<f64>>,
    /// Episode aborts (flagged diverged) when |x|∞ exceeds this.
    #[serde(default = "default_state_guard")]
    pub state_guard: f64,
}

fn default_state_guard() -> f64 {
    1e6
}

impl ExperimentConfig {
    pub fn steps(&self) -> Result<usize> {
        let raw = self.duration * self.rate_hz;
        let steps = raw.round();
        if (raw - steps).abs() > 1e-9 {
            return Err(Error::config(
                "duration × rate must be an integral number of steps",
            ));
        }
        Ok(steps as usize)
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.rate_hz
    }

    pub fn validate(&self, model: &KoopmanModel) -> Result<()> {
        if model.state_dim != self.system.state_dim()
            || model.input_dim != self.system.input_dim()
        {
            return Err(Error::config(
                "model dimensions do not match the experiment system",
            ));
        }
        self.steps()?;
        self.reference.validate(self.system)?;
        self.adapt.validate()?;
        self.disturbance.validate()?;
        if let Some(x0) = &self.initial_state {
            if x0.len() != self.system.state_dim() {
                return Err(Error::config("initial_state length must equal n"));
            }
        }
        Ok(())
    }

    pub fn with_mode(&self, mode: RunMode) -> Self {
        let mut out = self.clone();
        out.mode = mode;
        out
    }
}

/// Seed salts keeping the plant-perturbation and noise streams independent
/// but shared across the arms of a paired comparison.
const PLANT_SALT: u64 = 0x9E37_79B9_7F4A_7C15;
const NOISE_SALT: u64 = 0xD1B5_4A32_D192_ED03;

fn build_plant(cfg: &ExperimentConfig) -> Result<Box<dyn Plant>> {
    let mut plant_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ PLANT_SALT);
    match cfg.system {
        SystemId::Pendulum => {
            let mut params = PendulumChainParams::synchronization_benchmark();
            if let Some(delta) = cfg.uncertainty.delta_pct {
                params = params.perturbed(delta, &mut plant_rng)?;
            }
            Ok(Box::new(PendulumChain::new(params)?))
        }
        SystemId::Manipulator => {
            let mut params = ManipulatorParams::standard();
            if let Some(scale) = cfg.uncertainty.mass_scale {
                params = params.with_mass_scale(scale);
            }
            Ok(Box::new(Manipulator::new(params)?))
        }
        SystemId::Quadrotor => {
            let mut params = QuadrotorParams::standard();
            if let Some(o) = cfg.uncertainty.quadrotor {
                if let Some(m) = o.mass {
                    params.mass = m;
                }
                if let Some(i) = o.inertia {
                    params.inertia = i;
                }
                if let Some(v) = o.wind_speed {
                    params.wind_speed = v;
                }
                if let Some(a) = o.wind_direction {
                    params.wind_direction = a;
                }
            }
            Ok(Box::new(PlanarQuadrotor::new(params)?))
        }
    }
}

fn default_initial_state(cfg: &ExperimentConfig, reference: &ReferenceTrajectory) -> DVector<f64> {
    match cfg.system {
        SystemId::Quadrotor => {
            // Start on the reference path with its initial velocity.
            reference.state_at(0.0)
        }
        _ => DVector::zeros(cfg.system.state_dim()),
    }
}

enum Controller {
    Linear(LinearMpc),
    Bilinear(BilinearMpc),
}

impl Controller {
    fn new(model: &KoopmanModel, config: MpcConfig) -> Self {
        match model.mode {
            KoopmanMode::Linear => Controller::Linear(LinearMpc::new(config)),
            KoopmanMode::Bilinear => Controller::Bilinear(BilinearMpc::new(config)),
        }
    }

    fn solve(
        &mut self,
        model: &KoopmanModel,
        delta: Option<&AdaptationDelta>,
        x0: &DVector<f64>,
        x_ref: &[DVector<f64>],
    ) -> Result<MpcStepResult> {
        match self {
            Controller::Linear(c) => c.solve(model, delta, x0, x_ref),
            Controller::Bilinear(c) => c.solve(model, delta, x0, x_ref),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeOutcome {
    pub metrics: MetricsReport,
    pub trace: Trace,
}

/// Run one closed-loop episode of `cfg` with `model`.
pub fn run_closed_loop(cfg: &ExperimentConfig, model: &KoopmanModel) -> Result<EpisodeOutcome> {
    cfg.validate(model)?;
    let steps = cfg.steps()?;
    let dt = cfg.dt();
    let n = cfg.system.state_dim();

    let plant = build_plant(cfg)?;
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ NOISE_SALT);

    // The reference needs the start state (the pendulum ramp starts at
    // θ(0)); shapes ignore it, so a zero placeholder is fine to bootstrap.
    let placeholder = ReferenceTrajectory::new(
        cfg.reference.clone(),
        cfg.system,
        DVector::zeros(n),
    )?;
    let x0 = cfg
        .initial_state
        .as_ref()
        .map(|v| DVector::from_row_slice(v))
        .unwrap_or_else(|| default_initial_state(cfg, &placeholder));
    let reference = ReferenceTrajectory::new(cfg.reference.clone(), cfg.system, x0.clone())?;

    let noise = match cfg.snr_db {
        Some(snr) => NoiseSpec::with_snr(snr)
            .calibrated(reference.channel_power(cfg.duration, cfg.rate_hz)),
        None => NoiseSpec::off(),
    };

    let mpc_config = cfg.mpc.to_mpc_config(n, cfg.system.input_dim())?;
    let horizon = mpc_config.horizon;
    let mut controller = Controller::new(model, mpc_config);
    let mut window = AdaptationWindow::new(cfg.adapt.window)?;
    let mut adapter = OnlineAdapter::new(model, cfg.adapt)?;
    let adaptive = cfg.mode == RunMode::Adaptive;
    let zero_delta = AdaptationDelta::zeros(model);

    let mut rows = Vec::with_capacity(steps);
    let mut diverged = false;
    let mut x_true = x0;
    let mut prev_input: Option<DVector<f64>> = None;
    let mut predicted_obs: Option<DVector<f64>> = None;

    for step in 0..steps {
        let t = step as f64 * dt;
        let x_obs = noise.apply(&x_true, &mut noise_rng)?;
        let z_obs = model.lift(&x_obs)?;

        // Residual bookkeeping against the one-step prediction made at the
        // previous step.
        match (&prev_input, &predicted_obs) {
            (Some(u_prev), Some(z_hat)) => window.record_step(z_obs.clone(), u_prev, z_hat),
            _ => window.prime(z_obs.clone()),
        }

        let adapt_start = Instant::now();
        let delta = if adaptive {
            adapter.adapt(&window)?
        } else {
            zero_delta.clone()
        };
        let adapt_ms = adapt_start.elapsed().as_secs_f64() * 1e3;

        let x_ref_slice: Vec<DVector<f64>> = (1..=horizon)
            .map(|j| reference.state_at(t + j as f64 * dt))
            .collect();
        let solve_start = Instant::now();
        let result = controller.solve(model, Some(&delta), &x_obs, &x_ref_slice)?;
        let solve_ms = solve_start.elapsed().as_secs_f64() * 1e3;
        let u = result.u0.clone();

        // Prediction for the next residual: nominal model by default, the
        // accumulated correction when compounding.
        let pred_delta = adapter.prediction_delta();
        predicted_obs = Some(model.predict(&z_obs, &u, pred_delta.as_ref())?);
        prev_input = Some(u.clone());

        rows.push(TraceRow {
            step,
            t,
            x: x_true.clone(),
            x_obs,
            x_ref: reference.state_at(t),
            u: u.clone(),
            solve_status: result.status,
            solve_ms,
            adapt_ms,
            d_a_norm: delta.d_a.norm(),
            d_b_norm: delta.d_b.norm(),
        });

        // Disturbance torque enters on the actuated channel.
        let mut u_applied = u;
        u_applied[0] += cfg.disturbance.torque_at(t);
        match integrate(plant.as_ref(), &x_true, &u_applied, dt, cfg.substeps) {
            Ok(next) => x_true = next,
            Err(e) => {
                log::warn!("episode stopped early at step {step}: {e}");
                diverged = true;
                break;
            }
        }
        if x_true.amax() > cfg.state_guard {
            log::warn!("episode diverged at step {step} (state guard)");
            diverged = true;
            break;
        }
    }

    let trace = Trace {
        system: cfg.system,
        dt,
        rows,
        diverged,
    };
    let metrics = compute_metrics(&trace)?;
    Ok(EpisodeOutcome { metrics, trace })
}

#[derive(Debug, Clone)]
pub struct PairedOutcome {
    pub nominal: EpisodeOutcome,
    pub adaptive: EpisodeOutcome,
}

impl PairedOutcome {
    pub fn improvement_rms_position(&self) -> f64 {
        improvement_pct(
            self.nominal.metrics.rms_position,
            self.adaptive.metrics.rms_position,
        )
    }

    pub fn improvement_rms_velocity(&self) -> f64 {
        improvement_pct(
            self.nominal.metrics.rms_velocity,
            self.adaptive.metrics.rms_velocity,
        )
    }
}

/// Run the nominal and adaptive arms on identical seeds (shared plant,
/// noise, and disturbance realizations).
pub fn run_paired(cfg: &ExperimentConfig, model: &KoopmanModel) -> Result<PairedOutcome> {
    Ok(PairedOutcome {
        nominal: run_closed_loop(&cfg.with_mode(RunMode::Nominal), model)?,
        adaptive: run_closed_loop(&cfg.with_mode(RunMode::Adaptive), model)?,
    })
}
