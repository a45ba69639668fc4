//! Nominal-dataset generation and offline training of the nominal Koopman
//! model.
//!
//! Training minimizes the composite loss
//!
//! `L = α₁·L_rec + α₂·L_pred + α₃·L_lift + γ₁‖W‖₁ + γ₂‖W‖₂²`
//!
//! over the lifting-network weights and the transition matrices (A, B),
//! with `L_rec = mean‖x − C·z‖²` (identically zero under the frozen
//! projection — computed and reported, not optimized),
//! `L_pred = mean‖x⁺ − C·ẑ⁺‖²`, and `L_lift = mean‖z⁺ − ẑ⁺‖²`, all
//! batch-averaged squared 2-norms.

mod datagen;
mod io;

pub use datagen::{generate_dataset, lqr_gain, GenConfig, SystemId};
pub use io::{load_dataset, save_dataset, DatasetManifest};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::koopman::{KoopmanMode, KoopmanModel};
use crate::neural::{Activation, AdamConfig, AdamState, Mlp, MlpGrads};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Validation,
}

/// Aligned snapshot columns of one trajectory: `y.column(j)` is the
/// simulator's one-step image of `(x.column(j), u.column(j))`.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotTriple {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub u: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct SnapshotDataset {
    pub system: SystemId,
    pub trajectories: Vec<SnapshotTriple>,
    pub dt: f64,
    pub seed: u64,
    pub split: SplitTag,
}

impl SnapshotDataset {
    pub fn num_samples(&self) -> usize {
        self.trajectories.iter().map(|t| t.x.ncols()).sum()
    }

    /// Concatenate all trajectories into aligned (X, Y, U) column blocks.
    pub fn stacked(&self) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
        let total = self.num_samples();
        let first = self
            .trajectories
            .first()
            .ok_or_else(|| Error::config("dataset holds no trajectories"))?;
        let n = first.x.nrows();
        let m = first.u.nrows();
        let mut x = DMatrix::zeros(n, total);
        let mut y = DMatrix::zeros(n, total);
        let mut u = DMatrix::zeros(m, total);
        let mut col = 0;
        for t in &self.trajectories {
            let k = t.x.ncols();
            x.columns_mut(col, k).copy_from(&t.x);
            y.columns_mut(col, k).copy_from(&t.y);
            u.columns_mut(col, k).copy_from(&t.u);
            col += k;
        }
        Ok((x, y, u))
    }
}

/// Network/model architecture of the nominal Koopman model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArchConfig {
    pub mode: KoopmanMode,
    pub hidden: Vec<usize>,
    pub lifted_dim: usize,
    pub constant_channel: bool,
}

impl ArchConfig {
    /// Published architectures: hidden widths and lifted dimension p per
    /// system (z = [x; ψ(x); 1]).
    pub fn benchmark(system: SystemId, mode: KoopmanMode) -> Self {
        let (hidden, lifted_dim) = match system {
            SystemId::Pendulum => (vec![40, 40], 17),
            SystemId::Manipulator => (vec![30, 30], 17),
            SystemId::Quadrotor => (vec![20, 20], 15),
        };
        ArchConfig {
            mode,
            hidden,
            lifted_dim,
            constant_channel: true,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Loss weights (α₁, α₂, α₃) on (L_rec, L_pred, L_lift).
    pub alpha: [f64; 3],
    /// Regularization weights (γ₁, γ₂) on ‖W‖₁ and ‖W‖₂².
    pub gamma: [f64; 2],
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Per-epoch multiplicative learning-rate decay.
    pub lr_decay: f64,
    /// Stop after this many epochs without validation improvement.
    pub patience: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Published loss weights per system; epochs and learning rate are not
    /// published and default to 200 with early stopping at 1e-3.
    pub fn benchmark(system: SystemId) -> Self {
        let (alpha, gamma) = match system {
            SystemId::Pendulum => ([1.0, 0.4, 1.0], [1e-5, 1e-5]),
            SystemId::Manipulator | SystemId::Quadrotor => ([1.0, 0.3, 1.0], [0.0, 0.0]),
        };
        TrainConfig {
            alpha,
            gamma,
            batch_size: 256,
            epochs: 200,
            learning_rate: 1e-3,
            lr_decay: 0.995,
            patience: 25,
            seed: 11,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if self.alpha.iter().chain(self.gamma.iter()).any(|&w| w < 0.0) {
            return Err(Error::config("loss weights must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NominalLosses {
    pub reconstruction: f64,
    pub prediction: f64,
    pub lifting: f64,
}

impl NominalLosses {
    pub fn weighted(&self, alpha: &[f64; 3]) -> f64 {
        alpha[0] * self.reconstruction + alpha[1] * self.prediction + alpha[2] * self.lifting
    }
}

/// Batched input regressor: `U` in linear mode, columnwise `z ⊗ u` in
/// bilinear mode.
fn input_regressor_batch(
    mode: KoopmanMode,
    z: &DMatrix<f64>,
    u: &DMatrix<f64>,
) -> DMatrix<f64> {
    match mode {
        KoopmanMode::Linear => u.clone(),
        KoopmanMode::Bilinear => {
            let (p, m, cols) = (z.nrows(), u.nrows(), u.ncols());
            let mut v = DMatrix::zeros(p * m, cols);
            for c in 0..cols {
                for i in 0..p {
                    for j in 0..m {
                        v[(i * m + j, c)] = z[(i, c)] * u[(j, c)];
                    }
                }
            }
            v
        }
    }
}

/// The three composite-loss terms on an aligned batch (x_k, x_{k+1}, u_k).
pub fn nominal_losses(
    model: &KoopmanModel,
    x: &DMatrix<f64>,
    x_next: &DMatrix<f64>,
    u: &DMatrix<f64>,
) -> Result<NominalLosses> {
    let cols = x.ncols() as f64;
    let z = model.lift_batch(x)?;
    let z_next = model.lift_batch(x_next)?;
    let v = input_regressor_batch(model.mode, &z, u);
    let z_hat = &model.a * &z + &model.b * &v;

    let n = model.state_dim;
    let reconstruction = (x - z.rows(0, n)).norm_squared() / cols;
    let prediction = (x_next - z_hat.rows(0, n)).norm_squared() / cols;
    let lifting = (&z_next - &z_hat).norm_squared() / cols;
    Ok(NominalLosses {
        reconstruction,
        prediction,
        lifting,
    })
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub initial_validation_prediction: f64,
    pub best_validation_prediction: f64,
    pub history: Vec<EpochStats>,
}

#[derive(Debug, Clone, Copy)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_prediction: f64,
}

struct TrainerState {
    net: Option<Mlp>,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl TrainerState {
    fn to_model(&self, arch: &ArchConfig, n: usize, m: usize) -> Result<KoopmanModel> {
        KoopmanModel::new(
            arch.mode,
            n,
            m,
            arch.lifted_dim,
            self.net.clone(),
            arch.constant_channel,
            self.a.clone(),
            self.b.clone(),
        )
    }
}

/// Train the nominal model on `train`, early-stopping on the validation
/// one-step prediction loss. Deterministic for a fixed (seed, config,
/// dataset).
pub fn train_nominal(
    train: &SnapshotDataset,
    validation: &SnapshotDataset,
    arch: &ArchConfig,
    cfg: &TrainConfig,
) -> Result<(KoopmanModel, TrainReport)> {
    cfg.validate()?;
    let (x_all, y_all, u_all) = train.stacked()?;
    let (xv, yv, uv) = validation.stacked()?;
    let n = x_all.nrows();
    let m = u_all.nrows();
    let p = arch.lifted_dim;
    let psi_dim = p
        .checked_sub(n + usize::from(arch.constant_channel))
        .ok_or_else(|| Error::config("lifted_dim smaller than the state layout"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let net = if psi_dim > 0 {
        let mut sizes = vec![n];
        sizes.extend_from_slice(&arch.hidden);
        sizes.push(psi_dim);
        let mut acts = vec![Activation::Tanh; sizes.len() - 2];
        acts.push(Activation::Linear);
        Some(Mlp::new(&sizes, &acts, &mut rng)?)
    } else {
        None
    };

    // A starts at identity (the lifted state barely moves in one step at
    // 100 Hz), B at zero.
    let mut state = TrainerState {
        net,
        a: DMatrix::identity(p, p),
        b: DMatrix::zeros(p, arch.mode.b_cols(p, m)),
    };

    let mut tensor_lens: Vec<usize> = Vec::new();
    if let Some(net) = &state.net {
        for l in net.layers() {
            tensor_lens.push(l.weight.len());
            tensor_lens.push(l.bias.len());
        }
    }
    tensor_lens.push(state.a.len());
    tensor_lens.push(state.b.len());
    let mut adam = AdamState::new(&tensor_lens, AdamConfig::with_learning_rate(cfg.learning_rate));

    let eval_validation = |state: &TrainerState| -> Result<f64> {
        let model = state.to_model(arch, n, m)?;
        Ok(nominal_losses(&model, &xv, &yv, &uv)?.prediction)
    };

    let initial_validation = eval_validation(&state)?;
    let mut best_validation = initial_validation;
    let mut best_snapshot = (state.net.clone(), state.a.clone(), state.b.clone());
    let mut stale_epochs = 0usize;
    let mut history = Vec::with_capacity(cfg.epochs);
    let total = x_all.ncols();
    let mut order: Vec<usize> = (0..total).collect();
    let mut lr = cfg.learning_rate;

    let mut epochs_run = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0.0_f64;
        for chunk in order.chunks(cfg.batch_size) {
            let xb = gather(&x_all, chunk);
            let yb = gather(&y_all, chunk);
            let ub = gather(&u_all, chunk);
            let loss = train_step(&mut state, &mut adam, arch, cfg, lr, &xb, &yb, &ub)?;
            if !loss.is_finite() {
                return Err(Error::numerical(format!(
                    "training loss became non-finite at epoch {epoch}"
                )));
            }
            epoch_loss += loss;
            batches += 1.0;
        }
        lr *= cfg.lr_decay;
        epochs_run = epoch + 1;

        let validation_prediction = eval_validation(&state)?;
        history.push(EpochStats {
            epoch,
            train_loss: epoch_loss / batches.max(1.0),
            validation_prediction,
        });
        if validation_prediction < best_validation {
            best_validation = validation_prediction;
            best_snapshot = (state.net.clone(), state.a.clone(), state.b.clone());
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if stale_epochs > cfg.patience {
                log::info!("early stop at epoch {epoch} (validation stalled)");
                break;
            }
        }
    }

    if epochs_run > 0 {
        state.net = best_snapshot.0;
        state.a = best_snapshot.1;
        state.b = best_snapshot.2;
    }
    let model = state.to_model(arch, n, m)?;
    Ok((
        model,
        TrainReport {
            epochs_run,
            initial_validation_prediction: initial_validation,
            best_validation_prediction: best_validation,
            history,
        },
    ))
}

fn gather(src: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(src.nrows(), cols.len());
    for (dst, &c) in cols.iter().enumerate() {
        out.set_column(dst, &src.column(c));
    }
    out
}

/// One Adam step on a batch; returns the composite loss at the evaluated
/// point.
#[allow(clippy::too_many_arguments)]
fn train_step(
    state: &mut TrainerState,
    adam: &mut AdamState,
    arch: &ArchConfig,
    cfg: &TrainConfig,
    lr: f64,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    u: &DMatrix<f64>,
) -> Result<f64> {
    let cols = x.ncols();
    let colsf = cols as f64;
    let n = x.nrows();
    let p = arch.lifted_dim;
    let constant = arch.constant_channel;
    let psi_rows = p - n - usize::from(constant);

    // Lift both snapshot sides, keeping tapes for backprop.
    let (z, tape_x, z_next, tape_y) = match &state.net {
        Some(net) => {
            let (psi_x, tape_x) = net.forward(x)?;
            let (psi_y, tape_y) = net.forward(y)?;
            (
                assemble_lift(x, Some(&psi_x), constant, p),
                Some(tape_x),
                assemble_lift(y, Some(&psi_y), constant, p),
                Some(tape_y),
            )
        }
        None => (
            assemble_lift(x, None, constant, p),
            None,
            assemble_lift(y, None, constant, p),
            None,
        ),
    };

    let v = input_regressor_batch(arch.mode, &z, u);
    let z_hat = &state.a * &z + &state.b * &v;

    // Loss terms (L_rec is structurally zero; see module docs).
    let pred_err = y - z_hat.rows(0, n);
    let lift_err = &z_next - &z_hat;
    let l_pred = pred_err.norm_squared() / colsf;
    let l_lift = lift_err.norm_squared() / colsf;
    let mut loss = cfg.alpha[1] * l_pred + cfg.alpha[2] * l_lift;

    // dL/dẑ⁺ from both data terms.
    let mut d_zhat = &lift_err * (-2.0 * cfg.alpha[2] / colsf);
    let scaled_pred = &pred_err * (-2.0 * cfg.alpha[1] / colsf);
    {
        let mut top = d_zhat.rows_mut(0, n);
        top += &scaled_pred;
    }

    let mut grad_a = &d_zhat * z.transpose();
    let mut grad_b = &d_zhat * v.transpose();

    // Gradient into the lifted states.
    let mut d_z = state.a.transpose() * &d_zhat;
    if arch.mode == KoopmanMode::Bilinear {
        let d_v = state.b.transpose() * &d_zhat; // (p·m) × cols
        let m_dim = u.nrows();
        for c in 0..cols {
            for i in 0..p {
                let mut acc = 0.0;
                for j in 0..m_dim {
                    acc += u[(j, c)] * d_v[(i * m_dim + j, c)];
                }
                d_z[(i, c)] += acc;
            }
        }
    }
    let d_z_next = lift_err * (2.0 * cfg.alpha[2] / colsf);

    // Backprop through the lifting net (ψ rows only; the x and constant
    // rows carry no parameters).
    let mut net_grads: Option<MlpGrads> = None;
    if let (Some(net), Some(tx), Some(ty)) = (&state.net, &tape_x, &tape_y) {
        let up_x = d_z.rows(n, psi_rows).into_owned();
        let up_y = d_z_next.rows(n, psi_rows).into_owned();
        let (gx, _) = net.backward(tx, &up_x)?;
        let (gy, _) = net.backward(ty, &up_y)?;
        let mut g = gx;
        g.add_assign(&gy);
        net_grads = Some(g);
    }

    // Regularizers over every trainable tensor.
    fn reg(l1: f64, l2: f64, param: f64, grad: &mut f64, acc: &mut f64) {
        *acc += l1 * param.abs() + l2 * param * param;
        *grad += l1 * param.signum() * f64::from(param != 0.0) + 2.0 * l2 * param;
    }
    let (g_l1, g_l2) = (cfg.gamma[0], cfg.gamma[1]);
    let mut reg_loss = 0.0;
    if g_l1 != 0.0 || g_l2 != 0.0 {
        if let (Some(net), Some(grads)) = (&state.net, &mut net_grads) {
            for (layer, (gw, gb)) in net
                .layers()
                .iter()
                .zip(grads.weights.iter_mut().zip(grads.biases.iter_mut()))
            {
                for (pv, gv) in layer.weight.iter().zip(gw.iter_mut()) {
                    reg(g_l1, g_l2, *pv, gv, &mut reg_loss);
                }
                for (pv, gv) in layer.bias.iter().zip(gb.iter_mut()) {
                    reg(g_l1, g_l2, *pv, gv, &mut reg_loss);
                }
            }
        }
        for (pv, gv) in state.a.iter().zip(grad_a.iter_mut()) {
            reg(g_l1, g_l2, *pv, gv, &mut reg_loss);
        }
        for (pv, gv) in state.b.iter().zip(grad_b.iter_mut()) {
            reg(g_l1, g_l2, *pv, gv, &mut reg_loss);
        }
    }
    loss += reg_loss;

    // Assemble tensor lists in the fixed optimizer order.
    adam.config.learning_rate = lr;
    match (&mut state.net, &net_grads) {
        (Some(net), Some(grads)) => {
            let mut params = net.param_slices_mut();
            params.push(state.a.as_mut_slice());
            params.push(state.b.as_mut_slice());
            let mut grad_slices = Mlp::grad_slices(grads);
            grad_slices.push(grad_a.as_slice());
            grad_slices.push(grad_b.as_slice());
            adam.step(&mut params, &grad_slices)?;
        }
        (None, _) => {
            adam.step(
                &mut [state.a.as_mut_slice(), state.b.as_mut_slice()],
                &[grad_a.as_slice(), grad_b.as_slice()],
            )?;
        }
        _ => unreachable!("tapes exist iff the net exists"),
    }
    Ok(loss)
}

fn assemble_lift(
    x: &DMatrix<f64>,
    psi: Option<&DMatrix<f64>>,
    constant: bool,
    p: usize,
) -> DMatrix<f64> {
    let cols = x.ncols();
    let n = x.nrows();
    let mut z = DMatrix::zeros(p, cols);
    z.rows_mut(0, n).copy_from(x);
    if let Some(psi) = psi {
        z.rows_mut(n, psi.nrows()).copy_from(psi);
    }
    if constant {
        z.row_mut(p - 1).fill(1.0);
    }
    z
}

/// Open-loop h-step prediction-error report on a dataset.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub horizon: usize,
    pub per_trajectory_rmse: Vec<f64>,
    pub mean_rmse: f64,
    pub max_rmse: f64,
}

pub fn evaluate_model(
    model: &KoopmanModel,
    dataset: &SnapshotDataset,
    horizon: usize,
) -> Result<EvalReport> {
    if horizon == 0 {
        return Err(Error::config("evaluation horizon must be at least 1"));
    }
    let mut per_trajectory = Vec::with_capacity(dataset.trajectories.len());
    for t in &dataset.trajectories {
        let cols = t.x.ncols();
        let mut sq_sum = 0.0;
        let mut count = 0usize;
        let mut start = 0;
        while start < cols {
            let mut z = model.lift(&t.x.column(start).into_owned())?;
            let end = (start + horizon).min(cols);
            for j in start..end {
                let u = t.u.column(j).into_owned();
                z = model.predict(&z, &u, None)?;
                let err = model.project(&z) - t.y.column(j).into_owned();
                sq_sum += err.norm_squared() / err.len() as f64;
                count += 1;
            }
            start = end;
        }
        per_trajectory.push((sq_sum / count.max(1) as f64).sqrt());
    }
    let mean_rmse = per_trajectory.iter().sum::<f64>() / per_trajectory.len().max(1) as f64;
    let max_rmse = per_trajectory.iter().cloned().fold(0.0, f64::max);
    Ok(EvalReport {
        horizon,
        per_trajectory_rmse: per_trajectory,
        mean_rmse,
        max_rmse,
    })
}

#[cfg(test)]
mod tests;
