use super::*;
use nalgebra::{DMatrix, DVector};
use approx::assert_relative_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Matrix exponential by plain Taylor series; fine for the small, well
/// scaled test systems here.
fn expm_taylor(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut term = DMatrix::identity(n, n);
    let mut sum = DMatrix::identity(n, n);
    for k in 1..60 {
        term = (&term * a) / k as f64;
        sum += &term;
        if term.amax() < 1e-18 {
            break;
        }
    }
    sum
}

/// Exact zero-order-hold discretization of ẋ = A₀x + B₀u via the augmented
/// exponential.
fn discretize_exact(a0: &DMatrix<f64>, b0: &DMatrix<f64>, dt: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a0.nrows();
    let m = b0.ncols();
    let mut aug = DMatrix::zeros(n + m, n + m);
    aug.view_range_mut(0..n, 0..n).copy_from(&(a0 * dt));
    aug.view_range_mut(0..n, n..n + m).copy_from(&(b0 * dt));
    let e = expm_taylor(&aug);
    (
        e.view_range(0..n, 0..n).into_owned(),
        e.view_range(0..n, n..n + m).into_owned(),
    )
}

/// Dataset rolled exactly with a known discrete (A_d, B_d).
fn linear_system_dataset(
    a_d: &DMatrix<f64>,
    b_d: &DMatrix<f64>,
    trajectories: usize,
    steps: usize,
    seed: u64,
) -> SnapshotDataset {
    let n = a_d.nrows();
    let m = b_d.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(trajectories);
    for _ in 0..trajectories {
        let mut x = DMatrix::zeros(n, steps);
        let mut y = DMatrix::zeros(n, steps);
        let mut u = DMatrix::zeros(m, steps);
        let mut cur = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        for k in 0..steps {
            let uk = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
            let next = a_d * &cur + b_d * &uk;
            x.set_column(k, &cur);
            y.set_column(k, &next);
            u.set_column(k, &uk);
            cur = next;
        }
        out.push(SnapshotTriple { x, y, u });
    }
    SnapshotDataset {
        system: SystemId::Quadrotor, // tag unused by training
        trajectories: out,
        dt: 0.05,
        seed,
        split: SplitTag::Train,
    }
}

fn identity_arch(n: usize) -> ArchConfig {
    ArchConfig {
        mode: KoopmanMode::Linear,
        hidden: vec![],
        lifted_dim: n,
        constant_channel: false,
    }
}

fn exact_scalarish_model(a_d: &DMatrix<f64>, b_d: &DMatrix<f64>) -> KoopmanModel {
    KoopmanModel::new(
        KoopmanMode::Linear,
        a_d.nrows(),
        b_d.ncols(),
        a_d.nrows(),
        None,
        false,
        a_d.clone(),
        b_d.clone(),
    )
    .unwrap()
}

#[test]
fn reconstruction_loss_is_structurally_zero() {
    let model = crate::koopman::tests::random_model(KoopmanMode::Linear, 3, 1, 7, true, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = DMatrix::from_fn(3, 40, |_, _| rng.random_range(-2.0..2.0));
    let y = DMatrix::from_fn(3, 40, |_, _| rng.random_range(-2.0..2.0));
    let u = DMatrix::from_fn(1, 40, |_, _| rng.random_range(-1.0..1.0));
    let losses = nominal_losses(&model, &x, &y, &u).unwrap();
    assert_eq!(losses.reconstruction, 0.0);
    assert!(losses.prediction > 0.0);
}

#[test]
fn exact_linear_model_has_zero_prediction_and_lifting_loss() {
    let a0 = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -0.5]);
    let b0 = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
    let (a_d, b_d) = discretize_exact(&a0, &b0, 0.05);
    let data = linear_system_dataset(&a_d, &b_d, 3, 50, 2);
    let model = exact_scalarish_model(&a_d, &b_d);
    let (x, y, u) = data.stacked().unwrap();
    let losses = nominal_losses(&model, &x, &y, &u).unwrap();
    assert!(losses.prediction < 1e-25);
    assert!(losses.lifting < 1e-25);
}

#[test]
fn lifting_loss_responds_linearly_to_transition_perturbations() {
    let a0 = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -0.5]);
    let b0 = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
    let (a_d, b_d) = discretize_exact(&a0, &b0, 0.05);
    let data = linear_system_dataset(&a_d, &b_d, 2, 60, 3);
    let (x, y, u) = data.stacked().unwrap();

    let direction = DMatrix::from_row_slice(2, 2, &[0.4, -0.2, 0.7, 0.1]);
    let loss_at = |eps: f64| {
        let model = exact_scalarish_model(&(&a_d + &direction * eps), &b_d);
        nominal_losses(&model, &x, &y, &u).unwrap().lifting
    };
    // At the exact model the loss is a quadratic minimum, so finite
    // perturbations scale as ε².
    let l1 = loss_at(1e-3);
    let l2 = loss_at(2e-3);
    assert_relative_eq!(l2 / l1, 4.0, max_relative = 1e-3);
    // Away from the minimum the first-order term dominates: O(ε) change.
    let base = loss_at(0.1);
    let d1 = (loss_at(0.1 + 1e-4) - base).abs();
    let d2 = (loss_at(0.1 + 2e-4) - base).abs();
    assert_relative_eq!(d2 / d1, 2.0, max_relative = 1e-2);
}

#[test]
fn training_recovers_exact_discretization_of_a_linear_system() {
    let a0 = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -0.5]);
    let b0 = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
    let (a_d, b_d) = discretize_exact(&a0, &b0, 0.05);
    let train = linear_system_dataset(&a_d, &b_d, 20, 100, 4);
    let val = linear_system_dataset(&a_d, &b_d, 4, 100, 5);

    let mut cfg = TrainConfig::benchmark(SystemId::Quadrotor);
    cfg.gamma = [0.0, 0.0];
    cfg.epochs = 400;
    cfg.learning_rate = 2e-2;
    cfg.lr_decay = 0.99;
    cfg.patience = 400;
    let (model, report) = train_nominal(&train, &val, &identity_arch(2), &cfg).unwrap();

    assert!(
        (&model.a - &a_d).amax() < 1e-3,
        "A gap {}",
        (&model.a - &a_d).amax()
    );
    assert!(
        (&model.b - &b_d).amax() < 1e-3,
        "B gap {}",
        (&model.b - &b_d).amax()
    );
    assert!(report.best_validation_prediction < report.initial_validation_prediction);
}

#[test]
fn zero_epochs_returns_the_initialization() {
    let a_d = DMatrix::identity(2, 2);
    let b_d = DMatrix::zeros(2, 1);
    let data = linear_system_dataset(&a_d, &b_d, 2, 20, 8);
    let mut cfg = TrainConfig::benchmark(SystemId::Pendulum);
    cfg.epochs = 0;
    let (model, report) = train_nominal(&data, &data, &identity_arch(2), &cfg).unwrap();
    assert_eq!(model.a, DMatrix::identity(2, 2));
    assert_eq!(model.b, DMatrix::zeros(2, 1));
    assert_eq!(report.epochs_run, 0);
}

#[test]
fn training_is_bitwise_reproducible_for_a_fixed_seed() {
    let mut gen = GenConfig::benchmark(SystemId::Quadrotor);
    gen.trajectories = 4;
    gen.snapshots = 30;
    let (train, val) = generate_dataset(&gen).unwrap();
    let arch = ArchConfig::benchmark(SystemId::Quadrotor, KoopmanMode::Linear);
    let mut cfg = TrainConfig::benchmark(SystemId::Quadrotor);
    cfg.epochs = 5;
    let (m1, _) = train_nominal(&train, &val, &arch, &cfg).unwrap();
    let (m2, _) = train_nominal(&train, &val, &arch, &cfg).unwrap();
    assert_eq!(m1.a, m2.a);
    assert_eq!(m1.b, m2.b);
    assert_eq!(
        m1.lifting_net.as_ref().unwrap().flat_params(),
        m2.lifting_net.as_ref().unwrap().flat_params()
    );
}

#[test]
fn published_training_configs_are_exposed() {
    let pend = TrainConfig::benchmark(SystemId::Pendulum);
    assert_eq!(pend.alpha, [1.0, 0.4, 1.0]);
    assert_eq!(pend.gamma, [1e-5, 1e-5]);
    assert_eq!(pend.batch_size, 256);
    let arm = TrainConfig::benchmark(SystemId::Manipulator);
    assert_eq!(arm.alpha, [1.0, 0.3, 1.0]);
    assert_eq!(arm.gamma, [0.0, 0.0]);
    let arch = ArchConfig::benchmark(SystemId::Pendulum, KoopmanMode::Linear);
    assert_eq!(arch.hidden, vec![40, 40]);
    assert_eq!(arch.lifted_dim, 17);
    assert_eq!(
        ArchConfig::benchmark(SystemId::Quadrotor, KoopmanMode::Linear).lifted_dim,
        15
    );
}

#[test]
fn evaluation_is_zero_for_the_exact_model_and_grows_with_horizon() {
    let a0 = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -0.5]);
    let b0 = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
    let (a_d, b_d) = discretize_exact(&a0, &b0, 0.05);
    let data = linear_system_dataset(&a_d, &b_d, 3, 60, 12);

    let exact = exact_scalarish_model(&a_d, &b_d);
    let report = evaluate_model(&exact, &data, 10).unwrap();
    assert!(report.mean_rmse < 1e-12);

    // A slightly wrong model accumulates error with the horizon.
    let wrong = exact_scalarish_model(&(&a_d * 1.02), &b_d);
    let short = evaluate_model(&wrong, &data, 1).unwrap();
    let long = evaluate_model(&wrong, &data, 10).unwrap();
    assert!(long.mean_rmse > short.mean_rmse);
}

#[test]
fn horizon_one_evaluation_equals_one_step_residuals() {
    let a0 = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -0.3]);
    let b0 = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
    let (a_d, b_d) = discretize_exact(&a0, &b0, 0.05);
    let data = linear_system_dataset(&a_d, &b_d, 1, 40, 13);
    let wrong = exact_scalarish_model(&(&a_d * 1.05), &b_d);

    let report = evaluate_model(&wrong, &data, 1).unwrap();
    // Hand-computed mean one-step residual.
    let t = &data.trajectories[0];
    let mut sq = 0.0;
    for k in 0..t.x.ncols() {
        let z = wrong.lift(&t.x.column(k).into_owned()).unwrap();
        let pred = wrong
            .predict(&z, &t.u.column(k).into_owned(), None)
            .unwrap();
        sq += (wrong.project(&pred) - t.y.column(k).into_owned()).norm_squared() / 2.0;
    }
    let expected = (sq / t.x.ncols() as f64).sqrt();
    assert_relative_eq!(report.per_trajectory_rmse[0], expected, epsilon = 1e-12);
}

#[test]
fn training_beats_the_initialization_floor_on_a_small_real_dataset() {
    let mut gen = GenConfig::benchmark(SystemId::Quadrotor);
    gen.trajectories = 10;
    gen.snapshots = 80;
    let (train, val) = generate_dataset(&gen).unwrap();
    let arch = ArchConfig::benchmark(SystemId::Quadrotor, KoopmanMode::Linear);
    let mut cfg = TrainConfig::benchmark(SystemId::Quadrotor);
    cfg.epochs = 120;
    cfg.patience = 120;
    let (_, report) = train_nominal(&train, &val, &arch, &cfg).unwrap();
    assert!(
        report.best_validation_prediction <= 0.1 * report.initial_validation_prediction,
        "validation {} vs initial {}",
        report.best_validation_prediction,
        report.initial_validation_prediction
    );
}
