use adakoop_core::harness::*;
use adakoop_core::koopman::{KoopmanModel, KoopmanMode};
use adakoop_core::dynamics::{QuadrotorParams, DisturbanceSpec};
use adakoop_core::adapt::AdaptConfig;
use adakoop_core::offline::SystemId;
use adakoop_core::mpc::AdmmSettings;
use nalgebra::{DMatrix, DVector};

fn hover_model() -> KoopmanModel {
    let p = QuadrotorParams::standard();
    let dt = 0.01;
    let mut a = DMatrix::zeros(6, 6);
    a[(0, 3)] = 1.0; a[(1, 4)] = 1.0; a[(2, 5)] = 1.0; a[(3, 2)] = -p.gravity;
    let mut b = DMatrix::zeros(6, 2);
    b[(4, 0)] = 1.0 / p.mass; b[(4, 1)] = 1.0 / p.mass;
    b[(5, 0)] = -p.arm_length / p.inertia; b[(5, 1)] = p.arm_length / p.inertia;
    let a_d = DMatrix::identity(6, 6) + &a * dt + (&a * &a) * (dt * dt / 2.0) + (&a * &a * &a) * (dt*dt*dt/6.0);
    let b_d = (DMatrix::identity(6, 6) * dt + &a * (dt * dt / 2.0) + (&a*&a)*(dt*dt*dt/6.0)) * &b;
    let hover = p.hover_thrust();
    let offset = -(&b_d * DVector::from_vec(vec![hover, hover]));
    let mut a_lift = DMatrix::zeros(7, 7);
    a_lift.view_range_mut(0..6, 0..6).copy_from(&a_d);
    a_lift.view_range_mut(0..6, 6..7).copy_from(&offset);
    a_lift[(6, 6)] = 1.0;
    let mut b_lift = DMatrix::zeros(7, 2);
    b_lift.view_range_mut(0..6, 0..2).copy_from(&b_d);
    KoopmanModel::new(KoopmanMode::Linear, 6, 2, 7, None, true, a_lift, b_lift).unwrap()
}

fn main() {
    let model = hover_model();
    let base = ExperimentConfig {
        system: SystemId::Quadrotor,
        mode: RunMode::Nominal,
        duration: 4.0, rate_hz: 100.0, substeps: 5, seed: 7,
        uncertainty: UncertaintySpec {
            delta_pct: None, mass_scale: None,
            quadrotor: Some(QuadrotorOverride { mass: Some(2.4), inertia: Some(1.2), wind_speed: None, wind_direction: None }),
        },
        disturbance: DisturbanceSpec::None,
        snr_db: None,
        reference: ReferenceSpec::PathShape { shape: ShapeId::Lemniscate, scale: 1.0, period: 8.0 },
        mpc: MpcFileConfig {
            horizon: 25,
            q_diag: vec![20.0, 20.0, 8.0, 4.0, 4.0, 0.5],
            r_diag: vec![1e-4, 1e-4],
            u_min: vec![0.0, 0.0], u_max: vec![25.0, 25.0],
            x_min: None, x_max: None,
            solver: Some({ let mut s = AdmmSettings::default(); s.eps_abs = 1e-6; s.eps_rel = 1e-6; s }),
            sqp: None,
        },
        adapt: AdaptConfig::quadrotor_defaults(),
        initial_state: None,
        state_guard: 1e6,
    };
    let nom = run_closed_loop(&base, &model).unwrap();
    println!("nominal: mean_pos_err {:.4}", nom.metrics.mean_position_error);
    for (lr, l1, l2) in [(0.002, 0.0, 0.0), (0.002, 1e-4, 1e-3), (0.005, 1e-4, 1e-3), (0.001, 0.0, 1e-3), (0.005, 0.0, 0.01), (0.01, 0.0, 0.01)] {
        let mut cfg = base.with_mode(RunMode::Adaptive);
        cfg.adapt.learning_rate = lr;
        cfg.adapt.l1_a = l1; cfg.adapt.l1_b = l1;
        cfg.adapt.l2_a = l2; cfg.adapt.l2_b = l2;
        let out = run_closed_loop(&cfg, &model).unwrap();
        println!("adaptive lr={lr} l1={l1} l2={l2}: mean_pos_err {:.4} diverged {}", out.metrics.mean_position_error, out.metrics.diverged);
    }
}
