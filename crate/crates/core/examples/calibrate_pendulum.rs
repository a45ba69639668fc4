//! Calibration probe for the pendulum synchronization benchmark.
//! Trains the nominal model, then sweeps controller/adaptation settings
//! on the paired δ=40 %, 30 dB scenario.

use adakoop_core::adapt::AdaptConfig;
use adakoop_core::harness::*;
use adakoop_core::koopman::KoopmanMode;
use adakoop_core::mpc::AdmmSettings;
use adakoop_core::offline::*;

fn main() {
    let t0 = std::time::Instant::now();
    let mut gen = GenConfig::benchmark(SystemId::Pendulum);
    let args: Vec<String> = std::env::args().collect();
    let quick = args.iter().any(|a| a == "--quick");
    if quick {
        gen.trajectories = 30;
        gen.snapshots = 300;
    }
    let (train, val) = generate_dataset(&gen).unwrap();
    println!(
        "dataset: {} train / {} val trajectories in {:.1}s",
        train.trajectories.len(),
        val.trajectories.len(),
        t0.elapsed().as_secs_f64()
    );

    let arch = ArchConfig::benchmark(SystemId::Pendulum, KoopmanMode::Linear);
    let mut tc = TrainConfig::benchmark(SystemId::Pendulum);
    tc.epochs = if quick { 30 } else { 80 };
    tc.patience = 40;
    let t1 = std::time::Instant::now();
    let (model, report) = train_nominal(&train, &val, &arch, &tc).unwrap();
    println!(
        "trained {} epochs in {:.1}s: val pred {:.3e} (init {:.3e})",
        report.epochs_run,
        t1.elapsed().as_secs_f64(),
        report.best_validation_prediction,
        report.initial_validation_prediction
    );
    let eval = evaluate_model(&model, &val, 10).unwrap();
    println!("10-step open-loop rmse mean {:.4} max {:.4}", eval.mean_rmse, eval.max_rmse);

    let base = ExperimentConfig {
        system: SystemId::Pendulum,
        mode: RunMode::Nominal,
        duration: 5.0,
        rate_hz: 100.0,
        substeps: 10,
        seed: 42,
        uncertainty: UncertaintySpec {
            delta_pct: Some(40.0),
            mass_scale: None,
            quadrotor: None,
        },
        disturbance: adakoop_core::dynamics::DisturbanceSpec::None,
        snr_db: Some(30.0),
        reference: ReferenceSpec::ConstantVelocity { rate: 40.0 },
        mpc: MpcFileConfig {
            horizon: 20,
            q_diag: [[1.0, 1.0]; 5].concat(),
            r_diag: vec![0.01],
            u_min: vec![-1.0],
            u_max: vec![1.0],
            x_min: None,
            x_max: None,
            solver: Some({
                let mut s = AdmmSettings::default();
                s.eps_abs = 1e-6;
                s.eps_rel = 1e-6;
                s
            }),
            sqp: None,
        },
        adapt: AdaptConfig::pendulum_defaults(),
        initial_state: None,
        state_guard: 1e6,
    };

    for snr in [None, Some(30.0)] {
        let mut nom_cfg = base.clone();
        nom_cfg.snr_db = snr;
        let t2 = std::time::Instant::now();
        let nominal = run_closed_loop(&nom_cfg, &model).unwrap();
        println!(
            "snr {snr:?} nominal: rms_th {:.3} rms_om {:.3} e_th {:.3} diverged {} ({:.1}s, mean step {:.1} ms)",
            nominal.metrics.rms_position,
            nominal.metrics.rms_velocity,
            nominal.metrics.rel_avg_position,
            nominal.metrics.diverged,
            t2.elapsed().as_secs_f64(),
            nominal.metrics.mean_step_seconds * 1e3,
        );

        for (lr, epochs, l1, l2) in [
            (1e-4, 2, 0.05, 0.05),
            (3e-4, 2, 0.05, 0.05),
            (1e-3, 2, 0.05, 0.05),
            (3e-4, 2, 0.2, 0.2),
            (1e-3, 2, 0.2, 0.2),
            (1e-3, 1, 0.05, 0.05),
        ] {
            let mut cfg = nom_cfg.with_mode(RunMode::Adaptive);
            cfg.adapt.learning_rate = lr;
            cfg.adapt.epochs = epochs;
            cfg.adapt.l1_a = l1;
            cfg.adapt.l1_b = l1;
            cfg.adapt.l2_a = l2;
            cfg.adapt.l2_b = l2;
            let out = run_closed_loop(&cfg, &model).unwrap();
            let last = out.trace.rows.last().unwrap();
            println!(
                "  adaptive lr={lr} ep={epochs}: rms_th {:.3} rms_om {:.3} impr_th {:.1}% impr_om {:.1}% dA {:.3} dB {:.3} div {}",
                out.metrics.rms_position,
                out.metrics.rms_velocity,
                improvement_pct(nominal.metrics.rms_position, out.metrics.rms_position),
                improvement_pct(nominal.metrics.rms_velocity, out.metrics.rms_velocity),
                last.d_a_norm,
                last.d_b_norm,
                out.metrics.diverged,
            );
        }
    }
    println!("total {:.1}s", t0.elapsed().as_secs_f64());
}
