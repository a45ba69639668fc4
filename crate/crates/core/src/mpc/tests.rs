use super::*;
use crate::koopman::{KoopmanMode, KoopmanModel};
use approx::assert_relative_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Identity-lifted scalar model z⁺ = a·z + b·u.
fn scalar_model(a: f64, b: f64) -> KoopmanModel {
    KoopmanModel::new(
        KoopmanMode::Linear,
        1,
        1,
        1,
        None,
        false,
        DMatrix::from_element(1, 1, a),
        DMatrix::from_element(1, 1, b),
    )
    .unwrap()
}

/// Identity-lifted double integrator at step dt.
fn double_integrator(dt: f64) -> KoopmanModel {
    KoopmanModel::new(
        KoopmanMode::Linear,
        2,
        1,
        2,
        None,
        false,
        DMatrix::from_row_slice(2, 2, &[1.0, dt, 0.0, 1.0]),
        DMatrix::from_row_slice(2, 1, &[dt * dt / 2.0, dt]),
    )
    .unwrap()
}

fn refs(values: &[&[f64]]) -> Vec<DVector<f64>> {
    values.iter().map(|v| DVector::from_row_slice(v)).collect()
}

#[test]
fn one_step_scalar_qp_matches_hand_kkt_solution() {
    let model = scalar_model(0.9, 0.5);
    let (q_w, r_w) = (2.0, 0.3);
    let mut cfg = MpcConfig::new(1, 1, 1);
    cfg.q = DMatrix::from_element(1, 1, q_w);
    cfg.r = DMatrix::from_element(1, 1, r_w);
    let z0 = DVector::from_vec(vec![1.2]);
    let reference = 2.0;
    let (qp, layout) = build_linear_mpc_qp(&model, None, &z0, &refs(&[&[reference]]), &cfg).unwrap();
    let solution = admm_qp_solve(&qp, &cfg.solver, None).unwrap();
    let u0 = layout.stage_input(&solution.x, 0);

    // min q(a·z0 + b·u − ref)² + r·u² in closed form.
    let (a, b) = (0.9, 0.5);
    let expected = q_w * b * (reference - a * z0[0]) / (q_w * b * b + r_w);
    assert_relative_eq!(u0[0], expected, epsilon = 1e-7);
}

#[test]
fn invariant_reference_with_zero_input_feasible_yields_zero_input() {
    // A = I keeps the state; the reference equals the current output, so
    // u = 0 attains zero cost and must be optimal.
    let model = KoopmanModel::new(
        KoopmanMode::Linear,
        2,
        1,
        2,
        None,
        false,
        DMatrix::identity(2, 2),
        DMatrix::from_row_slice(2, 1, &[0.3, 0.8]),
    )
    .unwrap();
    let cfg = MpcConfig::new(4, 2, 1);
    let x0 = DVector::from_vec(vec![0.7, -0.4]);
    let reference = vec![x0.clone(); 4];
    let mut mpc = LinearMpc::new(cfg);
    let result = mpc.solve(&model, None, &x0, &reference).unwrap();
    assert!(result.u0.amax() < 1e-7, "u0 = {}", result.u0[0]);
}

#[test]
fn decision_vector_has_horizon_times_p_plus_m_entries() {
    let model = double_integrator(0.1);
    let cfg = MpcConfig::new(7, 2, 1);
    let z0 = DVector::zeros(2);
    let reference = vec![DVector::zeros(2); 7];
    let (qp, layout) = build_linear_mpc_qp(&model, None, &z0, &reference, &cfg).unwrap();
    assert_eq!(layout.num_vars(), 7 * (2 + 1));
    assert_eq!(qp.num_vars(), 7 * 3);
}

#[test]
fn infeasible_bounds_are_rejected_at_build_time() {
    let model = double_integrator(0.1);
    let mut cfg = MpcConfig::new(3, 2, 1);
    cfg.u_min = DVector::from_vec(vec![1.0]);
    cfg.u_max = DVector::from_vec(vec![-1.0]);
    let z0 = DVector::zeros(2);
    let reference = vec![DVector::zeros(2); 3];
    assert!(build_linear_mpc_qp(&model, None, &z0, &reference, &cfg).is_err());
}

#[test]
fn builder_cost_realizes_block_diagonal_penalty() {
    // Objective differences of the stacked QP match the summed stage cost.
    let model = double_integrator(0.05);
    let mut cfg = MpcConfig::new(3, 2, 1);
    cfg.q = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
    cfg.r = DMatrix::from_element(1, 1, 0.7);
    let z0 = DVector::from_vec(vec![0.4, -0.1]);
    let reference = refs(&[&[0.5, 0.0], &[0.6, 0.1], &[0.7, 0.2]]);
    let (qp, layout) = build_linear_mpc_qp(&model, None, &z0, &reference, &cfg).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let stage_cost = |decision: &DVector<f64>| -> f64 {
        let mut total = 0.0;
        for k in 0..3 {
            let u = layout.stage_input(decision, k);
            let z = layout.stage_state(decision, k + 1);
            let e = z.rows(0, 2) - &reference[k];
            total += (e.transpose() * &cfg.q * &e)[(0, 0)];
            total += (u.transpose() * &cfg.r * &u)[(0, 0)];
        }
        total
    };
    for _ in 0..5 {
        let d1 = DVector::from_fn(layout.num_vars(), |_, _| rng.random_range(-1.0..1.0));
        let d2 = DVector::from_fn(layout.num_vars(), |_, _| rng.random_range(-1.0..1.0));
        let qp_diff = qp.objective(&d1) - qp.objective(&d2);
        let stage_diff = stage_cost(&d1) - stage_cost(&d2);
        assert_relative_eq!(qp_diff, stage_diff, epsilon = 1e-9);
    }
}

#[test]
fn free_evolution_reference_needs_no_input() {
    let model = double_integrator(0.1);
    let mut mpc = LinearMpc::new(MpcConfig::new(5, 2, 1));
    let x0 = DVector::from_vec(vec![0.3, -0.2]);
    // Reference = free evolution of the model itself.
    let mut z = model.lift(&x0).unwrap();
    let mut reference = Vec::new();
    for _ in 0..5 {
        z = &model.a * &z;
        reference.push(model.project(&z));
    }
    let result = mpc.solve(&model, None, &x0, &reference).unwrap();
    assert!(result.u0.amax() < 1e-6, "u0 = {}", result.u0[0]);
    assert!(!result.degraded);
}

#[test]
fn two_step_double_integrator_matches_dense_reference() {
    let model = double_integrator(0.1);
    let mut cfg = MpcConfig::new(2, 2, 1);
    cfg.u_min = DVector::from_vec(vec![-10.0]);
    cfg.u_max = DVector::from_vec(vec![10.0]);
    let z0 = DVector::from_vec(vec![1.0, 0.0]);
    let reference = refs(&[&[0.8, -0.5], &[0.6, -0.5]]);
    let (qp, layout) = build_linear_mpc_qp(&model, None, &z0, &reference, &cfg).unwrap();

    let admm = admm_qp_solve(&qp, &cfg.solver, None).unwrap();
    let (x_ref_sol, _) = solve_qp_reference(&qp).unwrap();
    assert!(
        (&admm.x - &x_ref_sol).amax() < 1e-6,
        "gap {}",
        (&admm.x - &x_ref_sol).amax()
    );
    assert!(layout.stage_input(&admm.x, 0).len() == 1);
}

#[test]
fn active_input_bound_clamps_first_input() {
    let model = scalar_model(1.0, 1.0);
    let mut cfg = MpcConfig::new(1, 1, 1);
    cfg.q = DMatrix::from_element(1, 1, 1.0);
    cfg.r = DMatrix::from_element(1, 1, 1e-6);
    let x0 = DVector::from_vec(vec![0.0]);
    let reference = refs(&[&[5.0]]);

    // Unconstrained optimum ≈ 5 (r tiny); bound at 0.7 must clamp it.
    let mut unbounded = LinearMpc::new(cfg.clone());
    let free = unbounded.solve(&model, None, &x0, &reference).unwrap();
    assert!(free.u0[0] > 4.0);

    cfg.u_min = DVector::from_vec(vec![-0.7]);
    cfg.u_max = DVector::from_vec(vec![0.7]);
    let mut bounded = LinearMpc::new(cfg);
    let clamped = bounded.solve(&model, None, &x0, &reference).unwrap();
    assert_relative_eq!(clamped.u0[0], 0.7, epsilon = 1e-7);
}

#[test]
fn state_bounds_are_honored() {
    let model = double_integrator(0.1);
    let mut cfg = MpcConfig::new(8, 2, 1);
    cfg.x_min = Some(DVector::from_vec(vec![f64::NEG_INFINITY, -0.25]));
    cfg.x_max = Some(DVector::from_vec(vec![f64::INFINITY, 0.25]));
    let z0 = DVector::from_vec(vec![0.0, 0.0]);
    // Aggressive position reference that would demand velocity above the box.
    let reference = vec![DVector::from_vec(vec![5.0, 0.0]); 8];
    let (qp, layout) = build_linear_mpc_qp(&model, None, &z0, &reference, &cfg).unwrap();
    let solution = admm_qp_solve(&qp, &cfg.solver, None).unwrap();
    assert_eq!(solution.status, SolveStatus::Solved);
    for k in 1..=8 {
        let z = layout.stage_state(&solution.x, k);
        assert!(z[1] <= 0.25 + 1e-6, "velocity bound violated: {}", z[1]);
    }
}

fn random_bilinear_model(seed: u64, p: usize, m: usize) -> KoopmanModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = DMatrix::from_fn(p, p, |i, j| {
        if i == j {
            0.9
        } else {
            rng.random_range(-0.05..0.05)
        }
    });
    let b = DMatrix::from_fn(p, p * m, |_, _| rng.random_range(-0.1..0.1));
    KoopmanModel::new(KoopmanMode::Bilinear, p, m, p, None, false, a, b).unwrap()
}

#[test]
fn bilinear_mpc_with_zero_b_reduces_to_linear_solution() {
    let p = 3;
    let a = DMatrix::from_row_slice(
        3,
        3,
        &[0.95, 0.1, 0.0, 0.0, 0.9, 0.05, 0.0, 0.0, 0.85],
    );
    let bil = KoopmanModel::new(
        KoopmanMode::Bilinear,
        p,
        1,
        p,
        None,
        false,
        a.clone(),
        DMatrix::zeros(p, p),
    )
    .unwrap();
    let lin = KoopmanModel::new(
        KoopmanMode::Linear,
        p,
        1,
        p,
        None,
        false,
        a,
        DMatrix::zeros(p, 1),
    )
    .unwrap();
    let cfg = MpcConfig::new(4, p, 1);
    let x0 = DVector::from_vec(vec![0.5, -0.3, 0.2]);
    let reference = vec![DVector::zeros(p); 4];

    let mut bil_mpc = BilinearMpc::new(cfg.clone());
    let mut lin_mpc = LinearMpc::new(cfg);
    let rb = bil_mpc.solve(&bil, None, &x0, &reference).unwrap();
    let rl = lin_mpc.solve(&lin, None, &x0, &reference).unwrap();
    // With B = 0 the input has no effect in either mode; both settle at the
    // same (zero-input) optimum.
    assert!((rb.u0[0] - rl.u0[0]).abs() < 1e-6);
}

#[test]
fn pinned_input_reproduces_true_bilinear_rollout() {
    let model = random_bilinear_model(3, 4, 1);
    let mut cfg = MpcConfig::new(5, 4, 1);
    let pinned = 0.37;
    cfg.u_min = DVector::from_vec(vec![pinned]);
    cfg.u_max = DVector::from_vec(vec![pinned]);
    cfg.sqp.max_iterations = 12;
    let x0 = DVector::from_vec(vec![0.4, -0.2, 0.1, 0.3]);
    let reference = vec![DVector::zeros(4); 5];

    let mut mpc = BilinearMpc::new(cfg);
    let result = mpc.solve(&model, None, &x0, &reference).unwrap();
    assert_relative_eq!(result.u0[0], pinned, epsilon = 1e-8);

    // Forward-simulation oracle: final SQP violation must be tiny.
    let final_violation = *result.sqp_residuals.last().unwrap();
    assert!(
        final_violation < 1e-6,
        "dynamics violation {final_violation}"
    );
}

#[test]
fn sqp_violation_shrinks_across_outer_iterations() {
    let model = random_bilinear_model(11, 4, 1);
    let mut cfg = MpcConfig::new(6, 4, 1);
    cfg.sqp.max_iterations = 6;
    cfg.sqp.step_tolerance = 0.0; // run all outer iterations
    let x0 = DVector::from_vec(vec![0.8, -0.5, 0.6, -0.4]);
    let reference = vec![DVector::from_vec(vec![0.2, 0.0, -0.1, 0.1]); 6];

    let mut mpc = BilinearMpc::new(cfg);
    let result = mpc.solve(&model, None, &x0, &reference).unwrap();
    assert!(result.sqp_residuals.len() >= 3);
    let first = result.sqp_residuals[0];
    let last = *result.sqp_residuals.last().unwrap();
    assert!(
        last < first * 0.1 || last < 1e-9,
        "violations did not shrink: {:?}",
        result.sqp_residuals
    );
}

#[test]
fn shifted_decision_moves_stage_blocks_forward() {
    let layout = MpcLayout {
        horizon: 3,
        lifted_dim: 2,
        input_dim: 1,
        state_dim: 2,
        state_rows: false,
    };
    let decision = DVector::from_fn(layout.num_vars(), |i, _| i as f64);
    let shifted = layout.shift_decision(&decision);
    // Stage 0 now holds stage 1's block.
    assert_eq!(shifted[0], 3.0);
    assert_eq!(shifted[1], 4.0);
    // Terminal block duplicated.
    assert_eq!(shifted[6], 6.0);
}

#[test]
fn degraded_solve_returns_previous_input() {
    let model = scalar_model(1.0, 1.0);
    let mut cfg = MpcConfig::new(2, 1, 1);
    cfg.solver.max_iterations = 1; // force MaxIterations (still usable)
    cfg.solver.polish = false;
    let mut mpc = LinearMpc::new(cfg);
    let x0 = DVector::from_vec(vec![1.0]);
    let reference = vec![DVector::from_vec(vec![0.0]); 2];
    let r = mpc.solve(&model, None, &x0, &reference).unwrap();
    assert_eq!(r.status, SolveStatus::MaxIterations);
    assert!(!r.degraded);
}
