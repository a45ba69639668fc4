use adakoop_core::mpc::*;
use adakoop_core::koopman::{KoopmanMode, KoopmanModel};
use nalgebra::{DMatrix, DVector};

fn main() {
    // Standalone timing of one MPC-sized QP solve, cold vs warm.
    let p = 7; let m = 2; let s = 25;
    let a = DMatrix::<f64>::identity(p, p) * 0.99;
    let b = DMatrix::<f64>::from_fn(p, m, |i, j| 0.01 * ((i + j) as f64 % 3.0));
    let model = KoopmanModel::new(KoopmanMode::Linear, p, m, p, None, false, a, b).unwrap();
    let mut cfg = MpcConfig::new(s, p, m);
    cfg.u_min = DVector::from_element(m, 0.0);
    cfg.u_max = DVector::from_element(m, 25.0);
    let z0 = DVector::from_fn(p, |i, _| 0.1 * i as f64);
    let refs = vec![DVector::from_fn(p, |i, _| 0.05 * i as f64); s];
    let (qp, _layout) = build_linear_mpc_qp(&model, None, &z0, &refs, &cfg).unwrap();
    println!("vars {} cons {}", qp.num_vars(), qp.num_constraints());

    let t0 = std::time::Instant::now();
    let sol = admm_qp_solve(&qp, &cfg.solver, None).unwrap();
    println!("cold: {:?} iters {} in {:.2} ms", sol.status, sol.iterations, t0.elapsed().as_secs_f64()*1e3);
    let warm = AdmmWarmStart { x: sol.x.clone(), y: sol.y.clone() };
    let t1 = std::time::Instant::now();
    let sol2 = admm_qp_solve(&qp, &cfg.solver, Some(&warm)).unwrap();
    println!("warm: {:?} iters {} in {:.2} ms", sol2.status, sol2.iterations, t1.elapsed().as_secs_f64()*1e3);

    // raw cholesky timing at this size
    let n = qp.num_vars();
    let mm = DMatrix::<f64>::identity(n, n) * 3.0;
    let t2 = std::time::Instant::now();
    for _ in 0..10 { let _ = mm.clone().cholesky().unwrap(); }
    println!("chol {}x{}: {:.2} ms each", n, n, t2.elapsed().as_secs_f64()*1e2);
}
