//! Nominal-dataset generation.
//!
//! Pendulum trajectories start from random states and are excited with
//! band-limited random torque signals; manipulator and quadrotor
//! trajectories follow smooth random waypoint paths under a simple nominal
//! controller (computed torque / small-angle LQR), recording states and
//! inputs at the loop period.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{SnapshotDataset, SnapshotTriple, SplitTag};
use crate::dynamics::{
    integrate, Manipulator, ManipulatorParams, PendulumChain, PendulumChainParams, Plant,
    PlanarQuadrotor, QuadrotorParams,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemId {
    Pendulum,
    Manipulator,
    Quadrotor,
}

impl SystemId {
    pub fn state_dim(self) -> usize {
        match self {
            SystemId::Pendulum => 10,
            SystemId::Manipulator | SystemId::Quadrotor => 6,
        }
    }

    pub fn input_dim(self) -> usize {
        match self {
            SystemId::Pendulum => 1,
            SystemId::Manipulator => 3,
            SystemId::Quadrotor => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SystemId::Pendulum => "pendulum",
            SystemId::Manipulator => "manipulator",
            SystemId::Quadrotor => "quadrotor",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "pendulum" => Ok(SystemId::Pendulum),
            "manipulator" => Ok(SystemId::Manipulator),
            "quadrotor" => Ok(SystemId::Quadrotor),
            other => Err(Error::config(format!("unknown system id '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct GenConfig {
    pub system: SystemId,
    pub trajectories: usize,
    /// Snapshots per trajectory (states; inputs are one fewer).
    pub snapshots: usize,
    pub dt: f64,
    pub substeps: usize,
    pub seed: u64,
    pub train_fraction: f64,
    /// Excitation torque scale for the pendulum input signal.
    pub input_amplitude: f64,
    /// Trajectories whose state norm exceeds this are resampled.
    pub state_guard: f64,
}

impl GenConfig {
    pub fn benchmark(system: SystemId) -> Self {
        let snapshots = match system {
            SystemId::Pendulum => 800,
            SystemId::Manipulator => 100,
            SystemId::Quadrotor => 600,
        };
        GenConfig {
            system,
            trajectories: 100,
            snapshots,
            dt: 0.01,
            substeps: 10,
            seed: 7,
            train_fraction: 0.75,
            input_amplitude: 0.6,
            state_guard: 1e4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trajectories == 0 || self.snapshots < 2 {
            return Err(Error::config(
                "dataset generation needs at least 1 trajectory of 2 snapshots",
            ));
        }
        if self.dt <= 0.0 || self.substeps == 0 {
            return Err(Error::config("dt must be positive and substeps nonzero"));
        }
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return Err(Error::config("train_fraction must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Sum of five sinusoids with log-uniform frequencies in [0.1, 5] Hz and
/// uniform phases, clipped to ±amplitude.
struct RandomSignal {
    components: Vec<(f64, f64, f64)>, // (amplitude, angular frequency, phase)
    clip: f64,
}

impl RandomSignal {
    fn sample<R: Rng + ?Sized>(amplitude: f64, rng: &mut R) -> Self {
        let components = (0..5)
            .map(|_| {
                let a = rng.random_range(0.0..amplitude / 2.0);
                let log_f = rng.random_range((0.1_f64).ln()..(5.0_f64).ln());
                let w = 2.0 * std::f64::consts::PI * log_f.exp();
                let phase = rng.random_range(0.0..2.0 * std::f64::consts::PI);
                (a, w, phase)
            })
            .collect();
        RandomSignal {
            components,
            clip: amplitude,
        }
    }

    fn at(&self, t: f64) -> f64 {
        let raw: f64 = self
            .components
            .iter()
            .map(|(a, w, phi)| a * (w * t + phi).sin())
            .sum();
        raw.clamp(-self.clip, self.clip)
    }
}

/// Cubic segment q(s) with endpoint positions and zero endpoint velocity.
fn cubic(p0: f64, p1: f64, s: f64) -> (f64, f64) {
    let h = s.clamp(0.0, 1.0);
    let blend = 3.0 * h * h - 2.0 * h * h * h;
    let dblend = 6.0 * h - 6.0 * h * h;
    (p0 + (p1 - p0) * blend, (p1 - p0) * dblend)
}

/// Piecewise-cubic waypoint path in d dimensions.
struct WaypointPath {
    points: Vec<DVector<f64>>,
    segment_time: f64,
}

impl WaypointPath {
    fn sample<R: Rng + ?Sized>(
        dims: usize,
        count: usize,
        range: f64,
        segment_time: f64,
        start: DVector<f64>,
        rng: &mut R,
    ) -> Self {
        let mut points = vec![start];
        for _ in 0..count {
            points.push(DVector::from_fn(dims, |_, _| {
                rng.random_range(-range..range)
            }));
        }
        WaypointPath {
            points,
            segment_time,
        }
    }

    /// Position, velocity, and acceleration (by finite difference of the
    /// analytic velocity) at time t.
    fn at(&self, t: f64) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let nseg = self.points.len() - 1;
        let total = self.segment_time * nseg as f64;
        let tc = t.clamp(0.0, total - 1e-9);
        let seg = (tc / self.segment_time) as usize;
        let s = (tc - seg as f64 * self.segment_time) / self.segment_time;
        let dims = self.points[0].len();
        let mut pos = DVector::zeros(dims);
        let mut vel = DVector::zeros(dims);
        for i in 0..dims {
            let (p, v) = cubic(self.points[seg][i], self.points[seg + 1][i], s);
            pos[i] = p;
            vel[i] = v / self.segment_time;
        }
        let eps = 1e-6;
        let mut vel2 = DVector::zeros(dims);
        let t2 = (tc + eps).min(total - 1e-9);
        let seg2 = (t2 / self.segment_time) as usize;
        let s2 = (t2 - seg2 as f64 * self.segment_time) / self.segment_time;
        for i in 0..dims {
            let (_, v) = cubic(self.points[seg2][i], self.points[seg2 + 1][i], s2);
            vel2[i] = v / self.segment_time;
        }
        let acc = (&vel2 - &vel) / eps;
        (pos, vel, acc)
    }
}

/// Generate the nominal dataset, split into train/validation trajectory
/// sets. Trajectories that leave the state guard are dropped and resampled
/// (each rejection is logged).
pub fn generate_dataset(cfg: &GenConfig) -> Result<(SnapshotDataset, SnapshotDataset)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trajectories = Vec::with_capacity(cfg.trajectories);
    let mut rejected = 0usize;
    while trajectories.len() < cfg.trajectories {
        let attempt = match cfg.system {
            SystemId::Pendulum => pendulum_trajectory(cfg, &mut rng),
            SystemId::Manipulator => manipulator_trajectory(cfg, &mut rng),
            SystemId::Quadrotor => quadrotor_trajectory(cfg, &mut rng),
        };
        match attempt {
            Ok(t) => trajectories.push(t),
            Err(e) => {
                rejected += 1;
                log::warn!("trajectory rejected and resampled: {e}");
                if rejected > 20 * cfg.trajectories {
                    return Err(Error::numerical(
                        "dataset generation rejected too many trajectories",
                    ));
                }
            }
        }
    }

    let n_train = ((cfg.trajectories as f64) * cfg.train_fraction).round() as usize;
    let validation = trajectories.split_off(n_train.min(trajectories.len()));
    Ok((
        SnapshotDataset {
            system: cfg.system,
            trajectories,
            dt: cfg.dt,
            seed: cfg.seed,
            split: SplitTag::Train,
        },
        SnapshotDataset {
            system: cfg.system,
            trajectories: validation,
            dt: cfg.dt,
            seed: cfg.seed,
            split: SplitTag::Validation,
        },
    ))
}

/// Roll one trajectory under a state-feedback input law, recording the
/// (X, Y, U) snapshot triple.
fn rollout(
    plant: &dyn Plant,
    x0: DVector<f64>,
    mut input_at: impl FnMut(f64, &DVector<f64>) -> DVector<f64>,
    cfg: &GenConfig,
) -> Result<SnapshotTriple> {
    let n = plant.state_dim();
    let m = plant.input_dim();
    let cols = cfg.snapshots - 1;
    let mut x_mat = DMatrix::zeros(n, cols);
    let mut y_mat = DMatrix::zeros(n, cols);
    let mut u_mat = DMatrix::zeros(m, cols);

    let mut x = x0;
    for k in 0..cols {
        let u = input_at(k as f64 * cfg.dt, &x);
        let next = integrate(plant, &x, &u, cfg.dt, cfg.substeps)?;
        if next.amax() > cfg.state_guard {
            return Err(Error::numerical(format!(
                "{} state exceeded guard {:.1e} at snapshot {k}",
                plant.name(),
                cfg.state_guard
            )));
        }
        x_mat.set_column(k, &x);
        y_mat.set_column(k, &next);
        u_mat.set_column(k, &u);
        x = next;
    }
    Ok(SnapshotTriple {
        x: x_mat,
        y: y_mat,
        u: u_mat,
    })
}

fn pendulum_trajectory(cfg: &GenConfig, rng: &mut ChaCha8Rng) -> Result<SnapshotTriple> {
    let plant = PendulumChain::new(PendulumChainParams::synchronization_benchmark())?;
    let n = plant.params.count;
    let mut x0 = DVector::zeros(2 * n);
    for i in 0..n {
        x0[2 * i] = rng.random_range(-20.0..20.0);
        x0[2 * i + 1] = rng.random_range(-1.0..1.0);
    }
    let signal = RandomSignal::sample(cfg.input_amplitude, rng);
    rollout(
        &plant,
        x0,
        |t, _| DVector::from_vec(vec![signal.at(t)]),
        cfg,
    )
}

fn manipulator_trajectory(cfg: &GenConfig, rng: &mut ChaCha8Rng) -> Result<SnapshotTriple> {
    let arm = Manipulator::new(ManipulatorParams::standard())?;
    let q0 = DVector::from_fn(3, |_, _| rng.random_range(-1.2..1.2));
    let mut x0 = DVector::zeros(6);
    x0.rows_mut(0, 3).copy_from(&q0);

    let duration = (cfg.snapshots - 1) as f64 * cfg.dt;
    let segments = (duration / 0.5).ceil().max(1.0) as usize;
    let path = WaypointPath::sample(3, segments, 1.2, duration / segments as f64, q0, rng);

    // Computed-torque tracking of the waypoint path.
    let (kp, kd) = (100.0, 20.0);
    let arm_ref = &arm;
    rollout(
        &arm,
        x0,
        move |t, x| {
            let (q_d, qd_d, qdd_d) = path.at(t);
            let q: [f64; 3] = std::array::from_fn(|i| x[i]);
            let qd: [f64; 3] = std::array::from_fn(|i| x[3 + i]);
            let e = &q_d - DVector::from_row_slice(&q);
            let ed = &qd_d - DVector::from_row_slice(&qd);
            let v = qdd_d + ed * kd + e * kp;
            let m = arm_ref.mass_matrix(&q);
            &m * v + arm_ref.coriolis_vector(&q, &qd) + arm_ref.gravity_vector(&q)
        },
        cfg,
    )
}

fn quadrotor_trajectory(cfg: &GenConfig, rng: &mut ChaCha8Rng) -> Result<SnapshotTriple> {
    let params = QuadrotorParams::standard();
    let plant = PlanarQuadrotor::new(params)?;
    let start = DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0));
    let mut x0 = DVector::zeros(6);
    x0.rows_mut(0, 2).copy_from(&start);

    let duration = (cfg.snapshots - 1) as f64 * cfg.dt;
    let segments = (duration / 2.0).ceil().max(1.0) as usize;
    let path = WaypointPath::sample(2, segments, 2.0, duration / segments as f64, start, rng);
    let gain = lqr_gain(&params, cfg.dt);
    let hover = params.hover_thrust();

    rollout(
        &plant,
        x0,
        move |t, x| {
            let (pos, vel, _) = path.at(t);
            let mut x_ref = DVector::zeros(6);
            x_ref[0] = pos[0];
            x_ref[1] = pos[1];
            x_ref[3] = vel[0];
            x_ref[4] = vel[1];
            let du = &gain * (x_ref - x);
            DVector::from_vec(vec![hover + du[0], hover + du[1]])
        },
        cfg,
    )
}

/// Discrete LQR gain for the hover-linearized quadrotor.
pub fn lqr_gain(p: &QuadrotorParams, dt: f64) -> DMatrix<f64> {
    // Small-angle model: ẏ=v_y, ż=v_z, θ̇=ω, v̇_y=−g·θ, v̇_z=ΣδT/m,
    // ω̇ = l(δT₂−δT₁)/I.
    let mut a = DMatrix::zeros(6, 6);
    a[(0, 3)] = 1.0;
    a[(1, 4)] = 1.0;
    a[(2, 5)] = 1.0;
    a[(3, 2)] = -p.gravity;
    let mut b = DMatrix::zeros(6, 2);
    b[(4, 0)] = 1.0 / p.mass;
    b[(4, 1)] = 1.0 / p.mass;
    b[(5, 0)] = -p.arm_length / p.inertia;
    b[(5, 1)] = p.arm_length / p.inertia;

    // Second-order hold discretization is plenty at 100 Hz.
    let a_d = DMatrix::identity(6, 6) + &a * dt + (&a * &a) * (dt * dt / 2.0);
    let b_d = (&a * (dt * dt / 2.0) + DMatrix::identity(6, 6) * dt) * &b;

    let q = DMatrix::from_diagonal(&DVector::from_vec(vec![
        10.0, 10.0, 5.0, 1.0, 1.0, 0.5,
    ]));
    let r = DMatrix::identity(2, 2) * 0.1;
    // Fixed-point Riccati iteration.
    let mut s = q.clone();
    for _ in 0..2000 {
        let btsb = &b_d.transpose() * &s * &b_d + &r;
        let gain_part = btsb
            .try_inverse()
            .expect("R > 0 keeps the Riccati inverse well-defined");
        let k = &gain_part * b_d.transpose() * &s * &a_d;
        let s_next =
            &q + a_d.transpose() * &s * (&a_d - &b_d * &k);
        let delta = (&s_next - &s).amax();
        s = s_next;
        if delta < 1e-10 {
            break;
        }
    }
    let btsb = &b_d.transpose() * &s * &b_d + &r;
    btsb.try_inverse().unwrap() * b_d.transpose() * &s * &a_d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn benchmark_dimensions_match_published_protocol() {
        let cfg = GenConfig::benchmark(SystemId::Pendulum);
        assert_eq!(cfg.trajectories, 100);
        assert_eq!(cfg.snapshots, 800);
        assert_eq!(cfg.dt, 0.01);
        assert_eq!(GenConfig::benchmark(SystemId::Manipulator).snapshots, 100);
        assert_eq!(GenConfig::benchmark(SystemId::Quadrotor).snapshots, 600);
    }

    #[test]
    fn pendulum_dataset_has_requested_shape_and_split() {
        let mut cfg = GenConfig::benchmark(SystemId::Pendulum);
        cfg.trajectories = 8;
        cfg.snapshots = 50;
        let (train, val) = generate_dataset(&cfg).unwrap();
        assert_eq!(train.trajectories.len(), 6);
        assert_eq!(val.trajectories.len(), 2);
        let t = &train.trajectories[0];
        assert_eq!(t.x.shape(), (10, 49));
        assert_eq!(t.y.shape(), (10, 49));
        assert_eq!(t.u.shape(), (1, 49));
        assert_eq!(train.split, SplitTag::Train);
        assert_eq!(val.split, SplitTag::Validation);
    }

    #[test]
    fn zero_length_request_is_rejected() {
        let mut cfg = GenConfig::benchmark(SystemId::Pendulum);
        cfg.trajectories = 0;
        assert!(generate_dataset(&cfg).is_err());
        cfg.trajectories = 1;
        cfg.snapshots = 1;
        assert!(generate_dataset(&cfg).is_err());
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        let mut cfg = GenConfig::benchmark(SystemId::Quadrotor);
        cfg.trajectories = 3;
        cfg.snapshots = 40;
        let (a, _) = generate_dataset(&cfg).unwrap();
        let (b, _) = generate_dataset(&cfg).unwrap();
        for (ta, tb) in a.trajectories.iter().zip(&b.trajectories) {
            assert_eq!(ta.x, tb.x);
            assert_eq!(ta.u, tb.u);
        }
    }

    #[test]
    fn shift_property_y_is_one_step_image_of_x() {
        let mut cfg = GenConfig::benchmark(SystemId::Manipulator);
        cfg.trajectories = 2;
        cfg.snapshots = 30;
        let (train, _) = generate_dataset(&cfg).unwrap();
        for t in &train.trajectories {
            // Columns j ≥ 1 of X are columns j−1 of Y (same rollout).
            for j in 1..t.x.ncols() {
                assert_eq!(t.x.column(j), t.y.column(j - 1));
            }
        }
    }

    #[test]
    fn waypoint_path_is_continuous_with_zero_endpoint_velocity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let path = WaypointPath::sample(2, 3, 1.0, 0.7, DVector::zeros(2), &mut rng);
        let (p0, v0, _) = path.at(0.0);
        assert_eq!(p0, DVector::zeros(2));
        assert!(v0.amax() < 1e-9);
        // continuity across a segment boundary
        let (pa, _, _) = path.at(0.7 - 1e-9);
        let (pb, _, _) = path.at(0.7 + 1e-9);
        assert!((pa - pb).amax() < 1e-6);
    }

    #[test]
    fn quadrotor_lqr_tracks_a_gentle_setpoint() {
        let params = QuadrotorParams::standard();
        let plant = PlanarQuadrotor::new(params).unwrap();
        let gain = lqr_gain(&params, 0.01);
        let hover = params.hover_thrust();
        let mut x = DVector::zeros(6);
        let mut x_ref = DVector::zeros(6);
        x_ref[0] = 1.0;
        x_ref[1] = 0.5;
        for _ in 0..600 {
            let du = &gain * (&x_ref - &x);
            let u = DVector::from_vec(vec![hover + du[0], hover + du[1]]);
            x = integrate(&plant, &x, &u, 0.01, 4).unwrap();
        }
        assert!((x[0] - 1.0).abs() < 0.02, "y = {}", x[0]);
        assert!((x[1] - 0.5).abs() < 0.02, "z = {}", x[1]);
    }
}
