//! Reference-trajectory generators for the tracking experiments.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::offline::SystemId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeId {
    Lemniscate,
    SShape,
    Hypotrochoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ReferenceSpec {
    /// Every pendulum tracks `θ_i(0) + rate·t` at constant angular rate.
    ConstantVelocity { rate: f64 },
    /// Per-joint sinusoids `A_i·sin(ω_i·t)`.
    SinusoidJoints {
        amplitudes: Vec<f64>,
        frequencies: Vec<f64>,
    },
    /// Planar path of the named shape, scaled to `scale` and traversed
    /// once per `period` seconds.
    PathShape {
        shape: ShapeId,
        scale: f64,
        period: f64,
    },
}

impl ReferenceSpec {
    pub fn validate(&self, system: SystemId) -> Result<()> {
        match self {
            ReferenceSpec::ConstantVelocity { .. } => Ok(()),
            ReferenceSpec::SinusoidJoints {
                amplitudes,
                frequencies,
            } => {
                let joints = system.state_dim() / 2;
                if amplitudes.len() != joints || frequencies.len() != joints {
                    return Err(Error::config(format!(
                        "sinusoid reference needs {joints} amplitudes and frequencies"
                    )));
                }
                Ok(())
            }
            ReferenceSpec::PathShape { scale, period, .. } => {
                if *scale <= 0.0 || *period <= 0.0 {
                    return Err(Error::config("path shape needs positive scale and period"));
                }
                Ok(())
            }
        }
    }

    /// Default per-joint sinusoid used by the manipulator experiments:
    /// 1 rad amplitude at 1 rad/s on every joint.
    pub fn manipulator_default() -> Self {
        ReferenceSpec::SinusoidJoints {
            amplitudes: vec![1.0; 3],
            frequencies: vec![1.0; 3],
        }
    }
}

/// A reference bound to a system and an episode start state.
#[derive(Debug, Clone)]
pub struct ReferenceTrajectory {
    spec: ReferenceSpec,
    system: SystemId,
    x0: DVector<f64>,
}

impl ReferenceTrajectory {
    pub fn new(spec: ReferenceSpec, system: SystemId, x0: DVector<f64>) -> Result<Self> {
        spec.validate(system)?;
        if x0.len() != system.state_dim() {
            return Err(Error::DimensionMismatch {
                context: "reference initial state",
                expected: system.state_dim(),
                actual: x0.len(),
            });
        }
        Ok(ReferenceTrajectory { spec, system, x0 })
    }

    pub fn spec(&self) -> &ReferenceSpec {
        &self.spec
    }

    /// Full-state reference at time `t`; untracked channels are zero.
    pub fn state_at(&self, t: f64) -> DVector<f64> {
        let n = self.system.state_dim();
        let mut out = DVector::zeros(n);
        match (&self.spec, self.system) {
            (ReferenceSpec::ConstantVelocity { rate }, SystemId::Pendulum) => {
                for i in 0..n / 2 {
                    out[2 * i] = self.x0[2 * i] + rate * t;
                    out[2 * i + 1] = *rate;
                }
            }
            (ReferenceSpec::ConstantVelocity { rate }, _) => {
                // Generic reading: every position channel ramps.
                let half = n / 2;
                for i in 0..half {
                    out[i] = self.x0[i] + rate * t;
                    out[half + i] = *rate;
                }
            }
            (
                ReferenceSpec::SinusoidJoints {
                    amplitudes,
                    frequencies,
                },
                system,
            ) => {
                let half = n / 2;
                for i in 0..half {
                    let (a, w) = (amplitudes[i], frequencies[i]);
                    let (pos, vel) = (a * (w * t).sin(), a * w * (w * t).cos());
                    match system {
                        SystemId::Pendulum => {
                            out[2 * i] = pos;
                            out[2 * i + 1] = vel;
                        }
                        _ => {
                            out[i] = pos;
                            out[half + i] = vel;
                        }
                    }
                }
            }
            (
                ReferenceSpec::PathShape {
                    shape,
                    scale,
                    period,
                },
                _,
            ) => {
                let (y, z) = shape_point(*shape, *scale, *period, t);
                // Velocity by central difference of the analytic curve.
                let h = 1e-6;
                let (y_p, z_p) = shape_point(*shape, *scale, *period, t + h);
                let (y_m, z_m) = shape_point(*shape, *scale, *period, (t - h).max(0.0));
                let denom = if t < h { h } else { 2.0 * h };
                out[0] = y;
                out[1] = z;
                out[3] = (y_p - y_m) / denom;
                out[4] = (z_p - z_m) / denom;
            }
        }
        out
    }

    /// Per-channel mean square of the reference over an episode — the
    /// signal-power calibration the SNR noise model uses. Channels whose
    /// reference is identically ~zero get zero power (and hence no noise).
    pub fn channel_power(&self, duration: f64, rate_hz: f64) -> DVector<f64> {
        let steps = (duration * rate_hz).round().max(1.0) as usize;
        let n = self.system.state_dim();
        let mut acc = DVector::zeros(n);
        for k in 0..steps {
            let r = self.state_at(k as f64 / rate_hz);
            for i in 0..n {
                acc[i] += r[i] * r[i];
            }
        }
        acc / steps as f64
    }
}

/// Point of the named planar shape at time `t`. All shapes start on the
/// curve at t = 0 (lemniscate and hypotrochoid at `(scale, 0)`, the S at
/// the origin) and close or reverse with period `period`.
fn shape_point(shape: ShapeId, scale: f64, period: f64, t: f64) -> (f64, f64) {
    match shape {
        ShapeId::Lemniscate => {
            // Lemniscate of Bernoulli, φ swept once per period.
            let phi = 2.0 * std::f64::consts::PI * t / period;
            let d = 1.0 + phi.sin().powi(2);
            (
                scale * phi.cos() / d,
                scale * phi.sin() * phi.cos() / d,
            )
        }
        ShapeId::SShape => {
            // Two stacked half-circles traversed forward then backward
            // (ping-pong), radius scale/4 so the figure spans `scale`.
            let a = scale / 4.0;
            let cycle = t / period;
            let frac = cycle - cycle.floor();
            let s = if (cycle.floor() as i64) % 2 == 0 {
                frac
            } else {
                1.0 - frac
            };
            if s < 0.5 {
                let psi = std::f64::consts::PI * (2.0 * s);
                (a * psi.sin(), a * (1.0 - psi.cos()))
            } else {
                let psi = std::f64::consts::PI * (2.0 * s - 1.0);
                (-a * psi.sin(), 2.0 * a + a * (1.0 - psi.cos()))
            }
        }
        ShapeId::Hypotrochoid => {
            // R = 5, r = 3, d = 5, closing after three turns, scaled so the
            // outermost radius equals `scale`.
            let (big_r, small_r, d) = (5.0, 3.0, 5.0);
            let k = scale / (big_r - small_r + d);
            let phi = 6.0 * std::f64::consts::PI * t / period;
            let ratio = (big_r - small_r) / small_r;
            (
                k * ((big_r - small_r) * phi.cos() + d * (ratio * phi).cos()),
                k * ((big_r - small_r) * phi.sin() - d * (ratio * phi).sin()),
            )
        }
    }
}
