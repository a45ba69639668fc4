//! Tracking metrics and per-step timing statistics.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::trace::Trace;
use crate::error::Result;
use crate::offline::SystemId;

/// Channels grouped into "position-like" and "velocity-like" per system.
pub fn channel_groups(system: SystemId) -> (Vec<usize>, Vec<usize>) {
    match system {
        SystemId::Pendulum => ((0..5).map(|i| 2 * i).collect(), (0..5).map(|i| 2 * i + 1).collect()),
        SystemId::Manipulator => ((0..3).collect(), (3..6).collect()),
        // Quadrotor: (y, z) positions and their velocities; attitude is
        // untracked.
        SystemId::Quadrotor => (vec![0, 1], vec![3, 4]),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub steps: usize,
    pub diverged: bool,
    /// RMS tracking error per state channel.
    pub rms_per_channel: Vec<f64>,
    /// RMS error pooled over the position-like channels.
    pub rms_position: f64,
    /// RMS error pooled over the velocity-like channels.
    pub rms_velocity: f64,
    /// Mean Euclidean position-error distance per step.
    pub mean_position_error: f64,
    /// Relative average tracking error of the position channels
    /// (mean over channels and time of |ref − actual|/|ref|).
    pub rel_avg_position: f64,
    /// Same for the velocity channels.
    pub rel_avg_velocity: f64,
    pub mean_step_seconds: f64,
    pub max_step_seconds: f64,
    /// Mean per-step compute time below the loop period.
    pub realtime_ok: bool,
}

impl MetricsReport {
    pub fn empty() -> Self {
        MetricsReport {
            steps: 0,
            diverged: false,
            rms_per_channel: Vec::new(),
            rms_position: 0.0,
            rms_velocity: 0.0,
            mean_position_error: 0.0,
            rel_avg_position: 0.0,
            rel_avg_velocity: 0.0,
            mean_step_seconds: 0.0,
            max_step_seconds: 0.0,
            realtime_ok: true,
        }
    }
}

/// `100·(e_base − e_test)/e_base`.
pub fn improvement_pct(e_base: f64, e_test: f64) -> f64 {
    100.0 * (e_base - e_test) / e_base
}

/// Instantaneous relative average error over a channel group, skipping
/// channels whose reference is within the ε-guard of zero.
fn relative_instant(
    x: &DVector<f64>,
    x_ref: &DVector<f64>,
    channels: &[usize],
    guard: f64,
) -> Option<f64> {
    let mut sum = 0.0;
    let mut used = 0usize;
    for &c in channels {
        if x_ref[c].abs() >= guard {
            sum += (x_ref[c] - x[c]).abs() / x_ref[c].abs();
            used += 1;
        }
    }
    (used > 0).then(|| sum / used as f64)
}

const REL_GUARD: f64 = 1e-3;

pub fn compute_metrics(trace: &Trace) -> Result<MetricsReport> {
    if trace.rows.is_empty() {
        return Ok(MetricsReport {
            diverged: trace.diverged,
            ..MetricsReport::empty()
        });
    }
    let n = trace.rows[0].x.len();
    let steps = trace.rows.len();
    let (pos_channels, vel_channels) = channel_groups(trace.system);

    let mut sq = vec![0.0; n];
    let mut pos_dist = 0.0;
    let mut rel_pos_sum = 0.0;
    let mut rel_pos_count = 0usize;
    let mut rel_vel_sum = 0.0;
    let mut rel_vel_count = 0usize;
    let mut time_sum = 0.0;
    let mut time_max = 0.0_f64;

    for row in &trace.rows {
        for i in 0..n {
            let e = row.x[i] - row.x_ref[i];
            sq[i] += e * e;
        }
        let mut d = 0.0;
        for &c in &pos_channels {
            let e = row.x[c] - row.x_ref[c];
            d += e * e;
        }
        pos_dist += d.sqrt();
        if let Some(v) = relative_instant(&row.x, &row.x_ref, &pos_channels, REL_GUARD) {
            rel_pos_sum += v;
            rel_pos_count += 1;
        }
        if let Some(v) = relative_instant(&row.x, &row.x_ref, &vel_channels, REL_GUARD) {
            rel_vel_sum += v;
            rel_vel_count += 1;
        }
        let step_time = (row.solve_ms + row.adapt_ms) / 1e3;
        time_sum += step_time;
        time_max = time_max.max(step_time);
    }

    let rms_per_channel: Vec<f64> = sq.iter().map(|s| (s / steps as f64).sqrt()).collect();
    let pooled = |channels: &[usize]| -> f64 {
        let total: f64 = channels.iter().map(|&c| sq[c]).sum();
        (total / (steps * channels.len()) as f64).sqrt()
    };
    let mean_step_seconds = time_sum / steps as f64;
    Ok(MetricsReport {
        steps,
        diverged: trace.diverged,
        rms_position: pooled(&pos_channels),
        rms_velocity: pooled(&vel_channels),
        mean_position_error: pos_dist / steps as f64,
        rel_avg_position: rel_pos_sum / rel_pos_count.max(1) as f64,
        rel_avg_velocity: rel_vel_sum / rel_vel_count.max(1) as f64,
        rms_per_channel,
        mean_step_seconds,
        max_step_seconds: time_max,
        realtime_ok: mean_step_seconds < trace.dt,
    })
}

/// Box-plot quantiles of the per-step compute time of one episode.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TimingStats {
    pub samples: usize,
    pub mean_seconds: f64,
    pub p25_seconds: f64,
    pub p50_seconds: f64,
    pub p75_seconds: f64,
    pub max_seconds: f64,
}

pub fn timing_stats(trace: &Trace) -> TimingStats {
    let mut times: Vec<f64> = trace
        .rows
        .iter()
        .map(|r| (r.solve_ms + r.adapt_ms) / 1e3)
        .collect();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let quantile = |q: f64| -> f64 {
        if times.is_empty() {
            return 0.0;
        }
        let idx = ((times.len() - 1) as f64 * q).round() as usize;
        times[idx]
    };
    TimingStats {
        samples: times.len(),
        mean_seconds: times.iter().sum::<f64>() / times.len().max(1) as f64,
        p25_seconds: quantile(0.25),
        p50_seconds: quantile(0.5),
        p75_seconds: quantile(0.75),
        max_seconds: times.last().copied().unwrap_or(0.0),
    }
}
