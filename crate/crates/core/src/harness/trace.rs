//! Closed-loop episode traces and their CSV schema:
//! `step, t, x_*, x_obs_*, x_ref_*, u_*, solve_status, solve_ms, adapt_ms,
//! dA_fro, dB_fro`.

use std::path::Path;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::mpc::SolveStatus;
use crate::offline::SystemId;

#[derive(Debug, Clone)]
pub struct TraceRow {
    pub step: usize,
    pub t: f64,
    /// True plant state.
    pub x: DVector<f64>,
    /// Measured (noisy) state.
    pub x_obs: DVector<f64>,
    pub x_ref: DVector<f64>,
    /// Commanded input (before disturbance injection).
    pub u: DVector<f64>,
    pub solve_status: SolveStatus,
    pub solve_ms: f64,
    pub adapt_ms: f64,
    /// Frobenius norms of the adaptation deltas in use this step.
    pub d_a_norm: f64,
    pub d_b_norm: f64,
}

#[derive(Debug, Clone)]
pub struct Trace {
    pub system: SystemId,
    pub dt: f64,
    pub rows: Vec<TraceRow>,
    pub diverged: bool,
}

fn status_str(s: SolveStatus) -> &'static str {
    match s {
        SolveStatus::Solved => "solved",
        SolveStatus::MaxIterations => "max_iter",
        SolveStatus::PrimalInfeasibleSuspected => "primal_infeasible",
        SolveStatus::NumericalFault => "numerical_fault",
    }
}

fn status_parse(s: &str) -> Result<SolveStatus> {
    Ok(match s {
        "solved" => SolveStatus::Solved,
        "max_iter" => SolveStatus::MaxIterations,
        "primal_infeasible" => SolveStatus::PrimalInfeasibleSuspected,
        "numerical_fault" => SolveStatus::NumericalFault,
        other => return Err(Error::format(format!("unknown solve status '{other}'"))),
    })
}

pub fn write_trace(trace: &Trace, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    let n = trace.system.state_dim();
    let m = trace.system.input_dim();
    let mut header = vec!["step".to_string(), "t".to_string()];
    header.extend((0..n).map(|i| format!("x_{i}")));
    header.extend((0..n).map(|i| format!("x_obs_{i}")));
    header.extend((0..n).map(|i| format!("x_ref_{i}")));
    header.extend((0..m).map(|i| format!("u_{i}")));
    header.extend(
        ["solve_status", "solve_ms", "adapt_ms", "dA_fro", "dB_fro"]
            .iter()
            .map(|s| s.to_string()),
    );
    w.write_record(&header)?;
    for row in &trace.rows {
        let mut rec = vec![row.step.to_string(), format!("{:.6}", row.t)];
        let push_vec = |rec: &mut Vec<String>, v: &DVector<f64>| {
            for e in v.iter() {
                rec.push(format!("{e:.17e}"));
            }
        };
        push_vec(&mut rec, &row.x);
        push_vec(&mut rec, &row.x_obs);
        push_vec(&mut rec, &row.x_ref);
        push_vec(&mut rec, &row.u);
        rec.push(status_str(row.solve_status).to_string());
        rec.push(format!("{:.6}", row.solve_ms));
        rec.push(format!("{:.6}", row.adapt_ms));
        rec.push(format!("{:.12e}", row.d_a_norm));
        rec.push(format!("{:.12e}", row.d_b_norm));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace(path: impl AsRef<Path>, system: SystemId, dt: f64) -> Result<Trace> {
    let mut reader = csv::Reader::from_path(path.as_ref())?;
    let n = system.state_dim();
    let m = system.input_dim();
    let expected = 2 + 3 * n + m + 5;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        if record.len() != expected {
            return Err(Error::format(format!(
                "trace row has {} fields, expected {expected}",
                record.len()
            )));
        }
        let f = |i: usize| -> Result<f64> {
            record[i]
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::format(format!("trace parse: {e}")))
        };
        let vec_at = |base: usize, len: usize| -> Result<DVector<f64>> {
            Ok(DVector::from_iterator(
                len,
                (0..len)
                    .map(|i| f(base + i))
                    .collect::<Result<Vec<_>>>()?,
            ))
        };
        rows.push(TraceRow {
            step: record[0]
                .trim()
                .parse()
                .map_err(|e| Error::format(format!("trace parse: {e}")))?,
            t: f(1)?,
            x: vec_at(2, n)?,
            x_obs: vec_at(2 + n, n)?,
            x_ref: vec_at(2 + 2 * n, n)?,
            u: vec_at(2 + 3 * n, m)?,
            solve_status: status_parse(record[2 + 3 * n + m].trim())?,
            solve_ms: f(2 + 3 * n + m + 1)?,
            adapt_ms: f(2 + 3 * n + m + 2)?,
            d_a_norm: f(2 + 3 * n + m + 3)?,
            d_b_norm: f(2 + 3 * n + m + 4)?,
        });
    }
    Ok(Trace {
        system,
        dt,
        rows,
        diverged: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::metrics::compute_metrics;

    #[test]
    fn trace_round_trip_preserves_metrics() {
        let mut rows = Vec::new();
        for k in 0..20 {
            let t = k as f64 * 0.01;
            rows.push(TraceRow {
                step: k,
                t,
                x: DVector::from_fn(6, |i, _| (i as f64) * 0.1 + t),
                x_obs: DVector::from_fn(6, |i, _| (i as f64) * 0.1 + t + 0.01),
                x_ref: DVector::from_fn(6, |i, _| (i as f64) * 0.1 + 1.5 * t),
                u: DVector::from_fn(3, |i, _| (i as f64) - t),
                solve_status: SolveStatus::Solved,
                solve_ms: 1.25,
                adapt_ms: 0.5,
                d_a_norm: 0.125,
                d_b_norm: 0.25,
            });
        }
        let trace = Trace {
            system: SystemId::Manipulator,
            dt: 0.01,
            rows,
            diverged: false,
        };
        let dir = std::env::temp_dir().join("adakoop-trace");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("episode.csv");
        write_trace(&trace, &path).unwrap();
        let back = read_trace(&path, SystemId::Manipulator, 0.01).unwrap();

        let a = compute_metrics(&trace).unwrap();
        let b = compute_metrics(&back).unwrap();
        assert_eq!(a.steps, b.steps);
        assert_eq!(a.rms_position, b.rms_position);
        assert_eq!(a.rel_avg_position, b.rel_avg_position);
        assert_eq!(a.mean_step_seconds, b.mean_step_seconds);
    }
}
