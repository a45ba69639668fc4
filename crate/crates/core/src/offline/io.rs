//! Dataset disk layout: one CSV per trajectory plus a JSON manifest per
//! split directory.
//!
//! Trajectory CSVs have the header `t, x_0..x_{n-1}, u_0..u_{m-1}`; row k
//! holds the state at t_k and the input applied over [t_k, t_k + dt). The
//! final row's input column is a zero placeholder (no input is applied
//! after the last snapshot) and is dropped on load.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{SnapshotDataset, SnapshotTriple, SplitTag, SystemId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub system: SystemId,
    pub split: SplitTag,
    pub trajectories: usize,
    /// Snapshots (states) per trajectory.
    pub snapshots: usize,
    pub state_dim: usize,
    pub input_dim: usize,
    pub dt: f64,
    pub seed: u64,
}

/// Write one split (`train/` or `validation/`) under `dir`.
pub fn save_dataset(dataset: &SnapshotDataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref().join(match dataset.split {
        SplitTag::Train => "train",
        SplitTag::Validation => "validation",
    });
    fs::create_dir_all(&dir)?;
    let first = dataset
        .trajectories
        .first()
        .ok_or_else(|| Error::config("refusing to save an empty dataset"))?;
    let (n, m) = (first.x.nrows(), first.u.nrows());

    for (idx, t) in dataset.trajectories.iter().enumerate() {
        let mut writer = csv::Writer::from_path(dir.join(format!("traj_{idx:04}.csv")))?;
        let mut header = vec!["t".to_string()];
        header.extend((0..n).map(|i| format!("x_{i}")));
        header.extend((0..m).map(|i| format!("u_{i}")));
        writer.write_record(&header)?;
        let cols = t.x.ncols();
        for k in 0..=cols {
            let mut row = Vec::with_capacity(1 + n + m);
            row.push(format!("{}", k as f64 * dataset.dt));
            // Row `cols` is the terminal state (last column of Y).
            for i in 0..n {
                let v = if k < cols { t.x[(i, k)] } else { t.y[(i, cols - 1)] };
                row.push(format!("{v:.17e}"));
            }
            for j in 0..m {
                let v = if k < cols { t.u[(j, k)] } else { 0.0 };
                row.push(format!("{v:.17e}"));
            }
            writer.write_record(&row)?;
        }
        writer.flush()?;
    }

    let manifest = DatasetManifest {
        system: dataset.system,
        split: dataset.split,
        trajectories: dataset.trajectories.len(),
        snapshots: first.x.ncols() + 1,
        state_dim: n,
        input_dim: m,
        dt: dataset.dt,
        seed: dataset.seed,
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

/// Load one split directory written by [`save_dataset`].
pub fn load_dataset(split_dir: impl AsRef<Path>) -> Result<SnapshotDataset> {
    let dir = split_dir.as_ref();
    let manifest: DatasetManifest =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    let (n, m) = (manifest.state_dim, manifest.input_dim);

    let mut trajectories = Vec::with_capacity(manifest.trajectories);
    for idx in 0..manifest.trajectories {
        let path = dir.join(format!("traj_{idx:04}.csv"));
        let mut reader = csv::Reader::from_path(&path)?;
        let mut states: Vec<Vec<f64>> = Vec::new();
        let mut inputs: Vec<Vec<f64>> = Vec::new();
        for record in reader.records() {
            let record = record?;
            if record.len() != 1 + n + m {
                return Err(Error::format(format!(
                    "{}: expected {} columns, found {}",
                    path.display(),
                    1 + n + m,
                    record.len()
                )));
            }
            let parse = |s: &str| -> Result<f64> {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::format(format!("{}: {e}", path.display())))
            };
            states.push(
                (1..=n)
                    .map(|i| parse(&record[i]))
                    .collect::<Result<Vec<_>>>()?,
            );
            inputs.push(
                (n + 1..=n + m)
                    .map(|i| parse(&record[i]))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        let rows = states.len();
        if rows != manifest.snapshots {
            return Err(Error::format(format!(
                "{}: expected {} snapshots, found {rows}",
                path.display(),
                manifest.snapshots
            )));
        }
        let cols = rows - 1;
        let mut x = DMatrix::zeros(n, cols);
        let mut y = DMatrix::zeros(n, cols);
        let mut u = DMatrix::zeros(m, cols);
        for k in 0..cols {
            for i in 0..n {
                x[(i, k)] = states[k][i];
                y[(i, k)] = states[k + 1][i];
            }
            for j in 0..m {
                u[(j, k)] = inputs[k][j];
            }
        }
        trajectories.push(SnapshotTriple { x, y, u });
    }

    Ok(SnapshotDataset {
        system: manifest.system,
        trajectories,
        dt: manifest.dt,
        seed: manifest.seed,
        split: manifest.split,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::offline::{generate_dataset, GenConfig};

    #[test]
    fn dataset_round_trips_through_disk() {
        let mut cfg = GenConfig::benchmark(SystemId::Quadrotor);
        cfg.trajectories = 3;
        cfg.snapshots = 25;
        let (train, val) = generate_dataset(&cfg).unwrap();

        let dir = std::env::temp_dir().join("adakoop-dataset-roundtrip");
        let _ = fs::remove_dir_all(&dir);
        save_dataset(&train, &dir).unwrap();
        save_dataset(&val, &dir).unwrap();

        let back = load_dataset(dir.join("train")).unwrap();
        assert_eq!(back.trajectories.len(), train.trajectories.len());
        assert_eq!(back.dt, train.dt);
        for (a, b) in back.trajectories.iter().zip(&train.trajectories) {
            assert!((&a.x - &b.x).amax() < 1e-12);
            assert!((&a.y - &b.y).amax() < 1e-12);
            assert!((&a.u - &b.u).amax() < 1e-12);
        }
        let back_val = load_dataset(dir.join("validation")).unwrap();
        assert_eq!(back_val.split, SplitTag::Validation);
    }
}
