//! CSV and JSON writers for run artifacts.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use mfrlqr::dual::{DualPoint, DualTrace};
use mfrlqr::sim::Trajectory;
use serde::Serialize;

use crate::commands::CliError;

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>, CliError> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

pub fn write_trace(path: &Path, trace: &DualTrace) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    w.write_record(["k", "lambda", "subgradient", "J", "J_c", "violation"])?;
    for r in &trace.records {
        w.write_record([
            r.k.to_string(),
            r.lambda.to_string(),
            r.subgradient.to_string(),
            r.j_primal.to_string(),
            r.j_c_total.to_string(),
            r.violation.to_string(),
        ])?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_dual(path: &Path, points: &[DualPoint]) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    w.write_record(["lambda", "D", "J", "J_c"])?;
    for p in points {
        w.write_record([
            p.lambda.to_string(),
            p.value.to_string(),
            p.j_primal.to_string(),
            p.j_c_total.to_string(),
        ])?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// One row per step and player. `cost` is the common per-step cost and
/// `risk` the player's squared one-step deviation.
pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["t".to_string(), "player".to_string()];
    header.extend((0..traj.dx).map(|j| format!("x{j}")));
    header.extend((0..traj.du).map(|j| format!("u{j}")));
    header.extend(["cost".to_string(), "risk".to_string()]);
    w.write_record(&header)?;
    let mut row = Vec::with_capacity(header.len());
    for t in 0..traj.horizon {
        for i in 0..traj.n_players {
            row.clear();
            row.push(t.to_string());
            row.push(i.to_string());
            row.extend(traj.state(t, i).iter().map(f64::to_string));
            row.extend(traj.control(t, i).iter().map(f64::to_string));
            row.push(traj.per_step_cost[t].to_string());
            row.push(traj.risk(t, i).to_string());
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Output(e.to_string()))?;
    writeln!(w).map_err(|e| CliError::io(path, e))?;
    w.flush().map_err(|e| CliError::io(path, e))
}
