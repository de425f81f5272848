//! Plot-ready text formats: line-oriented CSV for trajectories, arrow scans,
//! datasets and loss curves, plus the JSON sidecar tying outputs back to
//! their generating configuration. Floats use the shortest round-trip
//! representation, so identical runs produce byte-identical files.

use std::io::{self, Write};

use serde::Serialize;

use crate::learning::Dataset;
use crate::path_measure::ArrowScan;
use crate::trajectory::{Trajectory, TrajectoryConfig};

/// One channel of a trajectory: `step,t,r,dW,expectation`.
pub fn write_trajectory_channel_csv(
    w: &mut impl Write,
    traj: &Trajectory,
    channel: usize,
) -> io::Result<()> {
    writeln!(w, "step,t,r,dW,expectation")?;
    for k in 0..traj.n_steps() {
        writeln!(
            w,
            "{},{},{},{},{}",
            k,
            traj.times[k],
            traj.records[channel][k],
            traj.wiener[channel][k],
            traj.expectations[channel][k]
        )?;
    }
    Ok(())
}

/// JSON sidecar written next to trajectory CSVs.
#[derive(Debug, Serialize)]
pub struct TrajectorySidecar<'a> {
    pub config: &'a TrajectoryConfig,
    pub config_hash: u64,
}

pub fn trajectory_sidecar_json(cfg: &TrajectoryConfig) -> String {
    serde_json::to_string_pretty(&TrajectorySidecar {
        config: cfg,
        config_hash: cfg.config_hash(),
    })
    .expect("config serializes")
}

/// Arrow scan: `X,mean_lnR,stderr_lnR`.
pub fn write_arrow_scan_csv(w: &mut impl Write, scan: &ArrowScan) -> io::Result<()> {
    writeln!(w, "X,mean_lnR,stderr_lnR")?;
    for i in 0..scan.x_values.len() {
        writeln!(
            w,
            "{},{},{}",
            scan.x_values[i], scan.mean_lnr[i], scan.stderr_lnr[i]
        )?;
    }
    Ok(())
}

/// Dataset: `f0,...,f{W-1},target` with the target column empty for
/// targetless (SSM) samples.
pub fn write_dataset_csv(w: &mut impl Write, dataset: &Dataset) -> io::Result<()> {
    let width = dataset.samples.first().map_or(0, |(f, _)| f.width());
    let header: Vec<String> = (0..width)
        .map(|i| format!("f{i}"))
        .chain(std::iter::once("target".to_string()))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    for (features, target) in &dataset.samples {
        for v in &features.values {
            write!(w, "{v},")?;
        }
        match target {
            Some(t) => writeln!(w, "{t}")?,
            None => writeln!(w)?,
        }
    }
    Ok(())
}

/// Loss curve: `epoch,loss`.
pub fn write_loss_curve_csv(w: &mut impl Write, curve: &[f64]) -> io::Result<()> {
    writeln!(w, "epoch,loss")?;
    for (i, l) in curve.iter().enumerate() {
        writeln!(w, "{i},{l}")?;
    }
    Ok(())
}
