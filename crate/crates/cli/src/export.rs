//! Plot-ready CSV from a finished run directory.

use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::ValueEnum;

use hspde_core::io::{read_trajectories, write_trajectory_csv};

use crate::pipeline::{RunManifest, INCREMENTS_FILE, REGION_FILE, TRAJECTORY_FILE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExportKind {
    /// `beta,gamma_max,theorem,budget`
    Region,
    /// `direction,lag,median_max_increment`
    Increments,
    /// `replica,time_index,t,space_index,xi_1..xi_d,u` (needs persisted trajectories)
    Trajectory,
}

/// Writes the requested table for `run_dir` (a directory holding
/// `manifest.json`; for alpha sweeps, one of its `alpha-*` subdirectories).
pub fn export_plotdata(run_dir: &Path, kind: ExportKind, out: &mut impl Write) -> Result<()> {
    let manifest_dir = if run_dir.join(crate::pipeline::MANIFEST_FILE).exists() {
        run_dir
    } else {
        run_dir.parent().filter(|p| p.join(crate::pipeline::MANIFEST_FILE).exists()).unwrap_or(run_dir)
    };
    RunManifest::read(manifest_dir)?;
    let file = match kind {
        ExportKind::Region => REGION_FILE,
        ExportKind::Increments => INCREMENTS_FILE,
        ExportKind::Trajectory => TRAJECTORY_FILE,
    };
    let path = run_dir.join(file);
    if !path.exists() {
        let hint = match kind {
            ExportKind::Region => "the run had no query",
            ExportKind::Trajectory => "rerun with --persist-trajectories",
            ExportKind::Increments => "the estimate stage did not complete",
        };
        if run_dir.join(crate::pipeline::SWEEP_FILE).exists() {
            bail!("{} is an alpha sweep; export from one of its alpha-* subdirectories", run_dir.display());
        }
        bail!("{} has no {file} ({hint})", run_dir.display());
    }
    match kind {
        ExportKind::Trajectory => write_trajectory_csv(out, &read_trajectories(&path)?)?,
        _ => {
            let mut f = std::fs::File::open(&path).with_context(|| format!("opening {}", path.display()))?;
            std::io::copy(&mut f, out)?;
        }
    }
    Ok(())
}
