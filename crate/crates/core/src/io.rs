//! The "hspde-traj-1" trajectory container and CSV export.
//!
//! `<stem>.traj` holds little-endian f64 values ordered replica, then time,
//! then space. `<stem>.traj.json` is the sidecar with shape, grids and the
//! plan echo. Replicas can be appended in batches; the sidecar is written on
//! `finish`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::convolve::{PlanEcho, TrajectoryEnsemble};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: &str = "hspde-traj-1";
const LAYOUT: &str = "replica,time,space";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajSidecar {
    pub format: String,
    pub dtype: String,
    pub byte_order: String,
    pub layout: String,
    /// `[replicas, times, space points]`.
    pub shape: [usize; 3],
    pub times: Vec<f64>,
    pub space: Vec<Vec<f64>>,
    pub space_weight: f64,
    pub seed: u64,
    pub scheme: String,
    pub plan: PlanEcho,
}

pub fn sidecar_path(data: &Path) -> PathBuf {
    let mut s = data.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub struct TrajWriter {
    path: PathBuf,
    out: BufWriter<File>,
    meta: TrajSidecar,
}

impl TrajWriter {
    /// Starts a container; `shell` supplies grids and provenance, its
    /// `values` are ignored.
    pub fn create(path: impl AsRef<Path>, shell: &TrajectoryEnsemble) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let out = BufWriter::new(File::create(&path)?);
        Ok(Self {
            path,
            out,
            meta: TrajSidecar {
                format: FORMAT_VERSION.into(),
                dtype: "f64".into(),
                byte_order: "little-endian".into(),
                layout: LAYOUT.into(),
                shape: [0, shell.n_times(), shell.n_space()],
                times: shell.times.clone(),
                space: shell.space.clone(),
                space_weight: shell.space_weight,
                seed: shell.provenance.seed,
                scheme: shell.provenance.scheme.name().into(),
                plan: shell.provenance.clone(),
            },
        })
    }

    pub fn append(&mut self, replicas: &[DMatrix<f64>]) -> Result<()> {
        let [_, nt, ns] = self.meta.shape;
        for v in replicas {
            if v.shape() != (nt, ns) {
                return Err(Error::Format(format!("replica has shape {:?}, expected ({nt}, {ns})", v.shape())));
            }
            for i in 0..nt {
                for j in 0..ns {
                    self.out.write_all(&v[(i, j)].to_le_bytes())?;
                }
            }
            self.meta.shape[0] += 1;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<TrajSidecar> {
        self.out.flush()?;
        let side = File::create(sidecar_path(&self.path))?;
        serde_json::to_writer_pretty(BufWriter::new(side), &self.meta)?;
        Ok(self.meta)
    }
}

pub fn write_trajectories(path: impl AsRef<Path>, ens: &TrajectoryEnsemble) -> Result<TrajSidecar> {
    let mut w = TrajWriter::create(path, ens)?;
    w.append(&ens.values)?;
    w.finish()
}

pub fn read_sidecar(path: impl AsRef<Path>) -> Result<TrajSidecar> {
    let meta: TrajSidecar = serde_json::from_reader(BufReader::new(File::open(sidecar_path(path.as_ref()))?))?;
    if meta.format != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported container format {:?}", meta.format)));
    }
    if meta.dtype != "f64" || meta.byte_order != "little-endian" || meta.layout != LAYOUT {
        return Err(Error::Format("unsupported dtype, byte order or layout".into()));
    }
    Ok(meta)
}

pub fn read_trajectories(path: impl AsRef<Path>) -> Result<TrajectoryEnsemble> {
    let path = path.as_ref();
    let meta = read_sidecar(path)?;
    let [nr, nt, ns] = meta.shape;
    if meta.times.len() != nt || meta.space.len() != ns {
        return Err(Error::Format("sidecar grids disagree with the shape".into()));
    }
    let expected = (nr * nt * ns * 8) as u64;
    let actual = std::fs::metadata(path)?.len();
    if actual != expected {
        return Err(Error::Format(format!("data file has {actual} bytes, sidecar implies {expected}")));
    }
    let mut input = BufReader::new(File::open(path)?);
    let mut buf = [0u8; 8];
    let mut values = Vec::with_capacity(nr);
    for _ in 0..nr {
        let mut v = DMatrix::zeros(nt, ns);
        for i in 0..nt {
            for j in 0..ns {
                input.read_exact(&mut buf)?;
                v[(i, j)] = f64::from_le_bytes(buf);
            }
        }
        values.push(v);
    }
    Ok(TrajectoryEnsemble {
        values,
        times: meta.times,
        space: meta.space,
        space_weight: meta.space_weight,
        provenance: meta.plan,
    })
}

/// Long-format CSV: `replica,time_index,t,space_index,xi_1..xi_d,u`.
pub fn write_trajectory_csv(out: &mut impl Write, ens: &TrajectoryEnsemble) -> Result<()> {
    let d = ens.space.first().map_or(1, |p| p.len());
    let xi: Vec<String> = (1..=d).map(|i| format!("xi_{i}")).collect();
    writeln!(out, "replica,time_index,t,space_index,{},u", xi.join(","))?;
    for (r, v) in ens.values.iter().enumerate() {
        for (i, t) in ens.times.iter().enumerate() {
            for (j, p) in ens.space.iter().enumerate() {
                let coords: Vec<String> = p.iter().map(|x| x.to_string()).collect();
                writeln!(out, "{r},{i},{t},{j},{},{}", coords.join(","), v[(i, j)])?;
            }
        }
    }
    Ok(())
}
