//! CSV tables written by the pipeline and read back by `export`.
//!
//! Numbers use Rust's shortest round-trip formatting, so equal values give
//! equal bytes.

use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Deserialize;

use hspde_core::noise::GProcess;
use hspde_core::regularity::{ExponentEstimate, RegionBoundary};

pub const ESTIMATES_HEADER: [&str; 8] = [
    "quantity", "mode", "estimate", "fit_r2", "lag_min", "lag_max", "samples", "degenerate",
];

pub struct EstimateRow<'a> {
    pub quantity: &'a str,
    pub mode: &'a str,
    pub estimate: &'a ExponentEstimate,
}

pub fn write_estimates(out: impl Write, rows: &[EstimateRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ESTIMATES_HEADER)?;
    for r in rows {
        let e = r.estimate;
        w.write_record([
            r.quantity.to_string(),
            r.mode.to_string(),
            e.exponent.to_string(),
            e.fit_r2.to_string(),
            e.lag_range.0.to_string(),
            e.lag_range.1.to_string(),
            e.per_sample.len().to_string(),
            e.degenerate.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `beta,gamma_max` along the upper boundary, with the theorem and budget.
pub fn write_region(out: impl Write, boundary: &RegionBoundary<f64>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["beta", "gamma_max", "theorem", "budget"])?;
    for (b, g) in &boundary.points {
        w.write_record([b.to_string(), g.to_string(), boundary.theorem.name().into(), boundary.budget.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `direction,lag,median_max_increment`: the points behind each log-log fit.
pub fn write_increments(out: impl Write, temporal: &[(usize, f64)], spatial: &[(usize, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["direction", "lag", "median_max_increment"])?;
    for (dir, rows) in [("time", temporal), ("space", spatial)] {
        for (lag, m) in rows {
            w.write_record([dir.to_string(), lag.to_string(), m.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Deserialize)]
struct GRow {
    t_index: usize,
    space_index: usize,
    value: f64,
}

/// Reads a multiplier table with columns `t_index,space_index,value`.
pub fn read_g_table(path: &Path, n_points: usize, m: f64, q: f64) -> Result<GProcess> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening g table {}", path.display()))?;
    let rows = r
        .deserialize()
        .map(|row| row.map(|g: GRow| (g.t_index, g.space_index, g.value)))
        .collect::<std::result::Result<Vec<_>, _>>()
        .with_context(|| format!("parsing g table {}", path.display()))?;
    Ok(GProcess::from_table(&rows, n_points, m, q)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use hspde_core::regularity::RegularityQuery;

    #[test]
    fn region_table_starts_at_the_gamma_axis() {
        let boundary = RegularityQuery::prop32(1, 4.0, 8.0).region_boundary(5).unwrap();
        let mut buf = Vec::new();
        write_region(&mut buf, &boundary).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("beta,gamma_max,theorem,budget"));
        assert_eq!(lines.next(), Some("0,0.25,prop32,0.125"));
    }

    #[test]
    fn g_table_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.csv");
        std::fs::write(&path, "t_index,space_index,value\n0,0,1\n0,1,2\n0,2,3\n").unwrap();
        let g = read_g_table(&path, 3, 8.0, 16.0).unwrap();
        assert_eq!(g.sup_norm(), 3.0);
        std::fs::write(&path, "t_index,space_index,value\n0,0,x\n").unwrap();
        assert!(read_g_table(&path, 3, 8.0, 16.0).is_err());
    }
}
