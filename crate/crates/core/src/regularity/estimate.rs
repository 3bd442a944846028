//! Hölder exponents from dyadic max-increments.
//!
//! For lags `h = 2^j` (in grid steps) the maximal increment `M(h)` is
//! computed per path; the slope of `log M` against `log h` over a trimmed
//! range of levels is that path's exponent. Paths are aggregated by median.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::convolve::TrajectoryEnsemble;
use crate::error::{Error, Result};
use crate::stats;

pub const EXPONENT_CAP: f64 = 1.5;

/// Dyadic levels `j = 0..=J` with `2^J ≤ (n − 1)/divisor`; the fit uses
/// levels `trim_low ..= J − trim_high`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LagWindow {
    pub divisor: usize,
    pub trim_low: usize,
    pub trim_high: usize,
}

impl LagWindow {
    pub const TEMPORAL: Self = Self {
        divisor: 8,
        trim_low: 2,
        trim_high: 2,
    };
    pub const SPATIAL: Self = Self {
        divisor: 4,
        trim_low: 1,
        trim_high: 1,
    };

    /// Fitted lags for a series of `n` samples.
    pub fn lags(&self, n: usize) -> Result<Vec<usize>> {
        let span = n.saturating_sub(1) / self.divisor.max(1);
        if span == 0 {
            return Err(Error::Precondition(format!("{n} samples leave no dyadic lags")));
        }
        let top = usize::BITS - 1 - span.leading_zeros();
        let top = top as usize;
        if top < self.trim_low + self.trim_high + 1 {
            return Err(Error::Precondition(format!(
                "{n} samples give {} dyadic levels; trimming {}+{} leaves fewer than two",
                top + 1,
                self.trim_low,
                self.trim_high
            )));
        }
        Ok((self.trim_low..=top - self.trim_high).map(|j| 1usize << j).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemporalMode {
    /// `|u(t+h, ξ*) − u(t, ξ*)|` at the central recorded point.
    Pointwise,
    /// `sup_ξ |u(t+h, ξ) − u(t, ξ)|`.
    SupSpace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentEstimate {
    /// Median of `per_sample`, in `[0, 1.5]`.
    pub exponent: f64,
    /// One clamped slope per non-degenerate path.
    pub per_sample: Vec<f64>,
    /// Median `r²` of the per-path fits.
    pub fit_r2: f64,
    /// Fitted lags in grid steps (smallest, largest).
    pub lag_range: (usize, usize),
    /// Paths excluded because some increment vanished.
    pub degenerate: usize,
}

/// Slope of `log M(h)` vs `log h`, or `None` if any `M(h)` vanishes.
fn fit_path(maxima: &[f64], lags: &[usize]) -> Option<(f64, f64)> {
    if maxima.iter().any(|m| !(*m > 0.0 && m.is_finite())) {
        return None;
    }
    let xs: Vec<f64> = lags.iter().map(|&h| (h as f64).ln()).collect();
    let ys: Vec<f64> = maxima.iter().map(|m| m.ln()).collect();
    let fit = stats::fit_line(&xs, &ys)?;
    Some((fit.slope.clamp(0.0, EXPONENT_CAP), fit.r2.clamp(0.0, 1.0)))
}

fn aggregate(fits: Vec<Option<(f64, f64)>>, lags: &[usize]) -> Result<ExponentEstimate> {
    let total = fits.len();
    let good: Vec<(f64, f64)> = fits.into_iter().flatten().collect();
    let degenerate = total - good.len();
    if good.is_empty() {
        return Err(Error::Degenerate);
    }
    if degenerate > 0 {
        log::warn!("{degenerate} of {total} paths are degenerate and were excluded");
    }
    let per_sample: Vec<f64> = good.iter().map(|g| g.0).collect();
    let r2: Vec<f64> = good.iter().map(|g| g.1).collect();
    Ok(ExponentEstimate {
        exponent: stats::median(&per_sample).ok_or(Error::Degenerate)?,
        per_sample,
        fit_r2: stats::median(&r2).unwrap_or(0.0),
        lag_range: (lags[0], *lags.last().unwrap()),
        degenerate,
    })
}

/// `M(h)` per lag for a `time × space` path.
fn temporal_maxima(v: &DMatrix<f64>, lags: &[usize], mode: TemporalMode) -> Vec<f64> {
    let n = v.nrows();
    let centre = v.ncols() / 2;
    lags.iter()
        .map(|&h| {
            let mut best: f64 = 0.0;
            for t in 0..n - h {
                let inc = match mode {
                    TemporalMode::Pointwise => (v[(t + h, centre)] - v[(t, centre)]).abs(),
                    TemporalMode::SupSpace => (0..v.ncols())
                        .map(|j| (v[(t + h, j)] - v[(t, j)]).abs())
                        .fold(0.0, f64::max),
                };
                best = best.max(inc);
            }
            best
        })
        .collect()
}

pub fn estimate_temporal_exponent(ens: &TrajectoryEnsemble, mode: TemporalMode) -> Result<ExponentEstimate> {
    estimate_temporal_exponent_with(ens, mode, LagWindow::TEMPORAL)
}

pub fn estimate_temporal_exponent_with(
    ens: &TrajectoryEnsemble,
    mode: TemporalMode,
    window: LagWindow,
) -> Result<ExponentEstimate> {
    if ens.n_times() < 64 {
        return Err(Error::Precondition(format!(
            "temporal estimation needs >= 64 recorded times, got {}",
            ens.n_times()
        )));
    }
    let lags = window.lags(ens.n_times())?;
    let fits = ens
        .values
        .iter()
        .map(|v| fit_path(&temporal_maxima(v, &lags, mode), &lags))
        .collect();
    aggregate(fits, &lags)
}

/// Recorded spatial lattice: `(dim, points per axis)`.
fn lattice(ens: &TrajectoryEnsemble) -> Result<(usize, usize)> {
    let d = ens.provenance.dim.max(1);
    let n = (ens.n_space() as f64).powf(1.0 / d as f64).round() as usize;
    if n.pow(d as u32) != ens.n_space() {
        return Err(Error::Precondition("recorded points are not a tensor lattice".into()));
    }
    Ok((d, n))
}

/// Spatial `M(h)` over all axes for one recorded time row.
fn spatial_maxima(row: &[f64], d: usize, n: usize, lags: &[usize]) -> Vec<f64> {
    lags.iter()
        .map(|&h| {
            let mut best: f64 = 0.0;
            for axis in 0..d {
                let stride = n.pow((d - 1 - axis) as u32);
                for flat in 0..row.len() {
                    let coord = (flat / stride) % n;
                    if coord + h < n {
                        best = best.max((row[flat + h * stride] - row[flat]).abs());
                    }
                }
            }
            best
        })
        .collect()
}

/// Eight equispaced recorded times in `(0, T]`.
pub fn default_spatial_times(ens: &TrajectoryEnsemble) -> Vec<usize> {
    let last = ens.n_times() - 1;
    let count = 8.min(last.max(1));
    let mut times: Vec<usize> = (1..=count).map(|k| (k * last / count).max(1)).collect();
    times.dedup();
    times
}

pub fn estimate_spatial_exponent(ens: &TrajectoryEnsemble, times: &[usize]) -> Result<ExponentEstimate> {
    estimate_spatial_exponent_with(ens, times, LagWindow::SPATIAL)
}

pub fn estimate_spatial_exponent_with(ens: &TrajectoryEnsemble, times: &[usize], window: LagWindow) -> Result<ExponentEstimate> {
    let (d, n) = lattice(ens)?;
    if n < 33 {
        return Err(Error::Precondition(format!(
            "spatial estimation needs >= 33 recorded points per axis, got {n}"
        )));
    }
    if times.is_empty() || times.iter().any(|&t| t >= ens.n_times()) {
        return Err(Error::Precondition("invalid time selection".into()));
    }
    let lags = window.lags(n)?;
    let mut fits = Vec::with_capacity(times.len() * ens.replicas());
    for v in &ens.values {
        for &t in times {
            let row: Vec<f64> = v.row(t).iter().copied().collect();
            fits.push(fit_path(&spatial_maxima(&row, d, n, &lags), &lags));
        }
    }
    aggregate(fits, &lags)
}

/// Median over paths of `M(h)` at every dyadic lag `h ≤ (n − 1)/divisor`,
/// untrimmed, for plotting: `(lag in grid steps, median M)`.
pub fn temporal_increment_profile(ens: &TrajectoryEnsemble, mode: TemporalMode, divisor: usize) -> Result<Vec<(usize, f64)>> {
    let all = LagWindow {
        divisor,
        trim_low: 0,
        trim_high: 0,
    };
    let lags = all.lags(ens.n_times())?;
    let per_path: Vec<Vec<f64>> = ens.values.iter().map(|v| temporal_maxima(v, &lags, mode)).collect();
    Ok(profile(&lags, &per_path))
}

pub fn spatial_increment_profile(ens: &TrajectoryEnsemble, times: &[usize], divisor: usize) -> Result<Vec<(usize, f64)>> {
    let (d, n) = lattice(ens)?;
    let all = LagWindow {
        divisor,
        trim_low: 0,
        trim_high: 0,
    };
    let lags = all.lags(n)?;
    let mut per_path = Vec::new();
    for v in &ens.values {
        for &t in times {
            let row: Vec<f64> = v.row(t).iter().copied().collect();
            per_path.push(spatial_maxima(&row, d, n, &lags));
        }
    }
    Ok(profile(&lags, &per_path))
}

fn profile(lags: &[usize], per_path: &[Vec<f64>]) -> Vec<(usize, f64)> {
    lags.iter()
        .enumerate()
        .map(|(i, &h)| {
            let column: Vec<f64> = per_path.iter().map(|m| m[i]).collect();
            (h, stats::median(&column).unwrap_or(f64::NAN))
        })
        .collect()
}
