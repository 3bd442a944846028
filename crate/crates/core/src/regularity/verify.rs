//! Confronts an admissible region with exponents estimated from an ensemble.

use serde::{Deserialize, Serialize};

use super::estimate::{
    default_spatial_times, estimate_spatial_exponent, estimate_temporal_exponent, ExponentEstimate, TemporalMode,
};
use super::region::{vertex_grid, RegularityQuery, Theorem};
use crate::convolve::TrajectoryEnsemble;
use crate::error::{Error, Result};
use crate::noise::GKind;

pub const DEFAULT_TOLERANCE: f64 = 0.10;
pub const GRID_SIZE: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertexCheck {
    pub beta: f64,
    pub gamma: f64,
    /// `β̂ + tol − β`; negative means the vertex fails.
    pub beta_margin: f64,
    pub gamma_margin: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub pass: bool,
    pub query: RegularityQuery<f64>,
    pub budget: f64,
    pub tolerance: f64,
    pub beta_hat: ExponentEstimate,
    pub gamma_hat: ExponentEstimate,
    pub vertices: Vec<VertexCheck>,
    pub notes: Vec<String>,
}

impl Verdict {
    pub fn worst_vertex(&self) -> Option<&VertexCheck> {
        self.vertices
            .iter()
            .min_by(|a, b| a.beta_margin.min(a.gamma_margin).total_cmp(&b.beta_margin.min(b.gamma_margin)))
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

/// Checks that the ensemble was generated under the query's parameters.
pub fn check_provenance(ens: &TrajectoryEnsemble, query: &RegularityQuery<f64>) -> Result<()> {
    let prov = &ens.provenance;
    let mismatch = |what: String| Err(Error::Provenance(what));
    if prov.dim != query.d {
        return mismatch(format!("ensemble has d = {}, query d = {}", prov.dim, query.d));
    }
    let alpha = match query.theorem {
        Theorem::Fractional => query.alpha,
        _ => 2.0,
    };
    if !close(prov.alpha, alpha) {
        return mismatch(format!("ensemble has alpha = {}, query expects {alpha}", prov.alpha));
    }
    if let Some(q) = prov.q {
        if !close(q, query.q) {
            return mismatch(format!("ensemble g has q = {q}, query q = {}", query.q));
        }
    }
    match query.theorem {
        Theorem::Colored => {
            let (theta, m) = (query.theta.unwrap_or(f64::NAN), query.m.unwrap_or(f64::NAN));
            if !close(prov.theta, theta) {
                return mismatch(format!("ensemble has theta = {}, query theta = {theta}", prov.theta));
            }
            match prov.m {
                Some(pm) if close(pm, m) => {}
                other => return mismatch(format!("ensemble g has m = {other:?}, query m = {m}")),
            }
        }
        Theorem::Remark33 => {
            let theta = query.theta.unwrap_or(f64::NAN);
            if !close(prov.theta, theta) {
                return mismatch(format!("ensemble has theta = {}, query theta = {theta}", prov.theta));
            }
        }
        _ => {}
    }
    Ok(())
}

pub fn verify_region(ens: &TrajectoryEnsemble, query: &RegularityQuery<f64>) -> Result<Verdict> {
    check_provenance(ens, query)?;
    verify_region_unchecked(ens, query, DEFAULT_TOLERANCE)
}

/// Same confrontation without the provenance check, for deliberately
/// mismatched (e.g. inflated) queries.
pub fn verify_region_unchecked(ens: &TrajectoryEnsemble, query: &RegularityQuery<f64>, tolerance: f64) -> Result<Verdict> {
    let budget = query.budget()?;
    let beta_hat = estimate_temporal_exponent(ens, TemporalMode::SupSpace)?;
    let gamma_hat = estimate_spatial_exponent(ens, &default_spatial_times(ens))?;
    let mut notes = Vec::new();
    if ens.provenance.g_kind == GKind::IdentityEmbedding {
        notes.push("identity G: outside the theorem's hypotheses (calibration baseline)".into());
    }
    let vertices: Vec<VertexCheck> = vertex_grid(query, GRID_SIZE)?
        .into_iter()
        .map(|(beta, gamma)| {
            let beta_margin = beta_hat.exponent + tolerance - beta;
            let gamma_margin = gamma_hat.exponent + tolerance - gamma;
            VertexCheck {
                beta,
                gamma,
                beta_margin,
                gamma_margin,
                passed: beta_margin >= 0.0 && gamma_margin >= 0.0,
            }
        })
        .collect();
    if vertices.is_empty() {
        notes.push(format!("empty region (budget {budget} <= 0): vacuous pass"));
    }
    Ok(Verdict {
        pass: vertices.iter().all(|v| v.passed),
        query: *query,
        budget,
        tolerance,
        beta_hat,
        gamma_hat,
        vertices,
        notes,
    })
}
