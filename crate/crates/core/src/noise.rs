//! Truncated cylindrical Wiener processes and the noise operators `G`.
//!
//! The Cameron–Martin space `H^{θ,2}` is realized on the spectral scale of the
//! unshifted Dirichlet Laplacian: its orthonormal vectors, in L² coordinates,
//! are `e_k / (1 + λ_k)^{θ/2}` where `(λ_k, e_k)` are the Laplacian eigenpairs.
//! `θ = 0` gives `H = L²`. `G(t)` multiplies the synthesized element pointwise
//! by `g(t, ·)` (Nemytskii form) or embeds it unchanged.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::spectral::{laplacian_eigenvalue, laplacian_multi_indices, sine_mode, GridFunction, SpectralDomain};

/// Uniform time grid on `[0, horizon]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub horizon: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) || steps == 0 {
            return Err(Error::InvalidPlan(format!(
                "time grid needs T > 0 and at least one step (T = {horizon}, steps = {steps})"
            )));
        }
        Ok(Self { horizon, steps })
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, n: usize) -> f64 {
        self.horizon * n as f64 / self.steps as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameronMartinSpec {
    /// Smoothness `θ ≥ 0`.
    pub theta: f64,
    /// Number `N` of orthonormal vectors kept.
    pub truncation: usize,
}

/// The `N` lowest H-orthonormal vectors sampled on the grid.
#[derive(Debug, Clone)]
pub struct CameronMartinBasis {
    domain: SpectralDomain,
    spec: CameronMartinSpec,
    multi_indices: Vec<Vec<usize>>,
    laplacian_eigenvalues: Vec<f64>,
    weights: Vec<f64>,
    vectors: DMatrix<f64>,
}

impl CameronMartinBasis {
    pub fn new(domain: SpectralDomain, spec: CameronMartinSpec) -> Result<Self> {
        domain.validate()?;
        if !(spec.theta >= 0.0 && spec.theta.is_finite()) {
            return Err(Error::InvalidNoise(format!("theta {} must be >= 0", spec.theta)));
        }
        if spec.truncation == 0 || spec.truncation > domain.n_points() {
            return Err(Error::InvalidNoise(format!(
                "truncation {} must lie in 1..={}",
                spec.truncation,
                domain.n_points()
            )));
        }
        let multi_indices = laplacian_multi_indices(domain.dim, domain.grid_size, spec.truncation);
        let laplacian_eigenvalues: Vec<f64> = multi_indices.iter().map(|k| laplacian_eigenvalue(k)).collect();
        let weights: Vec<f64> = laplacian_eigenvalues
            .iter()
            .map(|l| (1.0 + l).powf(-spec.theta / 2.0))
            .collect();
        let mut vectors = DMatrix::zeros(domain.n_points(), spec.truncation);
        for (col, (k, w)) in multi_indices.iter().zip(&weights).enumerate() {
            vectors.set_column(col, &(sine_mode(&domain, k) * *w));
        }
        Ok(Self {
            domain,
            spec,
            multi_indices,
            laplacian_eigenvalues,
            weights,
            vectors,
        })
    }

    pub fn domain(&self) -> &SpectralDomain {
        &self.domain
    }

    pub fn spec(&self) -> &CameronMartinSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.spec.truncation
    }

    pub fn is_empty(&self) -> bool {
        self.spec.truncation == 0
    }

    pub fn multi_indices(&self) -> &[Vec<usize>] {
        &self.multi_indices
    }

    pub fn laplacian_eigenvalues(&self) -> &[f64] {
        &self.laplacian_eigenvalues
    }

    /// `(1 + λ_k)^{-θ/2}`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `n_points × N` matrix whose columns are the H-orthonormal vectors.
    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    /// `y = Σ_k c_k h_k` on the grid.
    pub fn synthesize(&self, coefficients: &[f64]) -> GridFunction {
        &self.vectors * DVector::from_column_slice(coefficients)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GKind {
    IdentityEmbedding,
    ConstantMultiplication,
    TimeVaryingMultiplication,
}

/// The operator process `G(t)`, with `g` piecewise constant in time: slice `i`
/// of `n` covers `[iT/n, (i+1)T/n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GProcess {
    pub kind: GKind,
    slices: Vec<GridFunction>,
    /// Spatial integrability exponent `m` of `g`.
    pub m: f64,
    /// Temporal integrability exponent `q`.
    pub q: f64,
}

impl GProcess {
    pub fn identity(m: f64, q: f64) -> Self {
        Self {
            kind: GKind::IdentityEmbedding,
            slices: Vec::new(),
            m,
            q,
        }
    }

    pub fn constant(g: GridFunction, m: f64, q: f64) -> Result<Self> {
        check_bounded(&g)?;
        Ok(Self {
            kind: GKind::ConstantMultiplication,
            slices: vec![g],
            m,
            q,
        })
    }

    pub fn time_varying(slices: Vec<GridFunction>, m: f64, q: f64) -> Result<Self> {
        if slices.is_empty() {
            return Err(Error::InvalidNoise("time-varying g needs at least one slice".into()));
        }
        let n = slices[0].len();
        for s in &slices {
            if s.len() != n {
                return Err(Error::InvalidNoise("g slices differ in length".into()));
            }
            check_bounded(s)?;
        }
        Ok(Self {
            kind: GKind::TimeVaryingMultiplication,
            slices,
            m,
            q,
        })
    }

    /// Builds `g` from `(t_index, flat space index, value)` rows; every cell of
    /// the `(slices × n_points)` table must be given exactly once.
    pub fn from_table(rows: &[(usize, usize, f64)], n_points: usize, m: f64, q: f64) -> Result<Self> {
        let n_slices = rows.iter().map(|r| r.0 + 1).max().unwrap_or(0);
        let mut table = vec![vec![None; n_points]; n_slices];
        for &(t, x, v) in rows {
            if x >= n_points {
                return Err(Error::InvalidNoise(format!("space index {x} out of range")));
            }
            if table[t][x].replace(v).is_some() {
                return Err(Error::InvalidNoise(format!("duplicate g entry at ({t}, {x})")));
            }
        }
        let slices = table
            .into_iter()
            .enumerate()
            .map(|(t, row)| {
                row.into_iter()
                    .enumerate()
                    .map(|(x, v)| v.ok_or_else(|| Error::InvalidNoise(format!("missing g entry at ({t}, {x})"))))
                    .collect::<Result<Vec<f64>>>()
                    .map(GridFunction::from_vec)
            })
            .collect::<Result<Vec<_>>>()?;
        if slices.len() == 1 {
            Self::constant(slices.into_iter().next().unwrap(), m, q)
        } else {
            Self::time_varying(slices, m, q)
        }
    }

    pub fn slices(&self) -> &[GridFunction] {
        &self.slices
    }

    pub fn n_slices(&self) -> usize {
        self.slices.len().max(1)
    }

    /// Slice in force at step `n` of a grid with `steps` steps.
    pub fn slice_index(&self, n: usize, steps: usize) -> usize {
        (n * self.n_slices() / steps).min(self.n_slices() - 1)
    }

    pub fn multiplier(&self, slice: usize) -> Option<&GridFunction> {
        match self.kind {
            GKind::IdentityEmbedding => None,
            _ => self.slices.get(slice),
        }
    }

    /// `sup |g|` over all slices (1 for the identity embedding).
    pub fn sup_norm(&self) -> f64 {
        match self.kind {
            GKind::IdentityEmbedding => 1.0,
            _ => self.slices.iter().map(|s| s.amax()).fold(0.0, f64::max),
        }
    }

    /// `Some(c)` when `g ≡ c` on the whole time-space grid.
    pub fn uniform_value(&self) -> Option<f64> {
        match self.kind {
            GKind::IdentityEmbedding => Some(1.0),
            _ => {
                let first = self.slices[0][0];
                self.slices
                    .iter()
                    .all(|s| s.iter().all(|&v| v == first))
                    .then_some(first)
            }
        }
    }

    /// Same process with `g` multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        match self.kind {
            GKind::IdentityEmbedding => Err(Error::InvalidNoise(
                "the identity embedding has no multiplier to scale".into(),
            )),
            _ => Ok(Self {
                slices: self.slices.iter().map(|s| s * factor).collect(),
                ..self.clone()
            }),
        }
    }
}

fn check_bounded(g: &GridFunction) -> Result<()> {
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidNoise("g must be bounded (finite) on the grid".into()));
    }
    Ok(())
}

/// Embedding exponent `r` with `1/r = 1/2 − θ/d` (infinite when `θ ≥ d/2`).
pub fn embedding_exponent(theta: f64, d: usize) -> f64 {
    let inv = 0.5 - theta / d as f64;
    if inv <= 0.0 {
        f64::INFINITY
    } else {
        1.0 / inv
    }
}

/// Named multiplier presets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "preset")]
pub enum GPreset {
    /// `g ≡ value`.
    Const { value: f64 },
    /// Smooth bump `Π exp(1 − 1/(1 − (2ξ_i − 1)²))`, peak 1 at the centre.
    Bump,
    /// `(1 + sin(2πt/T)/2) Π sin(πξ_i)` on `slices` time slices.
    #[serde(rename = "separable:sin")]
    SeparableSin { slices: usize },
}

impl GPreset {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "const" => Some(Self::Const { value: 1.0 }),
            "bump" => Some(Self::Bump),
            "separable:sin" => Some(Self::SeparableSin { slices: 16 }),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Const { .. } => "const",
            Self::Bump => "bump",
            Self::SeparableSin { .. } => "separable:sin",
        }
    }

    pub fn build(&self, domain: &SpectralDomain, m: f64, q: f64) -> Result<GProcess> {
        match *self {
            Self::Const { value } => GProcess::constant(GridFunction::from_element(domain.n_points(), value), m, q),
            Self::Bump => GProcess::constant(domain.sample(|xi| xi.iter().map(|&x| bump(x)).product()), m, q),
            Self::SeparableSin { slices } => {
                if slices == 0 {
                    return Err(Error::InvalidNoise("separable:sin needs at least one slice".into()));
                }
                let profile = domain.sample(|xi| xi.iter().map(|&x| (PI * x).sin()).product());
                let slices = (0..slices)
                    .map(|i| {
                        let t = (i as f64 + 0.5) / slices as f64;
                        &profile * (1.0 + 0.5 * (2.0 * PI * t).sin())
                    })
                    .collect();
                GProcess::time_varying(slices, m, q)
            }
        }
    }
}

fn bump(x: f64) -> f64 {
    let s = 2.0 * x - 1.0;
    if s.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - s * s)).exp()
    }
}

/// `N × steps` table of i.i.d. `Normal(0, Δ)` increments, row `k` drawn from
/// the counter-derived stream `(seed, replica, k)`.
pub fn sample_wiener_increments(spec: &CameronMartinSpec, grid: &TimeGrid, seed: u64, replica: u64) -> DMatrix<f64> {
    let sd = grid.dt().sqrt();
    let mut table = DMatrix::zeros(spec.truncation, grid.steps);
    for k in 0..spec.truncation {
        let mut rng = stream_rng(seed, replica, k as u64);
        for n in 0..grid.steps {
            let z: f64 = StandardNormal.sample(&mut rng);
            table[(k, n)] = sd * z;
        }
    }
    table
}

/// `(G(t_n) y)(ξ) = g(t_n, ξ) · y(ξ)` with `y` synthesized from its H-ONB
/// coefficients.
pub fn apply_g(g: &GProcess, basis: &CameronMartinBasis, slice: usize, coefficients: &[f64]) -> Result<GridFunction> {
    if coefficients.len() != basis.len() {
        return Err(Error::InvalidNoise(format!(
            "expected {} coefficients, got {}",
            basis.len(),
            coefficients.len()
        )));
    }
    let y = basis.synthesize(coefficients);
    Ok(match g.multiplier(slice) {
        None => y,
        Some(mult) => y.component_mul(mult),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisClause {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseHypothesisReport {
    pub clauses: Vec<HypothesisClause>,
    /// `p` from `1/p = 1/2 − θ/d + 1/m`.
    pub implied_p: f64,
}

impl NoiseHypothesisReport {
    pub fn all_passed(&self) -> bool {
        self.clauses.iter().all(|c| c.passed)
    }

    pub fn clause(&self, name: &str) -> Option<&HypothesisClause> {
        self.clauses.iter().find(|c| c.name == name)
    }
}

pub const CLAUSE_M: &str = "m > max{2,d}";
pub const CLAUSE_P: &str = "p in (max{2,d}, m]";
pub const CLAUSE_MQ: &str = "d/m + 1/q < 1/2";
pub const CLAUSE_THETA: &str = "theta in (d/m + (d-1)/2 + 1/q, d/2)";
pub const CLAUSE_P_CONSISTENT: &str = "1/p = 1/2 - theta/d + 1/m";
pub const CLAUSE_BOUNDED: &str = "g bounded";

/// Checks the colored-noise hypotheses clause by clause.
pub fn validate_noise_hypotheses(g: &GProcess, spec: &CameronMartinSpec, p: f64, d: usize) -> NoiseHypothesisReport {
    let df = d as f64;
    let (m, q, theta) = (g.m, g.q, spec.theta);
    let floor = 2f64.max(df);
    let mut clauses = Vec::new();
    let mut push = |name: &str, passed: bool, detail: String| {
        clauses.push(HypothesisClause {
            name: name.into(),
            passed,
            detail,
        })
    };
    push(CLAUSE_M, m > floor, format!("m = {m}, max{{2,d}} = {floor}"));
    push(CLAUSE_P, p > floor && p <= m, format!("p = {p}, interval ({floor}, {m}]"));
    let mq = df / m + 1.0 / q;
    push(CLAUSE_MQ, mq < 0.5, format!("d/m + 1/q = {mq}"));
    let lo = df / m + (df - 1.0) / 2.0 + 1.0 / q;
    let hi = df / 2.0;
    push(
        CLAUSE_THETA,
        theta > lo && theta < hi,
        format!("theta = {theta}, window ({lo}, {hi})"),
    );
    let inv_p = 0.5 - theta / df + 1.0 / m;
    let implied_p = if inv_p > 0.0 { 1.0 / inv_p } else { f64::INFINITY };
    let consistent = (implied_p - p).abs() <= 1e-9 * p.abs().max(1.0);
    push(
        CLAUSE_P_CONSISTENT,
        consistent,
        format!("implied p = {implied_p}, given p = {p}"),
    );
    let sup = g.sup_norm();
    push(CLAUSE_BOUNDED, sup.is_finite(), format!("sup|g| = {sup}"));
    NoiseHypothesisReport { clauses, implied_p }
}
