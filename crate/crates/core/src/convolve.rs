//! Stochastic convolution `u(t) = ∫₀ᵗ S_{t−r} G(r) dW(r)` in eigen-coordinates.
//!
//! Mode `k` has drift `μ_k = λ_k^{α/2}`. Over one step the Itô integral of
//! `e^{−μ(Δ−r)}` against a Wiener increment has variance
//! `(1 − e^{−2 Re μ Δ}) / (2 Re μ)`, so each frozen forcing term is scaled by
//! `s_k = sqrt((1 − e^{−2 Re μ Δ}) / (2 Re μ Δ))`. With diagonal `G` this is
//! the exact Ornstein–Uhlenbeck recursion.

use std::ops::Range;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{sample_wiener_increments, CameronMartinBasis, CameronMartinSpec, GKind, GProcess, TimeGrid};
use crate::spectral::{weighted_lp_norm, EigenSystem};

/// Largest tolerated imaginary part of a synthesized real trajectory,
/// relative to `max(1, sup |Re u|)`.
pub const IMAGINARY_TOLERANCE: f64 = 1e-10;

/// Which points are kept. A grid point is recorded when every axis index
/// `j` (1-based) is a multiple of `space_stride`; a time step `n` when
/// `n % time_stride == 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Recording {
    pub time_stride: usize,
    pub space_stride: usize,
}

impl Default for Recording {
    fn default() -> Self {
        Self {
            time_stride: 1,
            space_stride: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    ExactDiagonal,
    FrozenExponential,
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Self::ExactDiagonal => "exact-diagonal",
            Self::FrozenExponential => "frozen-exponential",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulationPlan {
    pub sys: Arc<EigenSystem>,
    pub alpha: f64,
    pub noise: CameronMartinSpec,
    pub g: GProcess,
    pub horizon: f64,
    pub steps: usize,
    pub replicas: usize,
    pub record: Recording,
    pub seed: u64,
    /// Free-form operator description carried into provenance.
    pub label: String,
}

impl SimulationPlan {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 2 {
            return Err(Error::InvalidPlan(format!("steps must be >= 2, got {}", self.steps)));
        }
        if self.replicas == 0 {
            return Err(Error::InvalidPlan("at least one replica is needed".into()));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidPlan(format!("horizon must be positive, got {}", self.horizon)));
        }
        if !(self.alpha > 0.0 && self.alpha <= 2.0) {
            return Err(Error::InvalidPlan(format!("alpha must lie in (0, 2], got {}", self.alpha)));
        }
        if self.record.time_stride == 0 || self.record.space_stride == 0 {
            return Err(Error::InvalidPlan("recording strides must be positive".into()));
        }
        let n = self.sys.domain().n_points();
        if self.g.slices().iter().any(|s| s.len() != n) {
            return Err(Error::InvalidPlan(format!("g slices must have {n} grid values")));
        }
        if self.recorded_space_indices().is_empty() {
            return Err(Error::InvalidPlan("space stride leaves no recorded points".into()));
        }
        Ok(())
    }

    pub fn time_grid(&self) -> TimeGrid {
        TimeGrid {
            horizon: self.horizon,
            steps: self.steps,
        }
    }

    pub fn recorded_steps(&self) -> Vec<usize> {
        (0..=self.steps).step_by(self.record.time_stride).collect()
    }

    pub fn recorded_times(&self) -> Vec<f64> {
        let grid = self.time_grid();
        self.recorded_steps().into_iter().map(|n| grid.time(n)).collect()
    }

    pub fn recorded_space_indices(&self) -> Vec<usize> {
        let domain = self.sys.domain();
        let s = self.record.space_stride;
        (0..domain.n_points())
            .filter(|&j| domain.multi_index(j).iter().all(|&i| (i + 1) % s == 0))
            .collect()
    }

    /// Quadrature weight of one recorded point.
    pub fn recorded_space_weight(&self) -> f64 {
        let domain = self.sys.domain();
        domain.weight() * (self.record.space_stride as f64).powi(domain.dim as i32)
    }

    /// `λ_k^{α/2}` on the principal branch.
    pub fn drift_eigenvalues(&self) -> Vec<Complex64> {
        self.sys
            .eigenvalues()
            .iter()
            .map(|l| if self.alpha == 2.0 { *l } else { l.powf(self.alpha / 2.0) })
            .collect()
    }

    /// Per-mode noise gains when `G` is diagonal in the eigenbasis.
    fn diagonal_gains(&self) -> Option<Vec<(usize, f64)>> {
        if !self.sys.is_selfadjoint() {
            return None;
        }
        let c = self.g.uniform_value()?;
        let sys_indices = self.sys.multi_indices()?;
        let basis = CameronMartinBasis::new(*self.sys.domain(), self.noise).ok()?;
        let noise_indices = basis.multi_indices();
        let mut gains = Vec::with_capacity(sys_indices.len());
        for k in sys_indices {
            match noise_indices.iter().position(|j| j == k) {
                Some(j) => gains.push((j, c * basis.weights()[j])),
                // mode not driven by the truncated noise
                None => gains.push((usize::MAX, 0.0)),
            }
        }
        Some(gains)
    }

    pub fn exact_diagonal_applicable(&self) -> bool {
        self.diagonal_gains().is_some()
    }

    pub fn auto_scheme(&self) -> Scheme {
        if self.exact_diagonal_applicable() {
            Scheme::ExactDiagonal
        } else {
            Scheme::FrozenExponential
        }
    }

    pub fn echo(&self, scheme: Scheme) -> PlanEcho {
        let domain = self.sys.domain();
        let finite = |x: f64| x.is_finite().then_some(x);
        PlanEcho {
            label: self.label.clone(),
            dim: domain.dim,
            grid_size: domain.grid_size,
            mode_cutoff: domain.mode_cutoff,
            n_modes: self.sys.n_modes(),
            selfadjoint: self.sys.is_selfadjoint(),
            requested_shift: self.sys.requested_shift(),
            effective_shift: self.sys.shift(),
            alpha: self.alpha,
            theta: self.noise.theta,
            truncation: self.noise.truncation,
            g_kind: self.g.kind,
            g_sup: self.g.sup_norm(),
            g_slices: self.g.n_slices(),
            m: finite(self.g.m),
            q: finite(self.g.q),
            horizon: self.horizon,
            steps: self.steps,
            replicas: self.replicas,
            record: self.record,
            seed: self.seed,
            scheme,
        }
    }
}

/// Serializable record of everything that produced an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEcho {
    pub label: String,
    pub dim: usize,
    pub grid_size: usize,
    pub mode_cutoff: usize,
    pub n_modes: usize,
    pub selfadjoint: bool,
    pub requested_shift: f64,
    pub effective_shift: f64,
    pub alpha: f64,
    pub theta: f64,
    pub truncation: usize,
    pub g_kind: GKind,
    pub g_sup: f64,
    pub g_slices: usize,
    pub m: Option<f64>,
    pub q: Option<f64>,
    pub horizon: f64,
    pub steps: usize,
    pub replicas: usize,
    pub record: Recording,
    pub seed: u64,
    pub scheme: Scheme,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryEnsemble {
    /// One `recorded time × recorded space` matrix per replica.
    pub values: Vec<DMatrix<f64>>,
    pub times: Vec<f64>,
    /// Coordinates of the recorded points.
    pub space: Vec<Vec<f64>>,
    /// Quadrature weight of one recorded point.
    pub space_weight: f64,
    pub provenance: PlanEcho,
}

impl TrajectoryEnsemble {
    pub fn replicas(&self) -> usize {
        self.values.len()
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn n_space(&self) -> usize {
        self.space.len()
    }

    /// Replica sample of `u(t_i, ξ_j)`.
    pub fn sample_at(&self, time: usize, point: usize) -> Vec<f64> {
        self.values.iter().map(|v| v[(time, point)]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Mode-coefficient history of one replica: `K × recorded times`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalPath {
    pub coefficients: DMatrix<Complex64>,
    pub times: Vec<f64>,
}

struct Kernel {
    decay: Vec<Complex64>,
    scale: Vec<f64>,
    forcing: Forcing,
}

enum Forcing {
    /// `(noise index, gain)` per mode.
    Diagonal(Vec<(usize, f64)>),
    /// `K × N` matrices, one per `g` slice.
    Real(Vec<DMatrix<f64>>),
    Complex(Vec<DMatrix<Complex64>>),
}

fn integrated_scale(mu_re: f64, dt: f64) -> f64 {
    let x = mu_re * dt;
    if x.abs() < 1e-12 {
        1.0
    } else {
        (-(-2.0 * x).exp_m1() / (2.0 * x)).sqrt()
    }
}

impl Kernel {
    fn new(plan: &SimulationPlan, scheme: Scheme) -> Result<Self> {
        plan.validate()?;
        let dt = plan.time_grid().dt();
        let mu = plan.drift_eigenvalues();
        let decay = mu.iter().map(|m| (-m * dt).exp()).collect();
        let scale = mu.iter().map(|m| integrated_scale(m.re, dt)).collect();
        let forcing = match scheme {
            Scheme::ExactDiagonal => Forcing::Diagonal(plan.diagonal_gains().ok_or_else(|| {
                Error::Scheme(
                    "G is not diagonal in the eigenbasis (needs a self-adjoint sine-mode system and constant g); \
                     use the frozen-exponential scheme"
                        .into(),
                )
            })?),
            Scheme::FrozenExponential => {
                let basis = CameronMartinBasis::new(*plan.sys.domain(), plan.noise)?;
                let w = plan.sys.domain().weight();
                let slices: Vec<DMatrix<f64>> = (0..plan.g.n_slices())
                    .map(|s| {
                        let mut v = basis.vectors().clone();
                        if let Some(g) = plan.g.multiplier(s) {
                            for (mut row, gv) in v.row_iter_mut().zip(g.iter()) {
                                row *= *gv;
                            }
                        }
                        v
                    })
                    .collect();
                match plan.sys.real_duals() {
                    Some(duals) => Forcing::Real(slices.iter().map(|v| duals.tr_mul(v) * w).collect()),
                    None => {
                        let duals = plan.sys.duals();
                        Forcing::Complex(
                            slices
                                .iter()
                                .map(|v| duals.tr_mul(&v.map(|x| Complex64::new(x, 0.0))) * Complex64::new(w, 0.0))
                                .collect(),
                        )
                    }
                }
            }
        };
        Ok(Self { decay, scale, forcing })
    }

    /// Steps the modal recursion through the increment table.
    fn run(&self, plan: &SimulationPlan, increments: &DMatrix<f64>) -> Result<ModalPath> {
        let k = self.decay.len();
        if increments.ncols() != plan.steps || increments.nrows() != plan.noise.truncation {
            return Err(Error::InvalidPlan(format!(
                "increment table must be {} × {}, got {} × {}",
                plan.noise.truncation,
                plan.steps,
                increments.nrows(),
                increments.ncols()
            )));
        }
        let stride = plan.record.time_stride;
        let recorded = plan.recorded_steps();
        let mut history = DMatrix::<Complex64>::zeros(k, recorded.len());
        let mut x = vec![Complex64::new(0.0, 0.0); k];
        let mut col = 1;
        let mut advance = |x: &mut [Complex64], n: usize, f: &dyn Fn(usize) -> Complex64, history: &mut DMatrix<Complex64>| {
            for i in 0..k {
                x[i] = self.decay[i] * x[i] + f(i) * self.scale[i];
            }
            if (n + 1) % stride == 0 {
                history.column_mut(col).copy_from_slice(x);
                col += 1;
            }
        };
        match &self.forcing {
            Forcing::Diagonal(gains) => {
                for n in 0..plan.steps {
                    let f = |i: usize| {
                        let (j, g) = gains[i];
                        Complex64::new(if g == 0.0 { 0.0 } else { g * increments[(j, n)] }, 0.0)
                    };
                    advance(&mut x, n, &f, &mut history);
                }
            }
            Forcing::Real(phis) => {
                for (slice, range) in slice_segments(&plan.g, plan.steps) {
                    let block = &phis[slice] * increments.columns(range.start, range.len());
                    for (c, n) in range.enumerate() {
                        let f = |i: usize| Complex64::new(block[(i, c)], 0.0);
                        advance(&mut x, n, &f, &mut history);
                    }
                }
            }
            Forcing::Complex(phis) => {
                for (slice, range) in slice_segments(&plan.g, plan.steps) {
                    let dw = increments.columns(range.start, range.len()).map(|v| Complex64::new(v, 0.0));
                    let block = &phis[slice] * dw;
                    for (c, n) in range.enumerate() {
                        let f = |i: usize| block[(i, c)];
                        advance(&mut x, n, &f, &mut history);
                    }
                }
            }
        }
        Ok(ModalPath {
            coefficients: history,
            times: plan.recorded_times(),
        })
    }
}

/// Maximal runs of steps sharing one `g` slice.
fn slice_segments(g: &GProcess, steps: usize) -> Vec<(usize, Range<usize>)> {
    let mut out: Vec<(usize, Range<usize>)> = Vec::new();
    for n in 0..steps {
        let s = g.slice_index(n, steps);
        match out.last_mut() {
            Some((last, r)) if *last == s => r.end = n + 1,
            _ => out.push((s, n..n + 1)),
        }
    }
    out
}

/// Modal path of one replica driven by the given `N × steps` increments.
pub fn modal_path_with_increments(plan: &SimulationPlan, scheme: Scheme, increments: &DMatrix<f64>) -> Result<ModalPath> {
    Kernel::new(plan, scheme)?.run(plan, increments)
}

pub fn modal_path(plan: &SimulationPlan, scheme: Scheme, replica: u64) -> Result<ModalPath> {
    let increments = sample_wiener_increments(&plan.noise, &plan.time_grid(), plan.seed, replica);
    modal_path_with_increments(plan, scheme, &increments)
}

struct Synthesizer {
    real: Option<DMatrix<f64>>,
    complex: DMatrix<Complex64>,
}

impl Synthesizer {
    fn new(plan: &SimulationPlan) -> Self {
        let idx = plan.recorded_space_indices();
        Self {
            real: plan.sys.real_modes().map(|m| m.select_rows(&idx)),
            complex: plan.sys.modes().select_rows(&idx),
        }
    }

    /// `recorded time × recorded space` values.
    fn synthesize(&self, path: &ModalPath) -> Result<DMatrix<f64>> {
        match &self.real {
            Some(modes) => {
                let coeffs = path.coefficients.map(|c| c.re);
                Ok((modes * coeffs).transpose())
            }
            None => {
                let u = &self.complex * &path.coefficients;
                let re_max = u.iter().map(|z| z.re.abs()).fold(1.0, f64::max);
                let im_max = u.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
                if im_max > IMAGINARY_TOLERANCE * re_max {
                    return Err(Error::Internal(format!(
                        "synthesized trajectory has imaginary part {im_max:.3e}"
                    )));
                }
                Ok(u.map(|z| z.re).transpose())
            }
        }
    }
}

fn check_finite(values: &DMatrix<f64>) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Internal("non-finite trajectory value".into()));
    }
    Ok(())
}

/// One replica's recorded trajectory driven by explicit increments.
pub fn simulate_with_increments(plan: &SimulationPlan, scheme: Scheme, increments: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let path = modal_path_with_increments(plan, scheme, increments)?;
    let values = Synthesizer::new(plan).synthesize(&path)?;
    check_finite(&values)?;
    Ok(values)
}

/// Recorded trajectories for a range of replica indices (run in parallel).
pub fn simulate_replicas(plan: &SimulationPlan, scheme: Scheme, replicas: Range<usize>) -> Result<Vec<DMatrix<f64>>> {
    let kernel = Kernel::new(plan, scheme)?;
    let synth = Synthesizer::new(plan);
    let grid = plan.time_grid();
    replicas
        .into_par_iter()
        .map(|r| {
            let increments = sample_wiener_increments(&plan.noise, &grid, plan.seed, r as u64);
            let path = kernel.run(plan, &increments)?;
            let values = synth.synthesize(&path)?;
            check_finite(&values)?;
            Ok(values)
        })
        .collect()
}

/// Empty ensemble shell carrying grids and provenance.
pub fn ensemble_shell(plan: &SimulationPlan, scheme: Scheme) -> TrajectoryEnsemble {
    let domain = plan.sys.domain();
    TrajectoryEnsemble {
        values: Vec::new(),
        times: plan.recorded_times(),
        space: plan.recorded_space_indices().into_iter().map(|j| domain.point(j)).collect(),
        space_weight: plan.recorded_space_weight(),
        provenance: plan.echo(scheme),
    }
}

pub fn simulate(plan: &SimulationPlan, scheme: Scheme) -> Result<TrajectoryEnsemble> {
    let mut ens = ensemble_shell(plan, scheme);
    ens.values = simulate_replicas(plan, scheme, 0..plan.replicas)?;
    Ok(ens)
}

pub fn simulate_exact_diagonal(plan: &SimulationPlan) -> Result<TrajectoryEnsemble> {
    simulate(plan, Scheme::ExactDiagonal)
}

pub fn simulate_frozen_exponential(plan: &SimulationPlan) -> Result<TrajectoryEnsemble> {
    simulate(plan, Scheme::FrozenExponential)
}

/// Adds the deterministic term `S_t u₀` to every replica.
pub fn add_initial_condition(ens: &mut TrajectoryEnsemble, plan: &SimulationPlan, u0: &[f64]) -> Result<()> {
    let idx = plan.recorded_space_indices();
    for (i, &t) in ens.times.iter().enumerate() {
        let flow = plan.sys.apply_semigroup(t, u0)?;
        for v in ens.values.iter_mut() {
            for (c, &j) in idx.iter().enumerate() {
                v[(i, c)] += flow[j];
            }
        }
    }
    Ok(())
}

/// `(E ∫₀ᵀ |u(t)|^q_{L^p} dt)^{1/q}`, trapezoid in time.
pub fn mean_mq_norm(ens: &TrajectoryEnsemble, q: f64, p: f64) -> Result<f64> {
    Ok(mq_integrals(ens, q, p)?.iter().sum::<f64>().max(0.0).powf(1.0 / q) / (ens.replicas() as f64).powf(1.0 / q))
}

/// Per-replica `∫₀ᵀ |u(t)|^q_{L^p} dt`.
pub fn mq_integrals(ens: &TrajectoryEnsemble, q: f64, p: f64) -> Result<Vec<f64>> {
    if q < 2.0 {
        return Err(Error::Precondition(format!("q must be >= 2, got {q}")));
    }
    if ens.replicas() == 0 {
        return Err(Error::Precondition("empty ensemble".into()));
    }
    Ok(ens
        .values
        .iter()
        .map(|v| {
            let norms: Vec<f64> = v
                .row_iter()
                .map(|row| weighted_lp_norm(row.iter().map(|x| x.abs()), ens.space_weight, p).powf(q))
                .collect();
            norms
                .windows(2)
                .zip(ens.times.windows(2))
                .map(|(n, t)| 0.5 * (n[0] + n[1]) * (t[1] - t[0]))
                .sum()
        })
        .collect())
}

/// Replica-mean of the modal coefficient `k` at every recorded time, as a
/// real vector (for moment checks).
pub fn modal_real_part(path: &ModalPath, k: usize) -> DVector<f64> {
    path.coefficients.row(k).transpose().map(|c| c.re)
}
