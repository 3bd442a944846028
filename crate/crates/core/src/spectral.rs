//! Spatial domains, grids, and the discretized elliptic operator.
//!
//! Everything downstream works in the eigen-coordinates produced here: the
//! semigroup acts as `e^{-λ_k t}` on mode coefficients and fractional powers as
//! `λ_k^z`. Grid functions are sampled at the interior points
//! `ξ_j = j / (M + 1)` of `(0, 1)^d` (zero Dirichlet boundary implied) and
//! integrated with the uniform weight `(M + 1)^{-d}`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// A real function sampled on the interior grid, flattened row-major
/// (last axis fastest).
pub type GridFunction = DVector<f64>;

/// Bi-orthogonality residual above which an eigen-system is rejected.
pub const BIORTHOGONALITY_TOLERANCE: f64 = 1e-8;
/// Condition number of the eigenvector matrix above which a system is rejected.
pub const CONDITION_LIMIT: f64 = 1e8;
/// Margin used when the requested shift fails positivity.
pub const SHIFT_MARGIN: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpectralDomain {
    pub dim: usize,
    /// Interior points per axis (`M`).
    pub grid_size: usize,
    /// Spectral truncation per axis (`K`).
    pub mode_cutoff: usize,
}

impl SpectralDomain {
    pub fn new(dim: usize, grid_size: usize, mode_cutoff: usize) -> Result<Self> {
        let domain = Self {
            dim,
            grid_size,
            mode_cutoff,
        };
        domain.validate()?;
        Ok(domain)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidDomain("dimension must be at least 1".into()));
        }
        if self.grid_size < 3 {
            return Err(Error::InvalidDomain(format!(
                "grid size {} < 3",
                self.grid_size
            )));
        }
        if self.mode_cutoff == 0 || self.mode_cutoff > self.grid_size {
            return Err(Error::InvalidDomain(format!(
                "mode cutoff {} must lie in 1..={} (modes representable on the grid)",
                self.mode_cutoff, self.grid_size
            )));
        }
        let total = (self.grid_size as f64).powi(self.dim as i32);
        if total > 1e8 {
            return Err(Error::InvalidDomain(format!("{total:.0} grid points is too many")));
        }
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        1.0 / (self.grid_size + 1) as f64
    }

    pub fn n_points(&self) -> usize {
        self.grid_size.pow(self.dim as u32)
    }

    /// Quadrature weight of every grid point.
    pub fn weight(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// Coordinate of 0-based axis index `j`.
    pub fn axis_coordinate(&self, j: usize) -> f64 {
        (j + 1) as f64 * self.spacing()
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim];
        for slot in idx.iter_mut().rev() {
            *slot = flat % self.grid_size;
            flat /= self.grid_size;
        }
        idx
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi.iter().fold(0, |acc, &j| acc * self.grid_size + j)
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat)
            .into_iter()
            .map(|j| self.axis_coordinate(j))
            .collect()
    }

    pub fn sample(&self, f: impl Fn(&[f64]) -> f64) -> GridFunction {
        GridFunction::from_iterator(
            self.n_points(),
            (0..self.n_points()).map(|i| f(&self.point(i))),
        )
    }

    /// `(w Σ |x_j|^p)^{1/p}` with the uniform grid weight.
    pub fn lp_norm(&self, x: &[f64], p: f64) -> f64 {
        weighted_lp_norm(x.iter().map(|v| v.abs()), self.weight(), p)
    }

    pub fn lp_norm_complex(&self, x: &[Complex64], p: f64) -> f64 {
        weighted_lp_norm(x.iter().map(|v| v.norm()), self.weight(), p)
    }

    pub fn inner(&self, x: &[f64], y: &[f64]) -> f64 {
        self.weight() * x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>()
    }
}

pub(crate) fn weighted_lp_norm(abs: impl Iterator<Item = f64>, weight: f64, p: f64) -> f64 {
    if p.is_infinite() {
        return abs.fold(0.0, f64::max);
    }
    if p == 2.0 {
        return (weight * abs.map(|a| a * a).sum::<f64>()).sqrt();
    }
    (weight * abs.map(|a| a.powf(p)).sum::<f64>()).powf(1.0 / p)
}

/// Dirichlet Laplacian multi-indices `k ∈ {1..cutoff}^d`, sorted by `|k|²`
/// (ties broken lexicographically), truncated to `count`.
pub fn laplacian_multi_indices(dim: usize, cutoff: usize, count: usize) -> Vec<Vec<usize>> {
    let total = cutoff.pow(dim as u32);
    let mut all: Vec<Vec<usize>> = (0..total)
        .map(|mut flat| {
            let mut k = vec![0; dim];
            for slot in k.iter_mut().rev() {
                *slot = flat % cutoff + 1;
                flat /= cutoff;
            }
            k
        })
        .collect();
    all.sort_by(|a, b| {
        let na: usize = a.iter().map(|k| k * k).sum();
        let nb: usize = b.iter().map(|k| k * k).sum();
        na.cmp(&nb).then_with(|| a.cmp(b))
    });
    all.truncate(count);
    all
}

/// Unshifted Dirichlet eigenvalue `π² |k|²`.
pub fn laplacian_eigenvalue(k: &[usize]) -> f64 {
    PI * PI * k.iter().map(|&k| (k * k) as f64).sum::<f64>()
}

/// Tensor sine mode `2^{d/2} Π sin(k_i π ξ_i)` sampled on the grid.
pub fn sine_mode(domain: &SpectralDomain, k: &[usize]) -> GridFunction {
    let norm = 2f64.powf(domain.dim as f64 / 2.0);
    let axis: Vec<Vec<f64>> = k
        .iter()
        .map(|&ki| {
            (0..domain.grid_size)
                .map(|j| (ki as f64 * PI * domain.axis_coordinate(j)).sin())
                .collect()
        })
        .collect();
    GridFunction::from_iterator(
        domain.n_points(),
        (0..domain.n_points()).map(|flat| {
            domain
                .multi_index(flat)
                .iter()
                .enumerate()
                .fold(norm, |acc, (axis_no, &j)| acc * axis[axis_no][j])
        }),
    )
}

/// Coefficients of the elliptic operator
/// `(A u)(ξ) = -Σ a_ij ∂_i∂_j u + Σ b_i ∂_i u + c u` (plus the shift `ν̄`).
#[derive(Debug, Clone, PartialEq)]
pub struct EllipticOperatorSpec {
    /// Symmetric diffusion matrix `a(ξ_j)` per grid point.
    pub diffusion: Vec<DMatrix<f64>>,
    /// Drift vector `b(ξ_j)` per grid point.
    pub drift: Vec<DVector<f64>>,
    /// Reaction coefficient `c(ξ_j)` per grid point.
    pub reaction: Vec<f64>,
    /// Ellipticity constant `a0`.
    pub ellipticity: f64,
    /// Integrability exponent `k1` of the drift.
    pub drift_integrability: f64,
    /// Integrability exponent `k2` of the reaction term.
    pub reaction_integrability: f64,
    pub shift: f64,
    /// Fractional exponent `α ∈ (0, 2]` of the drift `A^{α/2}`.
    pub alpha: f64,
}

impl EllipticOperatorSpec {
    /// One-dimensional coefficients. `a0` is taken as the tightest constant the
    /// sampled `a` admits and bounded coefficients are integrable of every order.
    pub fn one_dimensional(a: Vec<f64>, b: Vec<f64>, c: Vec<f64>, shift: f64) -> Self {
        let (lo, hi) = a
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let ellipticity = lo.min(1.0 / hi);
        Self {
            diffusion: a.into_iter().map(|v| DMatrix::from_element(1, 1, v)).collect(),
            drift: b.into_iter().map(|v| DVector::from_element(1, v)).collect(),
            reaction: c,
            ellipticity,
            drift_integrability: f64::INFINITY,
            reaction_integrability: f64::INFINITY,
            shift,
            alpha: 2.0,
        }
    }

    /// `a ≡ 1`, `b ≡ 0`, `c ≡ 0`.
    pub fn laplacian(domain: &SpectralDomain, shift: f64) -> Self {
        let n = domain.n_points();
        Self {
            diffusion: vec![DMatrix::identity(domain.dim, domain.dim); n],
            drift: vec![DVector::zeros(domain.dim); n],
            reaction: vec![0.0; n],
            ellipticity: 1.0,
            drift_integrability: f64::INFINITY,
            reaction_integrability: f64::INFINITY,
            shift,
            alpha: 2.0,
        }
    }

    /// One-dimensional `a(ξ) = 1 + ξ/2`, `b ≡ 0`, `c ≡ 0`.
    pub fn affine_a(domain: &SpectralDomain, shift: f64) -> Result<Self> {
        if domain.dim != 1 {
            return Err(Error::InvalidOperator(
                "affine-a preset is one-dimensional".into(),
            ));
        }
        let n = domain.n_points();
        let a = (0..n).map(|j| 1.0 + domain.axis_coordinate(j) / 2.0).collect();
        Ok(Self::one_dimensional(a, vec![0.0; n], vec![0.0; n], shift))
    }

    pub fn validate(&self, domain: &SpectralDomain) -> Result<()> {
        let n = domain.n_points();
        let d = domain.dim;
        if self.diffusion.len() != n || self.drift.len() != n || self.reaction.len() != n {
            return Err(Error::InvalidOperator(format!(
                "coefficient fields must have {n} grid samples"
            )));
        }
        if !(self.ellipticity > 0.0 && self.ellipticity <= 1.0) {
            return Err(Error::InvalidOperator(format!(
                "ellipticity constant {} must lie in (0, 1]",
                self.ellipticity
            )));
        }
        if !(self.drift_integrability > d as f64) {
            return Err(Error::InvalidOperator(format!(
                "k1 = {} must exceed d = {d}",
                self.drift_integrability
            )));
        }
        if !(self.reaction_integrability > d as f64 / 2.0) {
            return Err(Error::InvalidOperator(format!(
                "k2 = {} must exceed d/2 = {}",
                self.reaction_integrability,
                d as f64 / 2.0
            )));
        }
        if !(self.alpha > 0.0 && self.alpha <= 2.0) {
            return Err(Error::InvalidOperator(format!(
                "alpha = {} must lie in (0, 2]",
                self.alpha
            )));
        }
        if !(self.shift >= 0.0 && self.shift.is_finite()) {
            return Err(Error::InvalidOperator(format!(
                "shift {} must be finite and non-negative",
                self.shift
            )));
        }
        let a0 = self.ellipticity;
        for (j, a) in self.diffusion.iter().enumerate() {
            if a.nrows() != d || a.ncols() != d || a.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidOperator(format!(
                    "diffusion at grid point {j} is not a finite {d}x{d} matrix"
                )));
            }
            if (a - a.transpose()).amax() > 1e-12 * a.amax().max(1.0) {
                return Err(Error::InvalidOperator(format!(
                    "diffusion at grid point {j} is not symmetric"
                )));
            }
            let eig = a.clone().symmetric_eigen().eigenvalues;
            let (lo, hi) = (eig.min(), eig.max());
            let slack = 1e-12;
            if lo < a0 - slack || hi > 1.0 / a0 + slack {
                return Err(Error::InvalidOperator(format!(
                    "ellipticity fails at grid point {j}: quadratic form range [{lo}, {hi}] \
                     outside [{a0}, {}]",
                    1.0 / a0
                )));
            }
        }
        for (j, (b, c)) in self.drift.iter().zip(&self.reaction).enumerate() {
            if b.len() != d || b.iter().any(|v| !v.is_finite()) || !c.is_finite() {
                return Err(Error::InvalidOperator(format!(
                    "drift/reaction at grid point {j} is not finite"
                )));
            }
        }
        Ok(())
    }
}

/// Spectral data of the (shifted) discretized operator.
///
/// Mode coefficients of a grid function `x` are `c_k = w Σ_j dual_k(ξ_j) x_j`
/// (bilinear, no conjugation), so bi-orthogonality reads
/// `w Σ_j dual_k(ξ_j) mode_l(ξ_j) = δ_kl`.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    domain: SpectralDomain,
    eigenvalues: Vec<Complex64>,
    modes: DMatrix<Complex64>,
    duals: DMatrix<Complex64>,
    selfadjoint: bool,
    requested_shift: f64,
    shift: f64,
    multi_indices: Option<Vec<Vec<usize>>>,
    real_modes: Option<DMatrix<f64>>,
    real_duals: Option<DMatrix<f64>>,
}

impl EigenSystem {
    #[allow(clippy::too_many_arguments)]
    fn assemble(
        domain: SpectralDomain,
        eigenvalues: Vec<Complex64>,
        modes: DMatrix<Complex64>,
        duals: DMatrix<Complex64>,
        selfadjoint: bool,
        requested_shift: f64,
        shift: f64,
        multi_indices: Option<Vec<Vec<usize>>>,
    ) -> Self {
        let real = eigenvalues.iter().all(|l| l.im == 0.0)
            && modes.iter().all(|v| v.im == 0.0)
            && duals.iter().all(|v| v.im == 0.0);
        let (real_modes, real_duals) = if real {
            (Some(modes.map(|v| v.re)), Some(duals.map(|v| v.re)))
        } else {
            (None, None)
        };
        Self {
            domain,
            eigenvalues,
            modes,
            duals,
            selfadjoint,
            requested_shift,
            shift,
            multi_indices,
            real_modes,
            real_duals,
        }
    }

    /// Sine-mode system for the `eigenvalues.len()` lowest Laplacian modes with
    /// prescribed (positive) eigenvalues. Used for synthetic spectra.
    pub fn with_spectrum(domain: SpectralDomain, eigenvalues: &[f64]) -> Result<Self> {
        domain.validate()?;
        let available = domain.mode_cutoff.pow(domain.dim as u32);
        if eigenvalues.is_empty() || eigenvalues.len() > available {
            return Err(Error::InvalidOperator(format!(
                "{} eigenvalues requested, {available} modes available",
                eigenvalues.len()
            )));
        }
        if let Some(bad) = eigenvalues.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidOperator(format!(
                "eigenvalue {bad} is not positive"
            )));
        }
        let indices = laplacian_multi_indices(domain.dim, domain.mode_cutoff, eigenvalues.len());
        let modes = sine_matrix(&domain, &indices).map(|v| Complex64::new(v, 0.0));
        Ok(Self::assemble(
            domain,
            eigenvalues.iter().map(|&l| Complex64::new(l, 0.0)).collect(),
            modes.clone(),
            modes,
            true,
            0.0,
            0.0,
            Some(indices),
        ))
    }

    pub fn domain(&self) -> &SpectralDomain {
        &self.domain
    }

    pub fn eigenvalues(&self) -> &[Complex64] {
        &self.eigenvalues
    }

    /// `n_points × n_modes` matrix of mode samples.
    pub fn modes(&self) -> &DMatrix<Complex64> {
        &self.modes
    }

    pub fn duals(&self) -> &DMatrix<Complex64> {
        &self.duals
    }

    /// Real mode matrix when the whole system is real.
    pub fn real_modes(&self) -> Option<&DMatrix<f64>> {
        self.real_modes.as_ref()
    }

    pub fn real_duals(&self) -> Option<&DMatrix<f64>> {
        self.real_duals.as_ref()
    }

    pub fn mode(&self, k: usize) -> GridFunction {
        self.modes.column(k).map(|v| v.re)
    }

    pub fn n_modes(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_selfadjoint(&self) -> bool {
        self.selfadjoint
    }

    pub fn is_real(&self) -> bool {
        self.real_modes.is_some()
    }

    /// Shift actually applied (may exceed the requested one).
    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn requested_shift(&self) -> f64 {
        self.requested_shift
    }

    /// Laplacian multi-indices of the modes, for sine-mode systems.
    pub fn multi_indices(&self) -> Option<&[Vec<usize>]> {
        self.multi_indices.as_deref()
    }

    pub fn min_real_eigenvalue(&self) -> f64 {
        self.eigenvalues.iter().map(|l| l.re).fold(f64::INFINITY, f64::min)
    }

    pub fn project(&self, x: &[f64]) -> DVector<Complex64> {
        let w = self.domain.weight();
        match &self.real_duals {
            Some(duals) => {
                let xv = DVector::from_column_slice(x);
                (duals.tr_mul(&xv) * w).map(|v| Complex64::new(v, 0.0))
            }
            None => {
                let xv = DVector::from_iterator(x.len(), x.iter().map(|&v| Complex64::new(v, 0.0)));
                self.duals.tr_mul(&xv) * Complex64::new(w, 0.0)
            }
        }
    }

    pub fn project_complex(&self, x: &[Complex64]) -> DVector<Complex64> {
        let xv = DVector::from_column_slice(x);
        self.duals.tr_mul(&xv) * Complex64::new(self.domain.weight(), 0.0)
    }

    pub fn synthesize(&self, coefficients: &DVector<Complex64>) -> DVector<Complex64> {
        &self.modes * coefficients
    }

    /// `Σ_k f(λ_k) ⟨dual_k, x⟩ mode_k`.
    pub fn apply_multiplier(
        &self,
        x: &[f64],
        f: impl Fn(Complex64) -> Complex64,
    ) -> DVector<Complex64> {
        let mut c = self.project(x);
        for (ck, lambda) in c.iter_mut().zip(&self.eigenvalues) {
            *ck *= f(*lambda);
        }
        self.synthesize(&c)
    }

    /// Spectral projection onto the resolved modes.
    pub fn spectral_projection(&self, x: &[f64]) -> GridFunction {
        self.apply_multiplier(x, |_| Complex64::new(1.0, 0.0)).map(|v| v.re)
    }

    /// `A x` on the resolved subspace.
    pub fn apply_operator(&self, x: &[f64]) -> GridFunction {
        self.apply_multiplier(x, |l| l).map(|v| v.re)
    }

    /// `S_t x = Σ_k e^{-λ_k t} ⟨dual_k, x⟩ mode_k`.
    pub fn apply_semigroup(&self, t: f64, x: &[f64]) -> Result<GridFunction> {
        if !(t >= 0.0) {
            return Err(Error::Precondition(format!("semigroup time {t} must be >= 0")));
        }
        Ok(self.apply_multiplier(x, |l| (-l * t).exp()).map(|v| v.re))
    }

    /// Largest `|w Σ dual_k mode_l − δ_kl|`.
    pub fn biorthogonality_residual(&self) -> f64 {
        let gram = self.duals.tr_mul(&self.modes) * Complex64::new(self.domain.weight(), 0.0);
        let n = gram.nrows();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((gram[(i, j)] - Complex64::new(target, 0.0)).norm());
            }
        }
        worst
    }
}

fn sine_matrix(domain: &SpectralDomain, indices: &[Vec<usize>]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(domain.n_points(), indices.len());
    for (col, k) in indices.iter().enumerate() {
        m.set_column(col, &sine_mode(domain, k));
    }
    m
}

/// Closed-form Dirichlet Laplacian spectrum `ν̄ + π²|k|²` with tensor-sine
/// modes for `1 ≤ k_i ≤ K`, ordered by eigenvalue.
pub fn build_laplacian_system(domain: SpectralDomain, shift: f64) -> Result<EigenSystem> {
    domain.validate()?;
    if !(shift >= 0.0 && shift.is_finite()) {
        return Err(Error::InvalidOperator(format!(
            "shift {shift} must be finite and non-negative"
        )));
    }
    let count = domain.mode_cutoff.pow(domain.dim as u32);
    let indices = laplacian_multi_indices(domain.dim, domain.mode_cutoff, count);
    let eigenvalues = indices
        .iter()
        .map(|k| Complex64::new(shift + laplacian_eigenvalue(k), 0.0))
        .collect();
    let modes = sine_matrix(&domain, &indices).map(|v| Complex64::new(v, 0.0));
    Ok(EigenSystem::assemble(
        domain,
        eigenvalues,
        modes.clone(),
        modes,
        true,
        shift,
        shift,
        Some(indices),
    ))
}

/// Second-order central finite-difference matrix of
/// `-a u'' + b u' + (c + ν̄) u` on the interior points (Dirichlet rows removed).
pub fn finite_difference_matrix(domain: &SpectralDomain, spec: &EllipticOperatorSpec) -> DMatrix<f64> {
    let m = domain.grid_size;
    let h = domain.spacing();
    let mut a = DMatrix::zeros(m, m);
    for j in 0..m {
        let aj = spec.diffusion[j][(0, 0)];
        let bj = spec.drift[j][0];
        a[(j, j)] = 2.0 * aj / (h * h) + spec.reaction[j] + spec.shift;
        if j + 1 < m {
            a[(j, j + 1)] = -aj / (h * h) + bj / (2.0 * h);
        }
        if j > 0 {
            a[(j, j - 1)] = -aj / (h * h) - bj / (2.0 * h);
        }
    }
    a
}

/// Dense eigen-decomposition of the one-dimensional variable-coefficient
/// operator, keeping the `K` modes of smallest real part.
///
/// If the requested shift leaves an eigenvalue with non-positive real part the
/// shift is raised so that the smallest real part equals [`SHIFT_MARGIN`].
pub fn build_variable_coefficient_system(
    domain: SpectralDomain,
    spec: &EllipticOperatorSpec,
) -> Result<EigenSystem> {
    domain.validate()?;
    if domain.dim != 1 {
        return Err(Error::InvalidOperator(
            "variable coefficients are supported for d = 1 only".into(),
        ));
    }
    spec.validate(&domain)?;
    let matrix = finite_difference_matrix(&domain, spec);
    let m = domain.grid_size;
    let w = domain.weight();
    let symmetric = (&matrix - matrix.transpose()).amax() == 0.0;

    let (mut eigenvalues, modes, duals) = if symmetric {
        let eig = matrix.symmetric_eigen();
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let scale = 1.0 / w.sqrt();
        let mut modes = DMatrix::<Complex64>::zeros(m, m);
        let mut values = Vec::with_capacity(m);
        for (col, &i) in order.iter().enumerate() {
            values.push(Complex64::new(eig.eigenvalues[i], 0.0));
            let v = eig.eigenvectors.column(i);
            let sign = if v.iter().fold(0.0, |acc: f64, x| if x.abs() > acc.abs() { *x } else { acc }) < 0.0 {
                -1.0
            } else {
                1.0
            };
            for r in 0..m {
                modes[(r, col)] = Complex64::new(sign * scale * v[r], 0.0);
            }
        }
        (values, modes.clone(), modes)
    } else {
        general_eigensystem(&matrix, w)?
    };

    let min_re = eigenvalues.iter().map(|l| l.re).fold(f64::INFINITY, f64::min);
    let mut shift = spec.shift;
    if min_re <= 0.0 {
        let bump = SHIFT_MARGIN - min_re;
        shift += bump;
        log::warn!(
            "requested shift {} fails positivity (min Re λ = {min_re:.6e}); using {shift:.6e}",
            spec.shift
        );
        for l in eigenvalues.iter_mut() {
            *l += bump;
        }
    }

    let keep = domain.mode_cutoff;
    eigenvalues.truncate(keep);
    let modes = modes.columns(0, keep).into_owned();
    let duals = duals.columns(0, keep).into_owned();
    let system = EigenSystem::assemble(
        domain, eigenvalues, modes, duals, symmetric, spec.shift, shift, None,
    );
    let residual = system.biorthogonality_residual();
    if residual > BIORTHOGONALITY_TOLERANCE {
        return Err(Error::BiOrthogonality {
            residual,
            tolerance: BIORTHOGONALITY_TOLERANCE,
        });
    }
    Ok(system)
}

type Decomposition = (Vec<Complex64>, DMatrix<Complex64>, DMatrix<Complex64>);

/// General real matrix: right eigenvectors from a dense complex EVD, duals
/// from the inverse of the (column-normalized) eigenvector matrix.
fn general_eigensystem(matrix: &DMatrix<f64>, weight: f64) -> Result<Decomposition> {
    let m = matrix.nrows();
    let fm = faer::Mat::<f64>::from_fn(m, m, |i, j| matrix[(i, j)]);
    let evd = fm
        .eigen()
        .map_err(|e| Error::InvalidOperator(format!("eigen-decomposition failed: {e:?}")))?;
    let s = evd.S().column_vector();
    let u = evd.U();
    let raw_values: Vec<Complex64> = (0..m).map(|i| Complex64::new(s[i].re, s[i].im)).collect();

    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| {
        raw_values[i]
            .re
            .total_cmp(&raw_values[j].re)
            .then(raw_values[i].im.total_cmp(&raw_values[j].im))
    });

    let scale = weight.sqrt();
    let mut values = Vec::with_capacity(m);
    let mut modes = DMatrix::<Complex64>::zeros(m, m);
    for (col, &i) in order.iter().enumerate() {
        values.push(raw_values[i]);
        let v: Vec<Complex64> = (0..m).map(|r| Complex64::new(u[(r, i)].re, u[(r, i)].im)).collect();
        // unit grid-L² norm, phase fixed so the largest entry is real positive
        let norm = (v.iter().map(|z| z.norm_sqr()).sum::<f64>()).sqrt() * scale;
        let pivot = v
            .iter()
            .copied()
            .fold(Complex64::new(0.0, 0.0), |acc, z| if z.norm() > acc.norm() { z } else { acc });
        let phase = pivot.conj() / pivot.norm();
        for r in 0..m {
            modes[(r, col)] = v[r] * phase / norm;
        }
    }
    enforce_conjugate_pairs(&mut values, &mut modes);

    let condition = condition_number(&modes);
    if !(condition <= CONDITION_LIMIT) {
        return Err(Error::IllConditioned { condition });
    }
    let inverse = modes
        .clone()
        .try_inverse()
        .ok_or(Error::IllConditioned { condition: f64::INFINITY })?;
    // c_k = Σ_j inverse[k, j] x_j = w Σ_j dual_k(ξ_j) x_j
    let duals = inverse.transpose() / Complex64::new(weight, 0.0);
    Ok((values, modes, duals))
}

/// Makes conjugate eigenvalue pairs carry exactly conjugate data so that
/// real inputs synthesize to real outputs.
fn enforce_conjugate_pairs(values: &mut [Complex64], modes: &mut DMatrix<Complex64>) {
    let n = values.len();
    let scale = values.iter().map(|l| l.norm()).fold(1.0, f64::max);
    let mut used = vec![false; n];
    for i in 0..n {
        if used[i] {
            continue;
        }
        used[i] = true;
        if values[i].im.abs() <= 1e-12 * scale {
            values[i].im = 0.0;
            continue;
        }
        let target = values[i].conj();
        let partner = (0..n)
            .filter(|&j| !used[j])
            .min_by(|&a, &b| (values[a] - target).norm().total_cmp(&(values[b] - target).norm()));
        if let Some(j) = partner {
            used[j] = true;
            values[j] = target;
            let col = modes.column(i).map(|z| z.conj());
            modes.set_column(j, &col);
        }
    }
}

fn condition_number(modes: &DMatrix<Complex64>) -> f64 {
    let sv = modes.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_grid(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn rejects_cutoff_beyond_grid() {
        assert!(SpectralDomain::new(1, 8, 9).is_err());
        assert!(SpectralDomain::new(1, 2, 1).is_err());
        assert!(SpectralDomain::new(0, 8, 4).is_err());
        let bad = SpectralDomain {
            dim: 1,
            grid_size: 8,
            mode_cutoff: 9,
        };
        assert!(build_laplacian_system(bad, 0.0).is_err());
    }

    #[test]
    fn laplacian_ground_mode_d1() {
        let domain = SpectralDomain::new(1, 255, 16).unwrap();
        let sys = build_laplacian_system(domain, 0.0).unwrap();
        assert!((sys.eigenvalues()[0].re - PI * PI).abs() < 1e-12);
        let mode = sys.mode(0);
        for j in 0..255 {
            let xi = domain.axis_coordinate(j);
            assert!((mode[j] - 2f64.sqrt() * (PI * xi).sin()).abs() < 1e-12);
        }
    }

    #[test]
    fn laplacian_d2_tensorizes() {
        let domain = SpectralDomain::new(2, 8, 2).unwrap();
        let sys = build_laplacian_system(domain, 0.0).unwrap();
        assert_eq!(sys.n_modes(), 4);
        assert!((sys.eigenvalues()[0].re - 2.0 * PI * PI).abs() < 1e-12);
        assert_eq!(sys.multi_indices().unwrap()[0], vec![1, 1]);
        assert!((sys.eigenvalues()[3].re - 8.0 * PI * PI).abs() < 1e-12);
    }

    #[test]
    fn shift_is_additive() {
        let domain = SpectralDomain::new(1, 31, 8).unwrap();
        let plain = build_laplacian_system(domain, 0.0).unwrap();
        let shifted = build_laplacian_system(domain, 5.0).unwrap();
        for (a, b) in plain.eigenvalues().iter().zip(shifted.eigenvalues()) {
            assert_eq!(b.re - a.re, 5.0);
        }
    }

    #[test]
    fn sine_modes_orthonormal_on_grid() {
        for (d, m, k) in [(1, 255, 16), (2, 12, 5)] {
            let domain = SpectralDomain::new(d, m, k).unwrap();
            let sys = build_laplacian_system(domain, 0.0).unwrap();
            assert!(sys.biorthogonality_residual() < 1e-8);
        }
    }

    #[test]
    fn semigroup_identities() {
        let domain = SpectralDomain::new(1, 63, 16).unwrap();
        let sys = build_laplacian_system(domain, 0.0).unwrap();
        let m3 = sys.mode(2);
        let at0 = sys.apply_semigroup(0.0, m3.as_slice()).unwrap();
        assert!((&at0 - &m3).amax() < 1e-12);
        let m1 = sys.mode(0);
        let at1 = sys.apply_semigroup(1.0, m1.as_slice()).unwrap();
        let expected = &m1 * (-sys.eigenvalues()[0].re).exp();
        assert!((&at1 - &expected).amax() < 1e-15);
        assert!(sys.apply_semigroup(-1.0, m1.as_slice()).is_err());
    }

    #[test]
    fn semigroup_contracts_at_rate_of_smallest_eigenvalue() {
        let domain = SpectralDomain::new(1, 63, 16).unwrap();
        let sys = build_laplacian_system(domain, 0.0).unwrap();
        let lmin = sys.min_real_eigenvalue();
        for seed in 0..10 {
            let x = sys.spectral_projection(&random_grid(63, seed));
            let t = 0.01 * seed as f64;
            let y = sys.apply_semigroup(t, x.as_slice()).unwrap();
            let lhs = domain.lp_norm(y.as_slice(), 2.0);
            let rhs = (-lmin * t).exp() * domain.lp_norm(x.as_slice(), 2.0);
            assert!(lhs <= rhs * (1.0 + 1e-12));
        }
    }

    #[test]
    fn constant_coefficient_fd_matches_closed_form_with_refinement() {
        let mut previous = f64::INFINITY;
        for m in [31, 63, 127, 255] {
            let domain = SpectralDomain::new(1, m, 4).unwrap();
            let spec = EllipticOperatorSpec::laplacian(&domain, 0.0);
            let fd = build_variable_coefficient_system(domain, &spec).unwrap();
            assert!(fd.is_selfadjoint());
            let err = (fd.eigenvalues()[0].re - PI * PI).abs() / (PI * PI);
            assert!(err < previous);
            // second-order accuracy: error ≈ (π h)² / 12
            let h = domain.spacing();
            assert!(err < (PI * h).powi(2) / 12.0 * 1.01);
            previous = err;
        }
        assert!(previous < 1e-4);
    }

    #[test]
    fn reaction_shifts_spectrum() {
        let domain = SpectralDomain::new(1, 63, 8).unwrap();
        let n = domain.n_points();
        let base = EllipticOperatorSpec::one_dimensional(vec![1.0; n], vec![0.0; n], vec![0.0; n], 0.0);
        let plus = EllipticOperatorSpec::one_dimensional(vec![1.0; n], vec![0.0; n], vec![7.0; n], 0.0);
        let a = build_variable_coefficient_system(domain, &base).unwrap();
        let b = build_variable_coefficient_system(domain, &plus).unwrap();
        for (x, y) in a.eigenvalues().iter().zip(b.eigenvalues()) {
            assert!((y.re - x.re - 7.0).abs() < 1e-9);
        }
    }

    #[test]
    fn affine_diffusion_ground_state_is_bracketed() {
        let domain = SpectralDomain::new(1, 127, 8).unwrap();
        let spec = EllipticOperatorSpec::affine_a(&domain, 0.0).unwrap();
        let sys = build_variable_coefficient_system(domain, &spec).unwrap();
        assert!(!sys.is_selfadjoint());
        assert!(sys.is_real());
        for l in sys.eigenvalues() {
            assert!(l.im == 0.0 && l.re > 0.0);
        }
        // comparison with the constant-coefficient operators a ≡ 1 and a ≡ 1.5
        let fd = |a: f64| {
            let n = domain.n_points();
            let s = EllipticOperatorSpec::one_dimensional(vec![a; n], vec![0.0; n], vec![0.0; n], 0.0);
            build_variable_coefficient_system(domain, &s).unwrap().eigenvalues()[0].re
        };
        let ground = sys.eigenvalues()[0].re;
        assert!(ground > fd(1.0) && ground < fd(1.5));
        assert!(ground > PI * PI * 0.99 && ground < 1.5 * PI * PI);
        assert!(sys.biorthogonality_residual() < 1e-10);
    }

    #[test]
    fn strong_advection_gives_complex_conjugate_spectrum() {
        let domain = SpectralDomain::new(1, 7, 7).unwrap();
        let n = domain.n_points();
        // |b| h / 2 > a makes the off-diagonal products negative
        let spec = EllipticOperatorSpec::one_dimensional(vec![1.0; n], vec![40.0; n], vec![0.0; n], 0.0);
        let sys = build_variable_coefficient_system(domain, &spec).unwrap();
        assert!(!sys.is_real());
        assert!(sys.eigenvalues().iter().any(|l| l.im.abs() > 1e-6));
        for l in sys.eigenvalues() {
            assert!(l.re > 0.0);
            assert!(sys
                .eigenvalues()
                .iter()
                .any(|m| (m - l.conj()).norm() <= 1e-9 * l.norm()));
        }
        assert!(sys.biorthogonality_residual() < 1e-10);
        // real input stays real under the semigroup
        let x = random_grid(n, 3);
        let y = sys.apply_multiplier(&x, |l| (-l * 0.01).exp());
        assert!(y.iter().all(|v| v.im.abs() < 1e-10));
    }

    #[test]
    fn negative_reaction_triggers_auto_shift() {
        let domain = SpectralDomain::new(1, 31, 8).unwrap();
        let n = domain.n_points();
        let spec = EllipticOperatorSpec::one_dimensional(vec![1.0; n], vec![0.0; n], vec![-50.0; n], 0.0);
        let sys = build_variable_coefficient_system(domain, &spec).unwrap();
        assert!((sys.min_real_eigenvalue() - SHIFT_MARGIN).abs() < 1e-9);
        assert!(sys.shift() > 40.0);
        assert_eq!(sys.requested_shift(), 0.0);
    }

    #[test]
    fn operator_validation_catches_bad_inputs() {
        let domain = SpectralDomain::new(1, 15, 4).unwrap();
        let n = domain.n_points();
        let mut spec = EllipticOperatorSpec::laplacian(&domain, 0.0);
        spec.alpha = 2.5;
        assert!(spec.validate(&domain).is_err());
        let mut spec = EllipticOperatorSpec::laplacian(&domain, 0.0);
        spec.drift_integrability = 1.0;
        assert!(spec.validate(&domain).is_err());
        let mut spec = EllipticOperatorSpec::laplacian(&domain, 0.0);
        spec.reaction_integrability = 0.5;
        assert!(spec.validate(&domain).is_err());
        let spec = EllipticOperatorSpec::one_dimensional(vec![4.0; n], vec![0.0; n], vec![0.0; n], 0.0);
        assert!((spec.ellipticity - 0.25).abs() < 1e-15);
        assert!(spec.validate(&domain).is_ok());
        let mut spec = spec;
        spec.ellipticity = 0.5;
        assert!(spec.validate(&domain).is_err());
        let d2 = SpectralDomain::new(2, 6, 3).unwrap();
        let mut spec = EllipticOperatorSpec::laplacian(&d2, 0.0);
        spec.diffusion[3][(0, 1)] = 0.3;
        assert!(spec.validate(&d2).is_err());
        assert!(build_variable_coefficient_system(d2, &EllipticOperatorSpec::laplacian(&d2, 0.0)).is_err());
    }

    #[test]
    fn multi_index_round_trip() {
        let domain = SpectralDomain::new(3, 5, 2).unwrap();
        for flat in [0, 7, 124] {
            assert_eq!(domain.flat_index(&domain.multi_index(flat)), flat);
        }
    }
}
