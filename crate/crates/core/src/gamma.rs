//! Monte-Carlo γ-radonifying norms of finite-rank operators `R: H → E`.
//!
//! `H` is represented by coefficient vectors in a fixed orthonormal basis, so
//! `R` is a matrix whose columns are the images `R e_k`. `E` is either a
//! Euclidean space or the grid `L^p` space with midpoint weights.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::CameronMartinBasis;
use crate::rng::stream_rng;
use crate::spectral::{weighted_lp_norm, GridFunction, SpectralDomain};
use crate::stats;

pub const JACKKNIFE_BLOCKS: usize = 20;
pub const MIN_SAMPLES: usize = 100;
const BATCH: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "target")]
pub enum TargetNorm {
    /// Unweighted Euclidean norm.
    Hilbert,
    /// `(w Σ |x_j|^p)^{1/p}`.
    GridLp { p: f64, weight: f64 },
}

impl TargetNorm {
    pub fn grid(domain: &SpectralDomain, p: f64) -> Self {
        Self::GridLp { p, weight: domain.weight() }
    }

    pub fn norm(&self, x: &[f64]) -> f64 {
        match *self {
            Self::Hilbert => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
            Self::GridLp { p, weight } => weighted_lp_norm(x.iter().map(|v| v.abs()), weight, p),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Self::Hilbert => Ok(()),
            Self::GridLp { p, weight } if p >= 2.0 && weight > 0.0 => Ok(()),
            Self::GridLp { p, .. } => Err(Error::Precondition(format!("grid L^p target needs p >= 2, got {p}"))),
        }
    }

    /// Exponent of the target (2 for Hilbert).
    pub fn exponent(&self) -> f64 {
        match *self {
            Self::Hilbert => 2.0,
            Self::GridLp { p, .. } => p,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperatorKind {
    IdentityEmbedding,
    Multiplication,
    GenericMatrix,
}

/// `R` as the matrix `[R e_1 | … | R e_N]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteRankOperator {
    pub kind: OperatorKind,
    matrix: DMatrix<f64>,
}

impl FiniteRankOperator {
    pub fn identity(n: usize) -> Self {
        Self {
            kind: OperatorKind::IdentityEmbedding,
            matrix: DMatrix::identity(n, n),
        }
    }

    pub fn zero(n_out: usize, input_dim: usize) -> Self {
        Self::from_matrix(DMatrix::zeros(n_out, input_dim))
    }

    /// `y ↦ [e_1, y] f`.
    pub fn rank_one(f: &GridFunction, input_dim: usize) -> Self {
        let mut matrix = DMatrix::zeros(f.len(), input_dim.max(1));
        matrix.set_column(0, f);
        Self::from_matrix(matrix)
    }

    pub fn from_matrix(matrix: DMatrix<f64>) -> Self {
        Self {
            kind: OperatorKind::GenericMatrix,
            matrix,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn apply(&self, y: &[f64]) -> DVector<f64> {
        &self.matrix * DVector::from_column_slice(y)
    }

    /// Same operator expressed in the rotated basis `e'_j = Σ_k Q_kj e_k`.
    pub fn rotated(&self, q: &DMatrix<f64>) -> Self {
        Self {
            kind: self.kind,
            matrix: &self.matrix * q,
        }
    }

    /// `S2 R S1`.
    pub fn compose(&self, s2: &DMatrix<f64>, s1: &DMatrix<f64>) -> Self {
        Self::from_matrix(s2 * &self.matrix * s1)
    }

    /// Spot-checks `R(ay + bz) = aRy + bRz` on random pairs; returns the
    /// largest relative defect.
    pub fn linearity_defect(&self, trials: usize, seed: u64) -> f64 {
        let mut rng = stream_rng(seed, 0, 0);
        let n = self.input_dim();
        let mut worst: f64 = 0.0;
        for _ in 0..trials {
            let y: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            let (a, b): (f64, f64) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let mix: Vec<f64> = y.iter().zip(&z).map(|(u, v)| a * u + b * v).collect();
            let lhs = self.apply(&mix);
            let rhs = self.apply(&y) * a + self.apply(&z) * b;
            let scale = lhs.amax().max(rhs.amax()).max(1.0);
            worst = worst.max((lhs - rhs).amax() / scale);
        }
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaNormEstimate {
    pub value: f64,
    pub samples: usize,
    pub truncation: usize,
    /// Jackknife standard error of `value²`.
    pub std_error: f64,
}

impl GammaNormEstimate {
    /// Delta-method error of `value` itself.
    pub fn value_std_error(&self) -> f64 {
        if self.value > 0.0 {
            self.std_error / (2.0 * self.value)
        } else {
            0.0
        }
    }

    pub fn relative_std_error(&self) -> f64 {
        if self.value > 0.0 {
            self.value_std_error() / self.value
        } else {
            0.0
        }
    }
}

/// `sqrt(E |Σ_k γ_k R e_k|²_E)` from `samples` i.i.d. Gaussian draws.
pub fn mc_gamma_norm(r: &FiniteRankOperator, target: TargetNorm, samples: usize, seed: u64) -> Result<GammaNormEstimate> {
    if samples < MIN_SAMPLES {
        return Err(Error::Precondition(format!("need at least {MIN_SAMPLES} samples, got {samples}")));
    }
    target.validate()?;
    let n = r.input_dim();
    let mut rng = stream_rng(seed, 0, 0);
    let mut squares = Vec::with_capacity(samples);
    let mut start = 0;
    while start < samples {
        let b = BATCH.min(samples - start);
        let gauss = DMatrix::from_fn(n, b, |_, _| StandardNormal.sample(&mut rng));
        let images = r.matrix() * gauss;
        for (j, col) in images.column_iter().enumerate() {
            let v = target.norm(col.as_slice());
            if !v.is_finite() {
                return Err(Error::NonFinite { sample: start + j });
            }
            squares.push(v * v);
        }
        start += b;
    }
    Ok(GammaNormEstimate {
        value: stats::mean(&squares).sqrt(),
        samples,
        truncation: n,
        std_error: stats::jackknife_mean_error(&squares, JACKKNIFE_BLOCKS),
    })
}

/// Haar-distributed orthogonal matrix (QR of a Gaussian matrix, signs fixed).
pub fn random_orthogonal(n: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = stream_rng(seed, 0, 1);
    let a = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng));
    let qr = a.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Largest singular value by power iteration on `SᵀS`.
pub fn spectral_norm(s: &DMatrix<f64>, tolerance: f64) -> f64 {
    if s.is_empty() || s.amax() == 0.0 {
        return 0.0;
    }
    let sts = s.transpose() * s;
    let mut v = DVector::from_fn(s.ncols(), |i, _| 1.0 + 0.01 * i as f64);
    v /= v.norm();
    let mut estimate = 0.0;
    for _ in 0..10_000 {
        let mut w = &sts * &v;
        let norm = w.norm();
        if norm == 0.0 {
            // start vector in the kernel; restart along the largest column
            let (j, _) = sts.column_iter().enumerate().fold((0, 0.0), |acc, (j, c)| {
                if c.norm() > acc.1 {
                    (j, c.norm())
                } else {
                    acc
                }
            });
            v = DVector::zeros(s.ncols());
            v[j] = 1.0;
            continue;
        }
        w /= norm;
        let done = (norm - estimate).abs() <= tolerance * norm;
        estimate = norm;
        v = w;
        if done {
            break;
        }
    }
    estimate.sqrt()
}

/// `‖S‖` on the target space: exact spectral norm for Hilbert and grid `L²`
/// (uniform weights cancel), otherwise the Riesz–Thorin bound
/// `max(‖S‖_{1→1}, ‖S‖_{∞→∞})`, valid for every `p ∈ [1, ∞]`.
pub fn target_operator_norm(s: &DMatrix<f64>, target: TargetNorm) -> f64 {
    match target {
        TargetNorm::Hilbert => spectral_norm(s, 1e-8),
        TargetNorm::GridLp { p, .. } if p == 2.0 => spectral_norm(s, 1e-8),
        TargetNorm::GridLp { .. } => {
            let one = s.column_iter().map(|c| c.abs().sum()).fold(0.0, f64::max);
            let inf = s.row_iter().map(|r| r.abs().sum()).fold(0.0, f64::max);
            one.max(inf)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdealReport {
    pub left: GammaNormEstimate,
    pub right: f64,
    pub right_std_error: f64,
    pub s1_norm: f64,
    pub s2_norm: f64,
    /// `right · (1 + 3 · combined relative error)`.
    pub allowed: f64,
}

/// `‖S2 R S1‖_γ ≤ ‖S2‖ ‖R‖_γ ‖S1‖`, both sides estimated by Monte Carlo.
pub fn check_ideal_property(
    s2: &DMatrix<f64>,
    r: &FiniteRankOperator,
    s1: &DMatrix<f64>,
    target: TargetNorm,
    samples: usize,
    seed: u64,
) -> Result<IdealReport> {
    if s2.ncols() != r.output_dim() || s1.nrows() != r.input_dim() {
        return Err(Error::Precondition("S2 R S1 dimensions do not chain".into()));
    }
    let s1_norm = spectral_norm(s1, 1e-8);
    let s2_norm = target_operator_norm(s2, target);
    let left = mc_gamma_norm(&r.compose(s2, s1), target, samples, seed)?;
    let middle = mc_gamma_norm(r, target, samples, seed.wrapping_add(0x9e37_79b9))?;
    let right = s2_norm * middle.value * s1_norm;
    let combined = left.relative_std_error().hypot(middle.relative_std_error());
    let allowed = right * (1.0 + 3.0 * combined);
    if left.value > allowed {
        return Err(Error::IdealViolated {
            left: left.value,
            right,
            allowed,
        });
    }
    Ok(IdealReport {
        left,
        right,
        right_std_error: s2_norm * middle.value_std_error() * s1_norm,
        s1_norm,
        s2_norm,
        allowed,
    })
}

/// `R y = g · Σ_k y_k h_k` for the Cameron–Martin vectors `h_k`.
#[derive(Debug, Clone)]
pub struct MultiplicationOperator<'a> {
    pub basis: &'a CameronMartinBasis,
    pub g: GridFunction,
}

impl MultiplicationOperator<'_> {
    pub fn to_finite_rank(&self) -> FiniteRankOperator {
        let mut matrix = self.basis.vectors().clone();
        for (mut row, g) in matrix.row_iter_mut().zip(self.g.iter()) {
            row *= *g;
        }
        FiniteRankOperator {
            kind: OperatorKind::Multiplication,
            matrix,
        }
    }

    /// `sup_{|y|_H ≤ 1} |(Ry)(ξ)| = |g(ξ)| · |(h_k(ξ))_k|₂`, exact by
    /// Cauchy–Schwarz.
    pub fn envelope(&self) -> GridFunction {
        let v = self.basis.vectors();
        GridFunction::from_fn(v.nrows(), |j, _| self.g[j].abs() * v.row(j).norm())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominationReport {
    pub mc_norm: GammaNormEstimate,
    pub g_norm: f64,
    /// `mc_norm / |g|_p`; zero when both vanish.
    pub ratio: f64,
    /// Largest `|(Ry)(ξ)|` seen over random unit `y`, divided by the envelope.
    pub brute_force_fill: f64,
}

/// Checks `|(Ry)(ξ)| ≤ g(ξ)` on the unit ball and measures `‖R‖_γ / |g|_p`.
pub fn check_domination_bound(
    r: &MultiplicationOperator<'_>,
    g_dom: &GridFunction,
    p: f64,
    samples: usize,
    seed: u64,
) -> Result<DominationReport> {
    let domain = r.basis.domain();
    let envelope = r.envelope();
    if g_dom.len() != envelope.len() {
        return Err(Error::Precondition("dominating function has the wrong length".into()));
    }
    for (j, (&e, &b)) in envelope.iter().zip(g_dom.iter()).enumerate() {
        if e > b * (1.0 + 1e-12) + 1e-300 {
            return Err(Error::DominationViolated {
                index: j,
                xi: domain.point(j),
                envelope: e,
                bound: b,
            });
        }
    }
    // brute force over random unit vectors: must never exceed the envelope
    let op = r.to_finite_rank();
    let mut rng = stream_rng(seed, 1, 0);
    let mut fill: f64 = 0.0;
    for _ in 0..200 {
        let mut y = DVector::from_fn(op.input_dim(), |_, _| StandardNormal.sample(&mut rng));
        y /= y.norm();
        let image = op.matrix() * y;
        for (v, e) in image.iter().zip(envelope.iter()) {
            if *e > 0.0 {
                let f = v.abs() / e;
                if f > 1.0 + 1e-9 {
                    return Err(Error::Internal(format!("random unit vector exceeds envelope by {f}")));
                }
                fill = fill.max(f);
            }
        }
    }
    let mc_norm = mc_gamma_norm(&op, TargetNorm::grid(domain, p), samples, seed)?;
    let g_norm = domain.lp_norm(g_dom.as_slice(), p);
    let ratio = if g_norm > 0.0 {
        mc_norm.value / g_norm
    } else if mc_norm.value == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    if !ratio.is_finite() {
        return Err(Error::NonFinite { sample: 0 });
    }
    Ok(DominationReport {
        mc_norm,
        g_norm,
        ratio,
        brute_force_fill: fill,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::CameronMartinSpec;

    fn close_within(est: &GammaNormEstimate, truth: f64, k: f64) -> bool {
        (est.value - truth).abs() <= k * est.value_std_error()
    }

    #[test]
    fn identity_is_hilbert_schmidt() {
        for n in [4usize, 16] {
            let est = mc_gamma_norm(&FiniteRankOperator::identity(n), TargetNorm::Hilbert, 100_000, 7).unwrap();
            let truth = (n as f64).sqrt();
            assert!(close_within(&est, truth, 3.0), "{est:?}");
            assert!((est.value - truth).abs() < 0.02 * truth);
        }
    }

    #[test]
    fn rank_one_reduces_to_single_gaussian() {
        let domain = SpectralDomain::new(1, 31, 8).unwrap();
        let f = domain.sample(|x| (2.0 * std::f64::consts::PI * x[0]).sin() + 0.3);
        for p in [2.0, 4.0] {
            let est = mc_gamma_norm(&FiniteRankOperator::rank_one(&f, 5), TargetNorm::grid(&domain, p), 20_000, 3).unwrap();
            let truth = domain.lp_norm(f.as_slice(), p);
            assert!(close_within(&est, truth, 3.0), "p={p}: {est:?} vs {truth}");
        }
    }

    #[test]
    fn zero_operator_is_exactly_zero() {
        let est = mc_gamma_norm(&FiniteRankOperator::zero(10, 4), TargetNorm::Hilbert, 500, 1).unwrap();
        assert_eq!(est.value, 0.0);
        assert_eq!(est.std_error, 0.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let id = FiniteRankOperator::identity(3);
        assert!(mc_gamma_norm(&id, TargetNorm::Hilbert, 99, 1).is_err());
        assert!(mc_gamma_norm(&id, TargetNorm::GridLp { p: 1.5, weight: 0.1 }, 200, 1).is_err());
        let bad = FiniteRankOperator::from_matrix(DMatrix::from_element(2, 2, f64::INFINITY));
        assert!(matches!(
            mc_gamma_norm(&bad, TargetNorm::Hilbert, 200, 1),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn seeded_determinism() {
        let r = FiniteRankOperator::from_matrix(DMatrix::from_fn(6, 4, |i, j| (i as f64 - j as f64).sin()));
        let a = mc_gamma_norm(&r, TargetNorm::Hilbert, 1000, 42).unwrap();
        let b = mc_gamma_norm(&r, TargetNorm::Hilbert, 1000, 42).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.std_error.to_bits(), b.std_error.to_bits());
    }

    #[test]
    fn std_error_halves_when_samples_quadruple() {
        let r = FiniteRankOperator::identity(8);
        let a = mc_gamma_norm(&r, TargetNorm::Hilbert, 10_000, 5).unwrap();
        let b = mc_gamma_norm(&r, TargetNorm::Hilbert, 40_000, 6).unwrap();
        let ratio = b.std_error / a.std_error;
        assert!((0.3..=0.7).contains(&ratio), "{ratio}");
    }

    #[test]
    fn basis_rotation_invariance() {
        let r = FiniteRankOperator::from_matrix(DMatrix::from_fn(10, 6, |i, j| 1.0 / (1.0 + i as f64 + 2.0 * j as f64)));
        let q = random_orthogonal(6, 99);
        assert!((q.transpose() * &q - DMatrix::identity(6, 6)).amax() < 1e-12);
        let a = mc_gamma_norm(&r, TargetNorm::Hilbert, 20_000, 1).unwrap();
        let b = mc_gamma_norm(&r.rotated(&q), TargetNorm::Hilbert, 20_000, 2).unwrap();
        let combined = a.value_std_error().hypot(b.value_std_error());
        assert!((a.value - b.value).abs() < 3.0 * combined);
    }

    #[test]
    fn linearity_spot_check() {
        let r = FiniteRankOperator::from_matrix(DMatrix::from_fn(7, 5, |i, j| (i * j) as f64 * 0.1 - 0.5));
        assert!(r.linearity_defect(20, 3) < 1e-12);
    }

    #[test]
    fn spectral_norm_matches_svd() {
        let s = DMatrix::from_fn(5, 4, |i, j| ((i + 2 * j) as f64).cos());
        let svd = s.clone().svd(false, false);
        let top = svd.singular_values.max();
        assert!((spectral_norm(&s, 1e-12) - top).abs() < 1e-8 * top);
        assert_eq!(spectral_norm(&DMatrix::zeros(3, 3), 1e-8), 0.0);
    }

    #[test]
    fn ideal_property_trivial_cases() {
        let r = FiniteRankOperator::from_matrix(DMatrix::from_fn(6, 4, |i, j| (i + j) as f64 * 0.2));
        let rep = check_ideal_property(
            &DMatrix::identity(6, 6),
            &r,
            &DMatrix::identity(4, 4),
            TargetNorm::Hilbert,
            20_000,
            3,
        )
        .unwrap();
        let combined = rep.left.value_std_error().hypot(rep.right_std_error);
        assert!((rep.left.value - rep.right).abs() < 3.0 * combined);

        let rep = check_ideal_property(
            &DMatrix::identity(6, 6),
            &r,
            &DMatrix::zeros(4, 4),
            TargetNorm::Hilbert,
            500,
            3,
        )
        .unwrap();
        assert_eq!(rep.left.value, 0.0);
    }

    #[test]
    fn ideal_property_random_diagonals() {
        for trial in 0..20u64 {
            let mut rng = stream_rng(trial, 9, 0);
            let a: DMatrix<f64> = DMatrix::from_fn(8, 3, |_, _| StandardNormal.sample(&mut rng));
            let b: DMatrix<f64> = DMatrix::from_fn(3, 5, |_, _| StandardNormal.sample(&mut rng));
            let r = FiniteRankOperator::from_matrix(a * b);
            let s2 = DMatrix::from_diagonal(&DVector::from_fn(8, |_, _| rng.random_range(0.0..1.0)));
            let s1 = DMatrix::from_diagonal(&DVector::from_fn(5, |_, _| rng.random_range(0.0..1.0)));
            check_ideal_property(&s2, &r, &s1, TargetNorm::Hilbert, 2_000, trial).unwrap();
        }
    }

    #[test]
    fn domination_envelope_and_violation() {
        let domain = SpectralDomain::new(1, 63, 8).unwrap();
        let basis = CameronMartinBasis::new(domain, CameronMartinSpec { theta: 0.0, truncation: 16 }).unwrap();
        let op = MultiplicationOperator {
            basis: &basis,
            g: GridFunction::from_element(63, 1.0),
        };
        let env = op.envelope();
        let rep = check_domination_bound(&op, &env, 4.0, 2_000, 1).unwrap();
        assert!(rep.ratio.is_finite() && rep.ratio > 0.0);
        assert!(rep.brute_force_fill <= 1.0 + 1e-9 && rep.brute_force_fill > 0.5);

        // g ≡ 1 alone is not a valid dominating function for N sine modes
        let err = check_domination_bound(&op, &GridFunction::from_element(63, 1.0), 4.0, 500, 1).unwrap_err();
        assert!(matches!(err, Error::DominationViolated { .. }));

        let zero = MultiplicationOperator {
            basis: &basis,
            g: GridFunction::zeros(63),
        };
        let rep = check_domination_bound(&zero, &GridFunction::zeros(63), 4.0, 500, 1).unwrap();
        assert_eq!(rep.mc_norm.value, 0.0);
        assert_eq!(rep.g_norm, 0.0);
    }

    #[test]
    fn domination_ratio_is_stable_under_doubling() {
        let domain = SpectralDomain::new(1, 127, 8).unwrap();
        let g = domain.sample(|x| 1.0 + x[0]);
        let ratio_at = |n: usize| {
            let basis = CameronMartinBasis::new(domain, CameronMartinSpec { theta: 0.0, truncation: n }).unwrap();
            let op = MultiplicationOperator { basis: &basis, g: g.clone() };
            let env = op.envelope();
            check_domination_bound(&op, &env, 4.0, 4_000, 11).unwrap().ratio
        };
        let (a, b) = (ratio_at(16), ratio_at(32));
        assert!((a - b).abs() / a < 0.10, "{a} vs {b}");
    }
}
