//! Fractional powers `A^z` of a discretized operator.
//!
//! Two independent routes: the spectral functional calculus (`λ_k^z` on mode
//! coefficients) and the resolvent integrals
//!
//! ```text
//! A^{-z} x = (sin πz / π)      ∫_0^∞ t^{-z} (tI + A)^{-1} x dt
//! A^{z}  x = (sin πz / (π z))  ∫_0^∞ t^{z}  (tI + A)^{-2} A x dt      0 < Re z < 1
//! ```
//!
//! evaluated with `t = e^s`, composite Gauss–Legendre on `[-L_lo, L_hi]` and
//! the two semi-infinite tails summed in closed form. Resolvents act
//! spectrally as `1 / (t + λ_k)`.

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::spectral::EigenSystem;

/// Highest Gauss–Legendre order used on a single panel.
const PANEL_ORDER: usize = 20;
/// Tail series are only used when their ratio is at most this.
const TAIL_RATIO_LIMIT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Eigen,
    Quadrature,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FracPowerRequest {
    pub method: Method,
    pub nodes: usize,
    /// Log-domain truncation `(L_lo, L_hi)`.
    pub cutoffs: (f64, f64),
    /// Relative node-doubling disagreement tolerated by the quadrature.
    pub tolerance: f64,
}

impl Default for FracPowerRequest {
    fn default() -> Self {
        Self {
            method: Method::Quadrature,
            nodes: 200,
            cutoffs: (30.0, 30.0),
            tolerance: 1e-8,
        }
    }
}

/// Result of a quadrature evaluation.
#[derive(Debug, Clone)]
pub struct QuadratureOutcome {
    pub value: DVector<Complex64>,
    /// Relative change between `nodes` and `2 * nodes`.
    pub error_estimate: f64,
    pub nodes: usize,
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let step = p / d;
            x -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Composite rule with `nodes` total points on `[lo, hi]`.
fn composite_rule(nodes: usize, lo: f64, hi: f64) -> Vec<(f64, f64)> {
    let order = nodes.clamp(1, PANEL_ORDER);
    let panels = nodes.div_ceil(order);
    let (x, w) = gauss_legendre(order);
    let width = (hi - lo) / panels as f64;
    let mut rule = Vec::with_capacity(panels * order);
    for p in 0..panels {
        let a = lo + p as f64 * width;
        let mid = a + 0.5 * width;
        for (xi, wi) in x.iter().zip(&w) {
            rule.push((mid + 0.5 * width * xi, 0.5 * width * wi));
        }
    }
    rule
}

fn check_exponent(z: Complex64) -> Result<()> {
    if !(z.re > 0.0 && z.re < 1.0) || !z.im.is_finite() {
        return Err(Error::InvalidExponent(format!(
            "quadrature routes need 0 < Re z < 1, got {z}"
        )));
    }
    Ok(())
}

fn check_range(lambda: Complex64, cutoffs: (f64, f64)) -> Result<()> {
    let (lo, hi) = cutoffs;
    if lambda.norm() * (-hi).exp() > TAIL_RATIO_LIMIT || (-lo).exp() / lambda.norm() > TAIL_RATIO_LIMIT {
        return Err(Error::QuadratureRange {
            eigenvalue: lambda.to_string(),
        });
    }
    Ok(())
}

/// Sums `Σ_n coeff(n) r^n e^{-(a+n)L} / (a+n)` until the terms vanish.
fn tail_series(r: Complex64, a: Complex64, cutoff: f64, coeff: impl Fn(usize) -> f64) -> Complex64 {
    let decay = (-cutoff).exp();
    let mut power = (-a * cutoff).exp();
    let mut sum = Complex64::new(0.0, 0.0);
    for n in 0..2000 {
        let term = power * coeff(n) / (a + n as f64);
        sum += term;
        if term.norm() <= 1e-18 * sum.norm().max(1e-300) {
            break;
        }
        power *= r * decay;
    }
    sum
}

/// `(sin πz/π) ∫_0^∞ t^{-z} / (t + λ) dt` for one eigenvalue.
fn inverse_power_scalar(lambda: Complex64, z: Complex64, rule: &[(f64, f64)], cutoffs: (f64, f64)) -> Complex64 {
    let one = Complex64::new(1.0, 0.0);
    let core: Complex64 = rule
        .iter()
        .map(|&(s, w)| ((one - z) * s).exp() / (s.exp() + lambda) * w)
        .sum();
    let upper = tail_series(-lambda, z, cutoffs.1, |_| 1.0);
    let lower = tail_series(-one / lambda, one - z, cutoffs.0, |_| 1.0) / lambda;
    (z * PI).sin() / PI * (core + upper + lower)
}

/// `(sin πz/(πz)) ∫_0^∞ t^{z} λ / (t + λ)² dt` for one eigenvalue.
fn forward_power_scalar(lambda: Complex64, z: Complex64, rule: &[(f64, f64)], cutoffs: (f64, f64)) -> Complex64 {
    let one = Complex64::new(1.0, 0.0);
    let core: Complex64 = rule
        .iter()
        .map(|&(s, w)| {
            let denom = s.exp() + lambda;
            ((one + z) * s).exp() * lambda / (denom * denom) * w
        })
        .sum();
    let upper = lambda * tail_series(-lambda, one - z, cutoffs.1, |n| (n + 1) as f64);
    let lower = tail_series(-one / lambda, one + z, cutoffs.0, |n| (n + 1) as f64) / lambda;
    (z * PI).sin() / (PI * z) * (core + upper + lower)
}

/// `Σ_k λ_k^z ⟨dual_k, x⟩ mode_k` with the principal branch.
pub fn frac_power_eigen(sys: &EigenSystem, z: Complex64, x: &[f64]) -> Result<DVector<Complex64>> {
    if z.re.abs() > 1.0 || !z.im.is_finite() {
        return Err(Error::InvalidExponent(format!("|Re z| must be <= 1, got {z}")));
    }
    Ok(sys.apply_multiplier(x, |lambda| {
        if z == Complex64::new(0.0, 0.0) {
            Complex64::new(1.0, 0.0)
        } else {
            lambda.powc(z)
        }
    }))
}

fn quadrature_route(
    sys: &EigenSystem,
    z: Complex64,
    x: &[f64],
    req: &FracPowerRequest,
    scalar: fn(Complex64, Complex64, &[(f64, f64)], (f64, f64)) -> Complex64,
) -> Result<QuadratureOutcome> {
    check_exponent(z)?;
    if req.nodes == 0 {
        return Err(Error::Precondition("quadrature needs at least one node".into()));
    }
    for &lambda in sys.eigenvalues() {
        check_range(lambda, req.cutoffs)?;
    }
    let (lo, hi) = req.cutoffs;
    let coarse_rule = composite_rule(req.nodes, -lo, hi);
    let fine_rule = composite_rule(2 * req.nodes, -lo, hi);
    let coefficients = sys.project(x);
    let mut coarse = coefficients.clone();
    let mut fine = coefficients;
    for (k, &lambda) in sys.eigenvalues().iter().enumerate() {
        coarse[k] *= scalar(lambda, z, &coarse_rule, req.cutoffs);
        fine[k] *= scalar(lambda, z, &fine_rule, req.cutoffs);
    }
    let coarse_norm = coarse.norm();
    let fine_norm = fine.norm();
    let difference = (&coarse - &fine).norm() / fine_norm.max(f64::MIN_POSITIVE);
    let difference = if fine_norm == 0.0 && coarse_norm == 0.0 { 0.0 } else { difference };
    if difference > req.tolerance {
        return Err(Error::QuadratureDisagreement {
            coarse: coarse_norm,
            fine: fine_norm,
            difference,
            tolerance: req.tolerance,
        });
    }
    Ok(QuadratureOutcome {
        value: sys.synthesize(&coarse),
        error_estimate: difference,
        nodes: req.nodes,
    })
}

/// `A^{-z} x` by the resolvent integral.
pub fn frac_power_quadrature(
    sys: &EigenSystem,
    z: Complex64,
    x: &[f64],
    req: &FracPowerRequest,
) -> Result<QuadratureOutcome> {
    quadrature_route(sys, z, x, req, inverse_power_scalar)
}

/// `A^{z} x` by the second resolvent integral.
pub fn balakrishnan_forward(
    sys: &EigenSystem,
    z: Complex64,
    x: &[f64],
    req: &FracPowerRequest,
) -> Result<QuadratureOutcome> {
    quadrature_route(sys, z, x, req, forward_power_scalar)
}

/// `A^{-z} x` by whichever route `req.method` selects.
pub fn inverse_power(sys: &EigenSystem, z: Complex64, x: &[f64], req: &FracPowerRequest) -> Result<DVector<Complex64>> {
    match req.method {
        Method::Eigen => frac_power_eigen(sys, -z, x),
        Method::Quadrature => Ok(frac_power_quadrature(sys, z, x, req)?.value),
    }
}

/// Bound on the part of `λ^z x` the truncated basis cannot represent:
/// `|λ_K|^{Re z} |x − P x|` for `Re z ≤ 0`, infinite for growing powers with
/// a non-zero tail.
pub fn unresolved_tail_bound(sys: &EigenSystem, z: Complex64, x: &[f64]) -> f64 {
    let tail = DVector::from_column_slice(x) - sys.spectral_projection(x);
    let tail_norm = sys.domain().lp_norm(tail.as_slice(), 2.0);
    if tail_norm == 0.0 {
        return 0.0;
    }
    if z.re > 0.0 {
        return f64::INFINITY;
    }
    let top = sys.eigenvalues().iter().map(|l| l.norm()).fold(0.0, f64::max);
    top.powf(z.re) * tail_norm
}

/// `|x|_{L^p} + |A^δ x|_{L^p}` on the grid.
pub fn domain_norm(sys: &EigenSystem, delta: f64, x: &[f64], p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::InvalidExponent(format!("delta {delta} must lie in [0, 1]")));
    }
    let powered = frac_power_eigen(sys, Complex64::new(delta, 0.0), x)?;
    let domain = sys.domain();
    Ok(domain.lp_norm(x, p) + domain.lp_norm_complex(powered.as_slice(), p))
}

/// Largest singular value of `A^{is}` restricted to the resolved subspace, in
/// the grid L² geometry.
pub fn imaginary_power_norm(sys: &EigenSystem, s: f64) -> f64 {
    let z = Complex64::new(0.0, s);
    let n = sys.n_modes();
    let weight = sys.domain().weight();
    if sys.is_selfadjoint() {
        return sys
            .eigenvalues()
            .iter()
            .map(|l| l.powc(z).norm())
            .fold(0.0, f64::max);
    }
    // M diag(λ^{is}) M^{-1} in orthonormal coordinates of the mode span
    let modes = sys.modes() * Complex64::new(weight.sqrt(), 0.0);
    let qr = modes.clone().qr();
    let r = qr.r();
    let mut diag = nalgebra::DMatrix::<Complex64>::zeros(n, n);
    for (k, l) in sys.eigenvalues().iter().enumerate() {
        diag[(k, k)] = l.powc(z);
    }
    let r_inv = match r.clone().try_inverse() {
        Some(inv) => inv,
        None => return f64::INFINITY,
    };
    (r * diag * r_inv).singular_values().max()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{build_laplacian_system, SpectralDomain};

    fn three_level() -> EigenSystem {
        let domain = SpectralDomain::new(1, 31, 3).unwrap();
        EigenSystem::with_spectrum(domain, &[1.0, 4.0, 9.0]).unwrap()
    }

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn rel_err(a: &DVector<Complex64>, b: &DVector<Complex64>) -> f64 {
        (a - b).norm() / b.norm()
    }

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(7);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
        // ∫ x^12 = 2/13 needs degree 13 exactness
        let v: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(12)).sum();
        assert!((v - 2.0 / 13.0).abs() < 1e-14);
        let (x, w) = gauss_legendre(20);
        let v: f64 = x.iter().zip(&w).map(|(x, w)| w * x.exp()).sum();
        assert!((v - (1f64.exp() - (-1f64).exp())).abs() < 1e-14);
    }

    #[test]
    fn eigen_route_examples() {
        let sys = three_level();
        let m2 = sys.mode(1);
        let out = frac_power_eigen(&sys, c(-0.5), m2.as_slice()).unwrap();
        for (o, m) in out.iter().zip(m2.iter()) {
            assert!((o.re - 0.5 * m).abs() < 1e-14 && o.im.abs() < 1e-14);
        }
        let x = &sys.mode(0) + &sys.mode(2);
        let id = frac_power_eigen(&sys, c(0.0), x.as_slice()).unwrap();
        assert!(id.iter().zip(x.iter()).all(|(a, b)| (a.re - b).abs() < 1e-13));
        assert!(frac_power_eigen(&sys, c(1.5), x.as_slice()).is_err());
    }

    #[test]
    fn quadrature_inverse_square_root_on_three_levels() {
        let sys = three_level();
        let x = &(&sys.mode(0) + &sys.mode(1)) + &sys.mode(2);
        let out = frac_power_quadrature(&sys, c(0.5), x.as_slice(), &FracPowerRequest::default()).unwrap();
        let expected = &(&sys.mode(0) + &(sys.mode(1) * 0.5)) + &(sys.mode(2) / 3.0);
        let expected = expected.map(c);
        assert!(rel_err(&out.value, &expected) <= 1e-8);
        assert!(out.error_estimate <= 1e-8);
    }

    #[test]
    fn quadrature_unit_eigenvalue_is_identity() {
        let domain = SpectralDomain::new(1, 15, 1).unwrap();
        let sys = EigenSystem::with_spectrum(domain, &[1.0]).unwrap();
        let x = sys.mode(0);
        let out = frac_power_quadrature(&sys, c(0.5), x.as_slice(), &FracPowerRequest::default()).unwrap();
        assert!(rel_err(&out.value, &x.map(c)) < 1e-12);
    }

    #[test]
    fn quadrature_near_zero_exponent_tends_to_projection() {
        let sys = three_level();
        let x = &sys.mode(0) - &(sys.mode(2) * 2.0);
        let out = frac_power_quadrature(&sys, c(1e-3), x.as_slice(), &FracPowerRequest::default()).unwrap();
        assert!(rel_err(&out.value, &x.map(c)) < 1e-2);
        let oracle = frac_power_eigen(&sys, c(-1e-3), x.as_slice()).unwrap();
        assert!(rel_err(&out.value, &oracle) < 1e-8);
    }

    #[test]
    fn forward_square_root_examples() {
        let sys = three_level();
        let req = FracPowerRequest::default();
        let m3 = sys.mode(2);
        let out = balakrishnan_forward(&sys, c(0.5), m3.as_slice(), &req).unwrap();
        assert!(rel_err(&out.value, &(m3.clone() * 3.0).map(c)) < 1e-7);

        let x = &sys.mode(0) + &(sys.mode(1) * 0.3);
        let once = balakrishnan_forward(&sys, c(0.5), x.as_slice(), &req).unwrap().value;
        let once_re: Vec<f64> = once.iter().map(|v| v.re).collect();
        let twice = balakrishnan_forward(&sys, c(0.5), &once_re, &req).unwrap().value;
        let direct = sys.apply_operator(x.as_slice()).map(c);
        assert!(rel_err(&twice, &direct) < 1e-6);

        let zero = vec![0.0; 31];
        let out = balakrishnan_forward(&sys, c(0.5), &zero, &req).unwrap();
        assert!(out.value.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn quadrature_rejects_bad_exponent_and_range() {
        let sys = three_level();
        let x = sys.mode(0);
        let req = FracPowerRequest::default();
        assert!(frac_power_quadrature(&sys, c(1.0), x.as_slice(), &req).is_err());
        assert!(balakrishnan_forward(&sys, c(0.0), x.as_slice(), &req).is_err());
        let tight = FracPowerRequest {
            cutoffs: (1.0, 1.0),
            ..req
        };
        assert!(matches!(
            frac_power_quadrature(&sys, c(0.5), x.as_slice(), &tight),
            Err(Error::QuadratureRange { .. })
        ));
        let coarse = FracPowerRequest {
            nodes: 4,
            tolerance: 1e-12,
            ..req
        };
        assert!(matches!(
            frac_power_quadrature(&sys, c(0.5), x.as_slice(), &coarse),
            Err(Error::QuadratureDisagreement { .. })
        ));
    }

    #[test]
    fn imaginary_powers_are_unitary_for_selfadjoint_systems() {
        let domain = SpectralDomain::new(1, 63, 16).unwrap();
        let sys = build_laplacian_system(domain, 0.0).unwrap();
        for s in [-5.0, -1.0, 1.0, 5.0] {
            assert!((imaginary_power_norm(&sys, s) - 1.0).abs() < 1e-12);
            let x = sys.spectral_projection(&(0..63).map(|j| ((j * 7) % 5) as f64 - 2.0).collect::<Vec<_>>());
            let y = frac_power_eigen(&sys, Complex64::new(0.0, s), x.as_slice()).unwrap();
            let nx = domain.lp_norm(x.as_slice(), 2.0);
            let ny = domain.lp_norm_complex(y.as_slice(), 2.0);
            assert!((nx - ny).abs() < 1e-12 * nx);
        }
    }

    #[test]
    fn domain_norm_examples() {
        let sys = three_level();
        let x = sys.mode(0);
        let p = 4.0;
        let base = sys.domain().lp_norm(x.as_slice(), p);
        assert!((domain_norm(&sys, 0.0, x.as_slice(), p).unwrap() - 2.0 * base).abs() < 1e-12);
        assert!((domain_norm(&sys, 1.0, x.as_slice(), p).unwrap() - 2.0 * base).abs() < 1e-12);
        let m2 = sys.mode(1);
        let b2 = sys.domain().lp_norm(m2.as_slice(), p);
        assert!((domain_norm(&sys, 1.0, m2.as_slice(), p).unwrap() - 5.0 * b2).abs() < 1e-12);
        assert!(domain_norm(&sys, 1.5, m2.as_slice(), p).is_err());
    }

    #[test]
    fn tail_bound_reports_unresolved_part() {
        let domain = SpectralDomain::new(1, 31, 4).unwrap();
        let sys = build_laplacian_system(domain, 0.0).unwrap();
        let inside = sys.mode(1);
        assert!(unresolved_tail_bound(&sys, c(-0.5), inside.as_slice()) < 1e-15);
        let outside = crate::spectral::sine_mode(&domain, &[9]);
        let bound = unresolved_tail_bound(&sys, c(-0.5), outside.as_slice());
        let expected = (16.0 * PI * PI).powf(-0.5);
        assert!((bound - expected).abs() < 1e-10);
        assert!(unresolved_tail_bound(&sys, c(0.5), outside.as_slice()).is_infinite());
    }
}
