//! Admissible Hölder-exponent regions `β + cγ < B` and the (σ, δ) recipe.
//!
//! Everything is generic over the scalar so worked examples can be checked in
//! exact rational arithmetic.

use std::fmt::Debug;

use num_traits::{FromPrimitive, Num};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub trait Scalar: Num + Copy + PartialOrd + FromPrimitive + Debug {}
impl<T: Num + Copy + PartialOrd + FromPrimitive + Debug> Scalar for T {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Theorem {
    Prop32,
    Remark33,
    Colored,
    Fractional,
}

impl Theorem {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Prop32 => "prop32",
            Self::Remark33 => "remark33",
            Self::Colored => "colored",
            Self::Fractional => "fractional",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "prop32" => Some(Self::Prop32),
            "remark33" => Some(Self::Remark33),
            "colored" => Some(Self::Colored),
            "fractional" => Some(Self::Fractional),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularityQuery<T> {
    pub theorem: Theorem,
    pub d: usize,
    pub p: T,
    pub q: T,
    pub alpha: T,
    pub theta: Option<T>,
    pub m: Option<T>,
}

fn c<T: Scalar>(x: i64) -> T {
    T::from_i64(x).expect("small integer")
}

fn half<T: Scalar>() -> T {
    T::one() / c(2)
}

impl<T: Scalar> RegularityQuery<T> {
    pub fn prop32(d: usize, p: T, q: T) -> Self {
        Self {
            theorem: Theorem::Prop32,
            d,
            p,
            q,
            alpha: c(2),
            theta: None,
            m: None,
        }
    }

    pub fn fractional(d: usize, p: T, q: T, alpha: T) -> Self {
        Self {
            theorem: Theorem::Fractional,
            alpha,
            ..Self::prop32(d, p, q)
        }
    }

    pub fn colored(d: usize, q: T, theta: T, m: T) -> Self {
        let mut query = Self {
            theorem: Theorem::Colored,
            theta: Some(theta),
            m: Some(m),
            ..Self::prop32(d, c(2), q)
        };
        query.p = query.implied_p().unwrap_or(query.p);
        query
    }

    pub fn remark33(d: usize, q: T, theta: T) -> Self {
        Self {
            theorem: Theorem::Remark33,
            theta: Some(theta),
            ..Self::prop32(d, c(2), q)
        }
    }

    fn dim(&self) -> T {
        T::from_usize(self.d).expect("dimension")
    }

    fn theta(&self) -> Result<T> {
        self.theta
            .ok_or_else(|| Error::TheoremMismatch(format!("{} needs theta", self.theorem.name())))
    }

    fn m(&self) -> Result<T> {
        self.m
            .ok_or_else(|| Error::TheoremMismatch(format!("{} needs m", self.theorem.name())))
    }

    /// `p` with `1/p = 1/2 − θ/d + 1/m` (colored noise).
    pub fn implied_p(&self) -> Result<T> {
        let inv = half::<T>() - self.theta()? / self.dim() + T::one() / self.m()?;
        if inv <= T::zero() {
            return Err(Error::TheoremMismatch("theta too large: implied 1/p <= 0".into()));
        }
        Ok(T::one() / inv)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::Precondition("d must be >= 1".into()));
        }
        if self.q < c(2) {
            return Err(Error::Precondition(format!("q must be >= 2, got {:?}", self.q)));
        }
        let floor: T = c(2.max(self.d as i64));
        match self.theorem {
            Theorem::Prop32 | Theorem::Fractional => {
                if self.p <= floor {
                    return Err(Error::Precondition(format!(
                        "p must exceed max{{2,d}} = {floor:?}, got {:?}",
                        self.p
                    )));
                }
                if self.theorem == Theorem::Prop32 && self.alpha != c(2) {
                    return Err(Error::TheoremMismatch("prop32 is the alpha = 2 case".into()));
                }
                if !(self.alpha > T::zero() && self.alpha <= c(2)) {
                    return Err(Error::Precondition(format!("alpha must lie in (0, 2], got {:?}", self.alpha)));
                }
            }
            Theorem::Colored => {
                let m = self.m()?;
                self.theta()?;
                if m <= floor {
                    return Err(Error::TheoremMismatch(format!("m must exceed max{{2,d}}, got {m:?}")));
                }
                self.implied_p()?;
            }
            Theorem::Remark33 => {
                let theta = self.theta()?;
                let lower = self.dim() / c(2) + c::<T>(2) / self.q - T::one();
                if theta <= lower {
                    return Err(Error::TheoremMismatch(format!(
                        "remark33 needs theta > d/2 + 2/q - 1 = {lower:?}, got {theta:?}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Coefficient `c` of `γ` in `β + cγ < B`.
    pub fn gamma_coefficient(&self) -> T {
        match self.theorem {
            Theorem::Fractional => T::one() / self.alpha,
            _ => half(),
        }
    }

    /// Budget `B`.
    pub fn budget(&self) -> Result<T> {
        self.validate()?;
        let (d, q) = (self.dim(), self.q);
        Ok(match self.theorem {
            Theorem::Prop32 => half::<T>() - T::one() / q - d / self.p,
            Theorem::Remark33 => (T::one() + self.theta()?) / c(2) - T::one() / q - d / c(4),
            Theorem::Colored => {
                self.theta()? + half() - d * (half::<T>() + T::one() / self.m()?) - T::one() / q
            }
            Theorem::Fractional => half::<T>() - T::one() / q - c::<T>(2) * d / (self.alpha * self.p),
        })
    }

    /// Strict `β + cγ < B`; negative exponents are never admissible.
    pub fn admissible(&self, beta: T, gamma: T) -> Result<bool> {
        let b = self.budget()?;
        Ok(beta >= T::zero() && gamma >= T::zero() && beta + self.gamma_coefficient() * gamma < b)
    }

    /// `γ_max(β) = (B − β)/c`, the supremum of admissible `γ` at `β`.
    pub fn gamma_max(&self, beta: T) -> Result<T> {
        Ok((self.budget()? - beta) / self.gamma_coefficient())
    }

    /// Boundary samples `(β, γ_max(β))` for `β` from 0 to `B`.
    pub fn region_boundary(&self, samples: usize) -> Result<RegionBoundary<T>> {
        let b = self.budget()?;
        if b <= T::zero() {
            return Ok(RegionBoundary {
                theorem: self.theorem,
                budget: b,
                points: Vec::new(),
            });
        }
        let n = samples.max(2) - 1;
        let points = (0..=n)
            .map(|i| {
                let beta = b * T::from_usize(i).unwrap() / T::from_usize(n).unwrap();
                Ok((beta, self.gamma_max(beta)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RegionBoundary {
            theorem: self.theorem,
            budget: b,
            points,
        })
    }

    /// Midpoints of the σ and δ intervals of the existence argument.
    pub fn select_sigma_delta(&self, beta: T, gamma: T) -> Result<ParameterSelection<T>> {
        if !self.admissible(beta, gamma)? {
            return Err(Error::Precondition(format!(
                "(beta, gamma) = ({beta:?}, {gamma:?}) is not admissible for {}",
                self.theorem.name()
            )));
        }
        let (d, q) = (self.dim(), self.q);
        let inv_q = T::one() / q;
        let (sigma_lo, sigma_hi, delta_lo) = match self.theorem {
            Theorem::Prop32 | Theorem::Colored => {
                let p = if self.theorem == Theorem::Colored { self.implied_p()? } else { self.p };
                let base = d / (c::<T>(2) * p);
                (
                    base,
                    half::<T>() - inv_q - base - gamma / c(2) - beta,
                    base + gamma / c(2),
                )
            }
            Theorem::Fractional => {
                let a = self.alpha;
                let shifted = (d / self.p + gamma) / a;
                (d / (a * self.p), half::<T>() - shifted - inv_q - beta, shifted)
            }
            Theorem::Remark33 => {
                return Err(Error::TheoremMismatch("remark33 has no (sigma, delta) recipe".into()));
            }
        };
        if sigma_lo >= sigma_hi {
            return Err(Error::Internal(format!("empty sigma interval ({sigma_lo:?}, {sigma_hi:?})")));
        }
        let sigma = (sigma_lo + sigma_hi) / c(2);
        let delta_hi = half::<T>() - inv_q - beta - sigma;
        if delta_lo >= delta_hi {
            return Err(Error::Internal(format!("empty delta interval ({delta_lo:?}, {delta_hi:?})")));
        }
        Ok(ParameterSelection {
            sigma,
            delta: (delta_lo + delta_hi) / c(2),
            sigma_interval: (sigma_lo, sigma_hi),
            delta_interval: (delta_lo, delta_hi),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionBoundary<T> {
    pub theorem: Theorem,
    pub budget: T,
    /// Empty when the budget is not positive.
    pub points: Vec<(T, T)>,
}

impl<T> RegionBoundary<T> {
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterSelection<T> {
    pub sigma: T,
    pub delta: T,
    pub sigma_interval: (T, T),
    pub delta_interval: (T, T),
}

/// `(β, γ)` vertices of the `n × n` grid spanning the admissible triangle
/// `{β, γ ≥ 0, β + cγ ≤ B}` shrunk toward the origin by `s = 1 − 1e-9`, so
/// every vertex is strictly admissible: `β_i = f_i·B·s` and
/// `γ_ij = f_j·(1 − f_i)·(B/c)·s` for equispaced `f ∈ [0, 1]`.
pub fn vertex_grid(query: &RegularityQuery<f64>, n: usize) -> Result<Vec<(f64, f64)>> {
    let b = query.budget()?;
    if b <= 0.0 {
        return Ok(Vec::new());
    }
    let s = 1.0 - 1e-9;
    let gamma_top = b / query.gamma_coefficient();
    let n = n.max(2);
    let frac = |i: usize| i as f64 / (n - 1) as f64;
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            out.push((frac(i) * b * s, frac(j) * (1.0 - frac(i)) * gamma_top * s));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;
    use proptest::prelude::*;

    type Q = Ratio<i64>;

    fn r(n: i64, d: i64) -> Q {
        Ratio::new(n, d)
    }

    fn z(n: i64) -> Q {
        Ratio::from_integer(n)
    }

    #[test]
    fn prop32_worked_examples() {
        let query = RegularityQuery::prop32(1, z(4), z(8));
        assert_eq!(query.budget().unwrap(), r(1, 8));
        assert!(query.admissible(r(1, 20), r(1, 10)).unwrap());
        assert!(!query.admissible(r(1, 10), r(1, 5)).unwrap());
        assert_eq!(query.gamma_max(z(0)).unwrap(), r(1, 4));
        // boundary itself is excluded
        assert!(!query.admissible(z(0), r(1, 4)).unwrap());
    }

    #[test]
    fn empty_region() {
        let query = RegularityQuery::prop32(2, z(4), z(4));
        assert!(query.budget().unwrap() < z(0));
        assert!(query.region_boundary(10).unwrap().is_empty());
    }

    #[test]
    fn colored_budget() {
        let query = RegularityQuery::colored(1, z(16), r(2, 5), z(8));
        assert_eq!(query.budget().unwrap(), r(17, 80));
        assert_eq!(query.gamma_max(z(0)).unwrap(), r(17, 40));
        assert_eq!(query.implied_p().unwrap(), r(40, 9));
        assert!(RegularityQuery::<Q> { theta: None, ..query }.budget().is_err());
    }

    #[test]
    fn sigma_delta_worked_examples() {
        let query = RegularityQuery::prop32(1, z(4), z(8));
        let sel = query.select_sigma_delta(r(1, 20), r(1, 10)).unwrap();
        assert_eq!(sel.sigma_interval, (r(1, 8), r(3, 20)));
        assert_eq!(sel.sigma, r(11, 80));
        assert_eq!(sel.delta_interval, (r(7, 40), r(3, 16)));
        assert_eq!(sel.delta, r(29, 160));
        assert!(query.select_sigma_delta(r(1, 10), r(1, 5)).is_err());

        let frac = RegularityQuery::fractional(1, z(8), z(16), z(1));
        let sel = frac.select_sigma_delta(r(1, 50), r(1, 20)).unwrap();
        assert_eq!(sel.sigma_interval, (r(1, 8), r(97, 400)));
    }

    #[test]
    fn alpha_two_coincides_with_prop32() {
        let a = RegularityQuery::prop32(1, z(4), z(8));
        let b = RegularityQuery::fractional(1, z(4), z(8), z(2));
        for i in 0..20 {
            for j in 0..20 {
                let (beta, gamma) = (r(i, 100), r(j, 50));
                assert_eq!(a.admissible(beta, gamma).unwrap(), b.admissible(beta, gamma).unwrap());
            }
        }
    }

    #[test]
    fn remark33_needs_theta_window_and_has_no_recipe() {
        let query = RegularityQuery::remark33(1, z(8), r(1, 2));
        assert_eq!(query.budget().unwrap(), r(3, 4) - r(1, 8) - r(1, 4));
        assert!(query.select_sigma_delta(z(0), z(0)).is_err());
        let bad = RegularityQuery::remark33(2, z(4), r(1, 10));
        assert!(matches!(bad.budget(), Err(Error::TheoremMismatch(_))));
    }

    #[test]
    fn invalid_queries() {
        assert!(RegularityQuery::prop32(1, z(2), z(8)).budget().is_err());
        assert!(RegularityQuery::prop32(3, z(3), z(8)).budget().is_err());
        assert!(RegularityQuery::prop32(1, z(4), z(1)).budget().is_err());
        let mut q = RegularityQuery::prop32(1, z(4), z(8));
        q.alpha = z(1);
        assert!(matches!(q.budget(), Err(Error::TheoremMismatch(_))));
    }

    #[test]
    fn vertex_grid_stays_inside() {
        let query = RegularityQuery::colored(1, 16.0, 0.4, 8.0);
        let grid = vertex_grid(&query, 5).unwrap();
        assert_eq!(grid.len(), 25);
        assert!(grid.iter().all(|&(b, g)| query.admissible(b, g).unwrap()));
        assert!(vertex_grid(&RegularityQuery::prop32(2, 4.0, 4.0), 5).unwrap().is_empty());
    }

    proptest! {
        #[test]
        fn budgets_are_monotone(p in 3i64..40, dp in 1i64..10, q in 2i64..40, dq in 1i64..10, a in 1i64..20) {
            let alpha = r(a, 10);
            let base = RegularityQuery::fractional(1, z(p), z(q), alpha);
            let bigger_p = RegularityQuery::fractional(1, z(p + dp), z(q), alpha);
            let bigger_q = RegularityQuery::fractional(1, z(p), z(q + dq), alpha);
            prop_assert!(bigger_p.budget().unwrap() >= base.budget().unwrap());
            prop_assert!(bigger_q.budget().unwrap() >= base.budget().unwrap());
            // larger alpha: the region β + γ/α < B(α) only grows
            let alpha2 = (alpha + r(1, 10)).min(z(2));
            let wider = RegularityQuery::fractional(1, z(p), z(q), alpha2);
            for i in 0..6 {
                for j in 0..6 {
                    let (beta, gamma) = (r(i, 30), r(j, 15));
                    if base.admissible(beta, gamma).unwrap() {
                        prop_assert!(wider.admissible(beta, gamma).unwrap());
                    }
                }
            }
        }

        #[test]
        fn colored_budget_grows_with_theta(t in 0i64..40, dt in 1i64..10) {
            let a = RegularityQuery::colored(1, z(16), r(t, 100), z(8));
            let b = RegularityQuery::colored(1, z(16), r(t + dt, 100), z(8));
            if let (Ok(x), Ok(y)) = (a.budget(), b.budget()) {
                prop_assert!(y > x);
            }
        }

        #[test]
        fn selection_satisfies_convolution_inequality(p in 5i64..40, q in 8i64..40, i in 0i64..100, j in 0i64..100, a in 5i64..21) {
            let query = RegularityQuery::fractional(1, z(p), z(q), r(a, 10));
            let (beta, gamma) = (r(i, 1000), r(j, 1000));
            if query.admissible(beta, gamma).unwrap() {
                let sel = query.select_sigma_delta(beta, gamma).unwrap();
                prop_assert!(beta + sel.delta + sel.sigma + z(1) / z(q) < r(1, 2));
                prop_assert!(sel.sigma_interval.0 < sel.sigma && sel.sigma < sel.sigma_interval.1);
                prop_assert!(sel.delta_interval.0 < sel.delta && sel.delta < sel.delta_interval.1);
            }
        }
    }
}
