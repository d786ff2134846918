//! Sample-complexity bounds for a single weighted policy update, the
//! step/sample schedules, and a Monte Carlo check of the bounds.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{derive_seed, rng_from};
use crate::scalar::Real;
use crate::shape::{exp_r, ShapeConfig, Threshold};

/// First four raw moments of the sufficient statistic.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentSet<T> {
    pub m1: T,
    pub m2: T,
    pub m3: T,
    pub m4: T,
}

impl<T: Real> MomentSet<T> {
    pub fn from_samples(xs: &[T]) -> Self {
        let n = T::count(xs.len());
        let mut m = [T::zero(); 4];
        for &x in xs {
            let x2 = x * x;
            m[0] += x;
            m[1] += x2;
            m[2] += x2 * x;
            m[3] += x2 * x2;
        }
        Self {
            m1: m[0] / n,
            m2: m[1] / n,
            m3: m[2] / n,
            m4: m[3] / n,
        }
    }

    /// `M4 - 4 M1 M3 + 6 M2 M1^2 - 3 M1^4`, the fourth central moment.
    pub fn central_fourth(&self) -> T {
        let m1 = self.m1;
        let m1sq = m1 * m1;
        self.m4 - T::lit(4.0) * m1 * self.m3 + T::lit(6.0) * self.m2 * m1sq - T::lit(3.0) * m1sq * m1sq
    }
}

/// `sqrt(M4 - 4 M1 M3 + 6 M2 M1^2 - 3 M1^4) + M2 - M1^2`
pub fn psi<T: Real>(m: &MomentSet<T>) -> Result<T> {
    let mut radicand = m.central_fourth();
    if radicand < T::zero() {
        // cancellation when all moments describe a near-constant statistic
        let tol = T::lit(1e-12) * m.m4.abs().max(T::one());
        if radicand < -tol {
            return Err(Error::MomentInconsistency {
                radicand: radicand.to_f64_lossy(),
            });
        }
        radicand = T::zero();
    }
    Ok(radicand.sqrt() + m.m2 - m.m1 * m.m1)
}

/// `(rho1, rho2)`, the Hoeffding risk for the mean weight estimate and the
/// Chebyshev risk for the weighted statistic, both clamped to 1.
pub fn risk_bounds<T: Real>(eps1: T, eps2: T, m: usize, e1: T, moments: &MomentSet<T>) -> Result<(T, T)> {
    if !(eps1 > T::zero()) || !(eps2 > T::zero()) {
        return Err(invalid("epsilons must be positive"));
    }
    if !(e1 > eps1) {
        return Err(invalid(format!("need E1 > eps1, got E1 = {e1}, eps1 = {eps1}")));
    }
    if m == 0 {
        return Err(invalid("sample count must be positive"));
    }
    let mm = T::count(m);
    let rho1 = (-T::lit(2.0) * mm * eps1 * eps1).exp().min(T::one());
    let rho2 = (psi(moments)? / (mm * eps2 * eps2 * e1 * e1)).min(T::one());
    Ok((rho1, rho2))
}

/// The Hoeffding risk with the sample count in the denominator of the
/// exponent, `exp(-2 eps1^2 / M)`, kept for comparison in reports.
pub fn rho1_literal<T: Real>(eps1: T, m: usize) -> T {
    (-T::lit(2.0) * eps1 * eps1 / T::count(m)).exp().min(T::one())
}

/// `theta -/+ [|E2| r + (1 -/+ r) eps2]` with `r = eps1 / (E1 - eps1)`.
pub fn update_error_interval<T: Real>(theta: T, e1: T, e2: T, eps1: T, eps2: T) -> Result<(T, T)> {
    if !(e1 > eps1) {
        return Err(invalid(format!("need E1 > eps1, got E1 = {e1}, eps1 = {eps1}")));
    }
    if eps1 < T::zero() || eps2 < T::zero() {
        return Err(invalid("epsilons must be non-negative"));
    }
    let r = eps1 / (e1 - eps1);
    let base = e2.abs() * r;
    Ok((theta - (base + (T::one() - r) * eps2), theta + (base + (T::one() + r) * eps2)))
}

/// `(alpha^k, M^k) = (alpha0 / k^a, ceil(M0 k^zeta))` for `k >= 1`.
pub fn schedules<T: Real>(k: usize, alpha0: T, a: T, m0: usize, zeta: T) -> Result<(T, usize)> {
    if k == 0 {
        return Err(invalid("schedules start at k = 1"));
    }
    if !(alpha0 > T::zero()) {
        return Err(invalid("alpha0 must be positive"));
    }
    if !(a >= T::zero() && a < T::one()) {
        return Err(invalid("step exponent must lie in [0,1)"));
    }
    if m0 == 0 {
        return Err(invalid("M0 must be at least 1"));
    }
    if !(zeta >= T::zero()) {
        return Err(invalid("sample exponent must be non-negative"));
    }
    let kk = T::count(k);
    let alpha = alpha0 / kk.powf(a);
    let growth = kk.to_f64_lossy().powf(zeta.to_f64_lossy());
    let m = (m0 as f64 * growth - 1e-9).ceil().max(m0 as f64) as usize;
    Ok((alpha, m))
}

/// One-dimensional problem used to check the bounds: `u ~ N(theta, sigma^2)`,
/// `x = x0 + u`, `J = q (x - goal)^2`, statistic `T(u) = u / sigma`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsProblem {
    pub theta: f64,
    pub sigma: f64,
    pub x0: f64,
    pub goal: f64,
    pub q: f64,
}

impl Default for BoundsProblem {
    fn default() -> Self {
        Self {
            theta: 0.0,
            sigma: 1.0,
            x0: 0.0,
            goal: 0.5,
            q: 1.0,
        }
    }
}

impl BoundsProblem {
    fn cost(&self, u: f64) -> f64 {
        let e = self.x0 + u - self.goal;
        self.q * e * e
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub shape: String,
    pub eps1: f64,
    pub eps2: f64,
    pub rho1: f64,
    pub rho2: f64,
    /// Hoeffding risk with `M` in the denominator, for reference only.
    pub rho1_literal: f64,
    pub e1: f64,
    pub e2: f64,
    pub psi: f64,
    pub moments: MomentSet<f64>,
    pub interval: (f64, f64),
    pub samples: usize,
    pub trials: usize,
    pub violation_freq1: f64,
    pub violation_freq2: f64,
    /// Fraction of trials whose estimate `E2_hat / E1_hat` lies in `interval`.
    pub interval_coverage: f64,
}

impl ComplexityReport {
    pub fn within_bounds(&self) -> bool {
        self.violation_freq1 <= self.rho1 && self.violation_freq2 <= self.rho2
    }
}

/// Shape value `S(-J)` for shapes that do not depend on the batch.
fn pointwise_shape(j: f64, shape: &ShapeConfig<f64>) -> Result<f64> {
    match *shape {
        ShapeConfig::Exponential { lambda } => Ok((-j / lambda).exp()),
        ShapeConfig::TsallisReparam {
            r,
            threshold: Threshold::Gamma(gamma),
        } => exp_r(-j / (gamma * (r - 1.0)), r),
        ShapeConfig::Indicator {
            threshold: Threshold::Gamma(gamma),
        } => Ok(if j <= gamma { 1.0 } else { 0.0 }),
        _ => Err(invalid(
            "bound verification needs a shape that does not depend on the batch (exponential, or Tsallis/indicator with a fixed gamma)",
        )),
    }
}

const ORACLE_SAMPLES: usize = 1_000_000;

/// Runs `trials` independent `M`-sample estimates of `E1 = E[S]` and
/// `E2 = E[S T]`, and compares violation frequencies against the bounds.
/// Ground truth comes from a large-sample oracle.
pub fn verify_bounds_mc(
    problem: &BoundsProblem,
    shape: &ShapeConfig<f64>,
    m: usize,
    trials: usize,
    eps1: f64,
    eps2: f64,
    seed: u64,
) -> Result<ComplexityReport> {
    shape.validate()?;
    if !(problem.sigma > 0.0) {
        return Err(invalid("sigma must be positive"));
    }
    if trials == 0 || m == 0 {
        return Err(invalid("need at least one trial and one sample"));
    }
    let draw = |rng: &mut crate::rng::Rng| -> Result<(f64, f64)> {
        let z: f64 = StandardNormal.sample(rng);
        let u = problem.theta + problem.sigma * z;
        let s = pointwise_shape(problem.cost(u), shape)?;
        Ok((s, u / problem.sigma))
    };

    let mut oracle = rng_from(derive_seed(seed, &[0]));
    let (mut e1, mut e2) = (0.0, 0.0);
    let mut stats = Vec::with_capacity(ORACLE_SAMPLES);
    for _ in 0..ORACLE_SAMPLES {
        let (s, t) = draw(&mut oracle)?;
        e1 += s;
        e2 += s * t;
        stats.push(t);
    }
    e1 /= ORACLE_SAMPLES as f64;
    e2 /= ORACLE_SAMPLES as f64;
    let moments = MomentSet::from_samples(&stats);
    let psi_val = psi(&moments)?;
    let (rho1, rho2) = risk_bounds(eps1, eps2, m, e1, &moments)?;
    let theta_true = e2 / e1;
    let interval = update_error_interval(theta_true, e1, e2, eps1, eps2)?;

    let (mut v1, mut v2, mut covered) = (0usize, 0usize, 0usize);
    for trial in 0..trials {
        let mut rng = rng_from(derive_seed(seed, &[1, trial as u64]));
        let (mut h1, mut h2) = (0.0, 0.0);
        for _ in 0..m {
            let (s, t) = draw(&mut rng)?;
            h1 += s;
            h2 += s * t;
        }
        h1 /= m as f64;
        h2 /= m as f64;
        if (h1 - e1).abs() >= eps1 {
            v1 += 1;
        }
        if (h2 - e2).abs() >= eps2 {
            v2 += 1;
        }
        if h1 > 0.0 {
            let est = h2 / h1;
            if est >= interval.0 && est <= interval.1 {
                covered += 1;
            }
        }
    }
    Ok(ComplexityReport {
        shape: format!("{shape:?}"),
        eps1,
        eps2,
        rho1,
        rho2,
        rho1_literal: rho1_literal(eps1, m),
        e1,
        e2,
        psi: psi_val,
        moments,
        interval,
        samples: m,
        trials,
        violation_freq1: v1 as f64 / trials as f64,
        violation_freq2: v2 as f64 / trials as f64,
        interval_coverage: covered as f64 / trials as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments(m1: f64, m2: f64, m3: f64, m4: f64) -> MomentSet<f64> {
        MomentSet { m1, m2, m3, m4 }
    }

    #[test]
    fn psi_examples() {
        let c: f64 = 1.7;
        assert!(psi(&moments(c, c * c, c.powi(3), c.powi(4))).unwrap().abs() < 1e-12);
        assert!((psi(&moments(0.0, 1.0, 0.0, 3.0)).unwrap() - (3f64.sqrt() + 1.0)).abs() < 1e-15);
        assert_eq!(psi(&moments(0.0, 1.0, 0.0, 1.0)).unwrap(), 2.0);
    }

    #[test]
    fn psi_rejects_inconsistent_moments() {
        assert!(matches!(
            psi(&moments(1.0, 1.0, 5.0, 1.0)),
            Err(Error::MomentInconsistency { .. })
        ));
    }

    #[test]
    fn risk_bound_examples() {
        let g = moments(0.0, 1.0, 0.0, 3.0);
        let (rho1, _) = risk_bounds(0.05, 0.1, 1000, 0.5, &g).unwrap();
        assert!((rho1 - (-5f64).exp()).abs() < 1e-15);
        let (rho1, _) = risk_bounds(0.05, 0.1, 1_000_000_000, 0.5, &g).unwrap();
        assert!(rho1 < 1e-300);
        let rad = moments(0.0, 1.0, 0.0, 1.0);
        let (_, rho2) = risk_bounds(0.05, 0.1, 100, 0.5, &rad).unwrap();
        assert_eq!(rho2, 1.0);
        assert!(risk_bounds(0.6, 0.1, 100, 0.5, &rad).is_err());
    }

    #[test]
    fn interval_examples() {
        assert_eq!(update_error_interval(0.3, 1.0, 2.0, 0.0, 0.0).unwrap(), (0.3, 0.3));
        assert_eq!(update_error_interval(0.3, 1.0, 0.0, 0.5, 0.0).unwrap(), (0.3, 0.3));
        let (lo, hi) = update_error_interval(0.0f64, 1.0, 1.0, 0.5, 0.1).unwrap();
        assert!((hi - 1.2).abs() < 1e-15);
        assert!((lo + 1.0).abs() < 1e-15);
    }

    #[test]
    fn schedule_examples() {
        assert_eq!(schedules(1, 0.7, 0.5, 32, 0.3).unwrap(), (0.7, 32));
        assert_eq!(schedules(4, 1.0, 0.5, 8, 0.0).unwrap(), (0.5, 8));
        assert_eq!(schedules(9, 1.0, 0.0, 8, 0.5).unwrap().1, 24);
        assert!(schedules(0, 1.0, 0.5, 8, 0.0).is_err());
    }

    #[test]
    fn degenerate_cost_never_violates() {
        // q = 0 makes J identically zero, so every S is exactly 1
        let p = BoundsProblem {
            q: 0.0,
            ..BoundsProblem::default()
        };
        let r = verify_bounds_mc(&p, &ShapeConfig::Exponential { lambda: 1.0 }, 50, 20, 0.1, 0.5, 3).unwrap();
        assert_eq!(r.violation_freq1, 0.0);
        assert_eq!(r.e1, 1.0);
    }

    #[test]
    fn batch_dependent_shapes_are_rejected() {
        let shape = ShapeConfig::NormalizedExponential { lambda: 1.0 };
        assert!(verify_bounds_mc(&BoundsProblem::default(), &shape, 10, 1, 0.1, 0.5, 0).is_err());
    }
}
