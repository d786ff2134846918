//! Cost-to-weight transforms.
//!
//! Every sampling optimizer in this crate reduces to the same step: map a batch
//! of trajectory costs `J^m` through a non-decreasing shape function of `-J`
//! and normalize. The variants below cover the exponential (path-integral)
//! law, its min-max normalized form, the reparameterized deformed exponential,
//! a soft elite sigmoid and the hard elite indicator.

use crate::error::{invalid, Error, Result};
use crate::scalar::Real;

/// Cost threshold for the thresholded shapes: either an absolute cost or an
/// elite fraction resolved against each batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Threshold<T> {
    Gamma(T),
    EliteFraction(T),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ShapeConfig<T> {
    /// `exp(-J / lambda)`
    Exponential { lambda: T },
    /// `exp(-(J - min J) / ((max J - min J) * lambda))`
    NormalizedExponential { lambda: T },
    /// `(1 - J / gamma)_+^{1 / (r - 1)}`
    TsallisReparam { r: T, threshold: Threshold<T> },
    /// `1 / (1 + exp(-kappa * (-J - phi)))`, `phi` the `(1 - rho)`-quantile of `-J`.
    Sigmoid { kappa: T, quantile_rho: T },
    /// `1{J <= gamma}`
    Indicator { threshold: Threshold<T> },
}

impl<T: Real> ShapeConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: T| {
            if v > T::zero() && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(format!("{name} must be positive and finite, got {v}")))
            }
        };
        match *self {
            Self::Exponential { lambda } | Self::NormalizedExponential { lambda } => {
                positive("lambda", lambda)
            }
            Self::TsallisReparam { r, threshold } => {
                if !(r > T::one()) || !r.is_finite() {
                    return Err(invalid(format!("tsallis r must be > 1, got {r}")));
                }
                validate_threshold(threshold)
            }
            Self::Sigmoid { kappa, quantile_rho } => {
                positive("kappa", kappa)?;
                if quantile_rho > T::zero() && quantile_rho < T::one() {
                    Ok(())
                } else {
                    Err(invalid(format!("quantile rho must lie in (0,1), got {quantile_rho}")))
                }
            }
            Self::Indicator { threshold } => validate_threshold(threshold),
        }
    }

    /// Shape used when every weight of a batch comes out zero.
    pub fn fallback(&self) -> Self {
        let lambda = match *self {
            Self::Exponential { lambda } | Self::NormalizedExponential { lambda } => lambda,
            _ => T::lit(0.1),
        };
        Self::NormalizedExponential { lambda }
    }
}

fn validate_threshold<T: Real>(threshold: Threshold<T>) -> Result<()> {
    match threshold {
        Threshold::Gamma(g) if g > T::zero() && g.is_finite() => Ok(()),
        Threshold::Gamma(g) => Err(invalid(format!("gamma must be positive, got {g}"))),
        Threshold::EliteFraction(f) if f > T::zero() && f <= T::one() => Ok(()),
        Threshold::EliteFraction(f) => Err(invalid(format!(
            "elite fraction must lie in (0,1], got {f}"
        ))),
    }
}

/// Normalized, non-negative sample weights.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightVector<T>(Vec<T>);

impl<T: Real> WeightVector<T> {
    /// Normalizes non-negative unnormalized weights. Fails with
    /// [`Error::DegenerateWeights`] when they sum to zero.
    pub fn normalize(raw: Vec<T>, costs: &[T]) -> Result<Self> {
        let total: T = raw.iter().copied().sum();
        if !(total > T::zero()) || !total.is_finite() {
            return Err(degenerate(costs));
        }
        Ok(Self(raw.into_iter().map(|w| w / total).collect()))
    }

    pub fn uniform(m: usize) -> Self {
        Self(vec![T::one() / T::count(m); m])
    }

    /// Wraps weights that are already normalized. Used by tests and by callers
    /// that build weights by hand.
    pub fn from_normalized(weights: Vec<T>) -> Result<Self> {
        if weights.iter().any(|w| !(*w >= T::zero())) {
            return Err(invalid("weights must be non-negative"));
        }
        let total: T = weights.iter().copied().sum();
        if (total - T::one()).abs() > T::lit(1e-6) {
            return Err(invalid(format!("weights sum to {total}, expected 1")));
        }
        Ok(Self(weights))
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `1 / sum w^2`
    pub fn effective_sample_size(&self) -> T {
        T::one() / self.0.iter().map(|&w| w * w).sum::<T>()
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }
}

fn degenerate<T: Real>(costs: &[T]) -> Error {
    Error::DegenerateWeights {
        costs: costs.iter().map(|c| c.to_f64_lossy()).collect(),
    }
}

/// Deformed exponential `(1 + (r-1) x)_+^{1/(r-1)}`.
pub fn exp_r<T: Real>(x: T, r: T) -> Result<T> {
    if !x.is_finite() || !r.is_finite() {
        return Err(invalid("exp_r requires finite arguments"));
    }
    if !(r > T::one()) {
        return Err(invalid(format!("exp_r requires r > 1, got {r}")));
    }
    let base = T::one() + (r - T::one()) * x;
    if base <= T::zero() {
        Ok(T::zero())
    } else {
        Ok(base.powf(T::one() / (r - T::one())))
    }
}

/// The `ceil(fraction * M)`-th smallest cost.
pub fn elite_threshold<T: Real>(costs: &[T], elite_fraction: T) -> Result<T> {
    if costs.is_empty() {
        return Err(invalid("elite threshold of an empty batch"));
    }
    if !(elite_fraction > T::zero() && elite_fraction <= T::one()) {
        return Err(invalid(format!(
            "elite fraction must lie in (0,1], got {elite_fraction}"
        )));
    }
    let mut sorted = costs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite costs"));
    Ok(sorted[nearest_rank(sorted.len(), elite_fraction)])
}

/// Zero-based index of the `ceil(p * n)`-th order statistic, clamped to `[0, n)`.
fn nearest_rank<T: Real>(n: usize, p: T) -> usize {
    let x = (p * T::count(n)).to_f64_lossy();
    // absorb rounding such as 0.1 * 30 = 3.0000000000000004
    let rank = (x - 1e-9).ceil().max(1.0) as usize;
    rank.min(n) - 1
}

fn resolve<T: Real>(threshold: Threshold<T>, costs: &[T]) -> Result<T> {
    match threshold {
        Threshold::Gamma(g) => Ok(g),
        Threshold::EliteFraction(f) => elite_threshold(costs, f),
    }
}

/// Maps a cost batch to normalized weights `w^m ∝ S(-J^m)`.
pub fn compute_weights<T: Real>(costs: &[T], cfg: &ShapeConfig<T>) -> Result<WeightVector<T>> {
    if costs.is_empty() {
        return Err(invalid("cannot weight an empty cost batch"));
    }
    if costs.iter().any(|c| !c.is_finite()) {
        return Err(invalid("costs must be finite"));
    }
    cfg.validate()?;
    let m = costs.len();
    let min = costs.iter().copied().fold(T::infinity(), T::min);
    let max = costs.iter().copied().fold(T::neg_infinity(), T::max);

    let raw: Vec<T> = match *cfg {
        ShapeConfig::Exponential { lambda } => {
            // shifting by the minimum cancels in the normalization
            costs.iter().map(|&j| (-(j - min) / lambda).exp()).collect()
        }
        ShapeConfig::NormalizedExponential { lambda } => {
            let range = max - min;
            if !(range > T::zero()) {
                return Ok(WeightVector::uniform(m));
            }
            costs
                .iter()
                .map(|&j| (-((j - min) / range) / lambda).exp())
                .collect()
        }
        ShapeConfig::TsallisReparam { r, threshold } => {
            let gamma = resolve(threshold, costs)?;
            if !(gamma > T::zero()) {
                return Err(degenerate(costs));
            }
            let inv = T::one() / (r - T::one());
            // log-domain: (1 - J/gamma)^{1/(r-1)} underflows for r near 1
            let logs: Vec<T> = costs
                .iter()
                .map(|&j| {
                    if j < gamma {
                        (-j / gamma).ln_1p() * inv
                    } else {
                        T::neg_infinity()
                    }
                })
                .collect();
            let top = logs.iter().copied().fold(T::neg_infinity(), T::max);
            if top == T::neg_infinity() {
                return Err(degenerate(costs));
            }
            logs.into_iter().map(|l| (l - top).exp()).collect()
        }
        ShapeConfig::Sigmoid { kappa, quantile_rho } => {
            let mut neg: Vec<T> = costs.iter().map(|&j| -j).collect();
            neg.sort_by(|a, b| a.partial_cmp(b).expect("finite costs"));
            let phi = neg[nearest_rank(m, T::one() - quantile_rho)];
            costs
                .iter()
                .map(|&j| logistic(kappa * (-j - phi)))
                .collect()
        }
        ShapeConfig::Indicator { threshold } => {
            let gamma = resolve(threshold, costs)?;
            costs
                .iter()
                .map(|&j| if j <= gamma { T::one() } else { T::zero() })
                .collect()
        }
    };
    WeightVector::normalize(raw, costs)
}

/// Like [`compute_weights`], retrying with the normalized exponential when the
/// configured shape zeroes every sample. The flag reports whether the
/// fallback fired.
pub fn compute_weights_with_fallback<T: Real>(
    costs: &[T],
    cfg: &ShapeConfig<T>,
) -> Result<(WeightVector<T>, bool)> {
    match compute_weights(costs, cfg) {
        Ok(w) => Ok((w, false)),
        Err(Error::DegenerateWeights { .. }) => {
            compute_weights(costs, &cfg.fallback()).map(|w| (w, true))
        }
        Err(e) => Err(e),
    }
}

fn logistic<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
