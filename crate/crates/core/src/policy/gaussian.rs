use crate::error::{invalid, Result};
use crate::linalg::Matrix;
use crate::scalar::Real;
use crate::shape::WeightVector;
use crate::trajectory::Trajectory;

/// Time-varying Gaussian over control trajectories, independent across steps.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPolicy<T> {
    pub means: Trajectory<T>,
    pub covariances: Vec<Matrix<T>>,
    pub covariance_floor: T,
    /// Mean smoothing `beta`: the new mean is `(1 - beta) * old + beta * fitted`.
    pub smoothing: T,
    /// Keep the covariances fixed and update only the means.
    pub fixed_covariance: bool,
}

impl<T: Real> GaussianPolicy<T> {
    pub fn new(means: Trajectory<T>, covariance: &Matrix<T>, covariance_floor: T) -> Result<Self> {
        if covariance.dim() != means.dim() {
            return Err(invalid("covariance and mean dimensions differ"));
        }
        let floored = covariance.floor_eigenvalues(covariance_floor);
        Ok(Self {
            covariances: vec![floored; means.len()],
            means,
            covariance_floor,
            smoothing: T::one(),
            fixed_covariance: false,
        })
    }

    pub fn with_smoothing(mut self, beta: T) -> Self {
        self.smoothing = beta;
        self
    }

    pub fn with_fixed_covariance(mut self, fixed: bool) -> Self {
        self.fixed_covariance = fixed;
        self
    }

    pub fn control_dim(&self) -> usize {
        self.means.dim()
    }

    pub fn horizon(&self) -> usize {
        self.means.len()
    }
}

/// Weighted mean and covariance of `samples` at every step, with the
/// covariance eigenvalue-floored (or kept, for a fixed-covariance policy)
/// and the mean optionally smoothed.
pub fn ug_update<T: Real>(
    samples: &[Trajectory<T>],
    weights: &WeightVector<T>,
    prev: &GaussianPolicy<T>,
) -> Result<GaussianPolicy<T>> {
    check_batch(samples, weights, prev.control_dim(), prev.horizon())?;
    let (means, covs) = weighted_moments(samples, weights.as_slice(), prev.covariance_floor);
    let beta = prev.smoothing;
    let means = if beta == T::one() {
        means
    } else {
        let mut out = prev.means.clone();
        for (o, n) in out.as_mut_slice().iter_mut().zip(means.as_slice()) {
            *o = (T::one() - beta) * *o + beta * *n;
        }
        out
    };
    Ok(GaussianPolicy {
        means,
        covariances: if prev.fixed_covariance { prev.covariances.clone() } else { covs },
        covariance_floor: prev.covariance_floor,
        smoothing: prev.smoothing,
        fixed_covariance: prev.fixed_covariance,
    })
}

pub(crate) fn check_batch<T: Real>(
    samples: &[Trajectory<T>],
    weights: &WeightVector<T>,
    dim: usize,
    horizon: usize,
) -> Result<()> {
    if samples.len() != weights.len() {
        return Err(invalid(format!(
            "{} samples but {} weights",
            samples.len(),
            weights.len()
        )));
    }
    if samples.iter().any(|s| s.dim() != dim || s.len() != horizon) {
        return Err(invalid("sample shape does not match the policy"));
    }
    Ok(())
}

/// Per-step weighted mean and floored covariance. Weights need not be
/// normalized; they are divided by their total.
pub(crate) fn weighted_moments<T: Real>(
    samples: &[Trajectory<T>],
    weights: &[T],
    floor: T,
) -> (Trajectory<T>, Vec<Matrix<T>>) {
    let dim = samples[0].dim();
    let horizon = samples[0].len();
    let total: T = weights.iter().copied().sum();
    let mut means = Trajectory::zeros(dim, horizon);
    let mut covs = Vec::with_capacity(horizon);
    let mut diff = vec![T::zero(); dim];
    for t in 0..horizon {
        let mean = means.col_mut(t);
        for (s, &w) in samples.iter().zip(weights) {
            if w == T::zero() {
                continue;
            }
            for (m, &u) in mean.iter_mut().zip(s.col(t)) {
                *m += w * u;
            }
        }
        mean.iter_mut().for_each(|m| *m /= total);
        let mut cov = Matrix::zeros(dim);
        for (s, &w) in samples.iter().zip(weights) {
            if w == T::zero() {
                continue;
            }
            for ((d, &u), &m) in diff.iter_mut().zip(s.col(t)).zip(means.col(t)) {
                *d = u - m;
            }
            cov.add_outer(&diff, w / total);
        }
        covs.push(cov.floor_eigenvalues(floor));
    }
    (means, covs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_samples(values: &[f64]) -> Vec<Trajectory<f64>> {
        values
            .iter()
            .map(|&v| Trajectory::from_columns(1, &[vec![v]]))
            .collect()
    }

    fn prior() -> GaussianPolicy<f64> {
        GaussianPolicy::new(Trajectory::zeros(1, 1), &Matrix::identity(1), 1e-6).unwrap()
    }

    #[test]
    fn hand_weighted_moments() {
        let samples = scalar_samples(&[1.0, 3.0]);
        let w = WeightVector::from_normalized(vec![0.75, 0.25]).unwrap();
        let p = ug_update(&samples, &w, &prior()).unwrap();
        assert!((p.means.col(0)[0] - 1.5).abs() < 1e-15);
        assert!((p.covariances[0][(0, 0)] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn point_mass_weight_collapses_to_floor() {
        let samples = scalar_samples(&[2.0, 5.0, -1.0]);
        let w = WeightVector::from_normalized(vec![1.0, 0.0, 0.0]).unwrap();
        let p = ug_update(&samples, &w, &prior()).unwrap();
        assert_eq!(p.means.col(0)[0], 2.0);
        assert_eq!(p.covariances[0][(0, 0)], 1e-6);
    }

    #[test]
    fn smoothing_blends_means() {
        let samples = scalar_samples(&[4.0]);
        let w = WeightVector::from_normalized(vec![1.0]).unwrap();
        let p = ug_update(&samples, &w, &prior().with_smoothing(0.25)).unwrap();
        assert!((p.means.col(0)[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mismatched_batch_is_rejected() {
        let samples = scalar_samples(&[1.0, 2.0]);
        let w = WeightVector::from_normalized(vec![1.0]).unwrap();
        assert!(ug_update(&samples, &w, &prior()).is_err());
    }
}
