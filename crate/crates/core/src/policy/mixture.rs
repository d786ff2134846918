use crate::error::{invalid, Result};
use crate::linalg::{Cholesky, Matrix};
use crate::scalar::Real;
use crate::shape::WeightVector;
use crate::trajectory::Trajectory;

use super::gaussian::check_batch;

/// Gaussian mixture over controls with per-step component means and
/// covariances and one set of mixing weights shared across the horizon.
#[derive(Clone, Debug, PartialEq)]
pub struct MixturePolicy<T> {
    pub mixture_weights: Vec<T>,
    /// `means[l]` is the mean trajectory of mode `l`.
    pub means: Vec<Trajectory<T>>,
    /// `covariances[l][t]`
    pub covariances: Vec<Vec<Matrix<T>>>,
    pub covariance_floor: T,
    /// Covariance given to a mode that is reinitialized after emptying.
    pub reset_covariance: Matrix<T>,
}

/// Result of an EM update. `reinitialized` lists modes that received no
/// weight and were relocated.
#[derive(Clone, Debug)]
pub struct MixtureUpdate<T> {
    pub policy: MixturePolicy<T>,
    pub reinitialized: Vec<usize>,
}

const EMPTY_MODE: f64 = 1e-12;

impl<T: Real> MixturePolicy<T> {
    /// Equal-weight mixture with the given mode means and a shared covariance.
    pub fn new(means: Vec<Trajectory<T>>, covariance: &Matrix<T>, covariance_floor: T) -> Result<Self> {
        let Some(first) = means.first() else {
            return Err(invalid("a mixture needs at least one mode"));
        };
        let (dim, horizon) = (first.dim(), first.len());
        if means.iter().any(|m| m.dim() != dim || m.len() != horizon) {
            return Err(invalid("mixture modes must share a shape"));
        }
        if covariance.dim() != dim {
            return Err(invalid("covariance and mean dimensions differ"));
        }
        let cov = covariance.floor_eigenvalues(covariance_floor);
        let l = means.len();
        Ok(Self {
            mixture_weights: vec![T::one() / T::count(l); l],
            covariances: vec![vec![cov.clone(); horizon]; l],
            means,
            covariance_floor,
            reset_covariance: cov,
        })
    }

    pub fn num_modes(&self) -> usize {
        self.means.len()
    }

    pub fn control_dim(&self) -> usize {
        self.means[0].dim()
    }

    pub fn horizon(&self) -> usize {
        self.means[0].len()
    }

    /// Mode with the largest mixing weight (lowest index on ties).
    pub fn dominant_mode(&self) -> usize {
        let mut best = 0;
        for (l, &p) in self.mixture_weights.iter().enumerate() {
            if p > self.mixture_weights[best] {
                best = l;
            }
        }
        best
    }

    fn factors(&self) -> Vec<Vec<Cholesky<T>>> {
        self.covariances
            .iter()
            .map(|per_t| {
                per_t
                    .iter()
                    .map(|c| c.cholesky().expect("floored covariance is positive definite"))
                    .collect()
            })
            .collect()
    }

    /// `sum_m w_m sum_t log sum_l phi_l N(u_t^m; mu_lt, Sigma_lt)`
    pub fn weighted_log_likelihood(&self, samples: &[Trajectory<T>], weights: &[T]) -> T {
        let chol = self.factors();
        let mut total = T::zero();
        let mut logs = vec![T::zero(); self.num_modes()];
        for (s, &w) in samples.iter().zip(weights) {
            if w == T::zero() {
                continue;
            }
            for t in 0..self.horizon() {
                for (l, lg) in logs.iter_mut().enumerate() {
                    *lg = self.mixture_weights[l].ln()
                        + chol[l][t].log_gaussian(s.col(t), self.means[l].col(t));
                }
                total += w * log_sum_exp(&logs);
            }
        }
        total
    }
}

fn log_sum_exp<T: Real>(v: &[T]) -> T {
    let top = v.iter().copied().fold(T::neg_infinity(), T::max);
    if top == T::neg_infinity() {
        return top;
    }
    top + v.iter().map(|&x| (x - top).exp()).sum::<T>().ln()
}

/// Weighted EM for the mixture, `em_iters` rounds of E-step responsibilities
/// followed by closed-form M-step updates.
pub fn gmm_em_update<T: Real>(
    samples: &[Trajectory<T>],
    weights: &WeightVector<T>,
    prev: &MixturePolicy<T>,
    em_iters: usize,
) -> Result<MixtureUpdate<T>> {
    if em_iters == 0 {
        return Err(invalid("em_iters must be at least 1"));
    }
    check_batch(samples, weights, prev.control_dim(), prev.horizon())?;
    let w = weights.as_slice();
    let mut policy = prev.clone();
    let mut reinitialized = Vec::new();
    for _ in 0..em_iters {
        em_step(samples, w, &mut policy, &mut reinitialized);
    }
    reinitialized.sort_unstable();
    reinitialized.dedup();
    Ok(MixtureUpdate {
        policy,
        reinitialized,
    })
}

fn em_step<T: Real>(
    samples: &[Trajectory<T>],
    w: &[T],
    policy: &mut MixturePolicy<T>,
    reinitialized: &mut Vec<usize>,
) {
    let modes = policy.num_modes();
    let horizon = policy.horizon();
    let dim = policy.control_dim();
    let chol = policy.factors();
    let log_phi: Vec<T> = policy.mixture_weights.iter().map(|p| p.ln()).collect();

    // resp[t][l][m] = eta_l(u_t^m) * w_m
    let mut resp = vec![vec![vec![T::zero(); samples.len()]; modes]; horizon];
    let mut logs = vec![T::zero(); modes];
    for t in 0..horizon {
        for (m, s) in samples.iter().enumerate() {
            if w[m] == T::zero() {
                continue;
            }
            for l in 0..modes {
                logs[l] = log_phi[l] + chol[l][t].log_gaussian(s.col(t), policy.means[l].col(t));
            }
            let norm = log_sum_exp(&logs);
            for l in 0..modes {
                resp[t][l][m] = (logs[l] - norm).exp() * w[m];
            }
        }
    }

    let counts: Vec<Vec<T>> = (0..modes)
        .map(|l| (0..horizon).map(|t| resp[t][l].iter().copied().sum()).collect())
        .collect();
    let totals: Vec<T> = counts.iter().map(|c| c.iter().copied().sum()).collect();
    let grand: T = totals.iter().copied().sum();

    let best = w
        .iter()
        .enumerate()
        .fold(0, |b, (m, &x)| if x > w[b] { m } else { b });
    let empty = T::lit(EMPTY_MODE);

    let mut diff = vec![T::zero(); dim];
    for l in 0..modes {
        if totals[l] < empty {
            policy.means[l] = samples[best].clone();
            policy.covariances[l] = vec![policy.reset_covariance.clone(); horizon];
            reinitialized.push(l);
            continue;
        }
        for t in 0..horizon {
            let n_lt = counts[l][t];
            if n_lt < empty {
                continue;
            }
            let mean = policy.means[l].col_mut(t);
            mean.iter_mut().for_each(|x| *x = T::zero());
            for (s, &r) in samples.iter().zip(&resp[t][l]) {
                if r == T::zero() {
                    continue;
                }
                for (x, &u) in mean.iter_mut().zip(s.col(t)) {
                    *x += r * u;
                }
            }
            mean.iter_mut().for_each(|x| *x /= n_lt);
            let mut cov = Matrix::zeros(dim);
            for (s, &r) in samples.iter().zip(&resp[t][l]) {
                if r == T::zero() {
                    continue;
                }
                for ((d, &u), &m) in diff.iter_mut().zip(s.col(t)).zip(policy.means[l].col(t)) {
                    *d = u - m;
                }
                cov.add_outer(&diff, r / n_lt);
            }
            policy.covariances[l][t] = cov.floor_eigenvalues(policy.covariance_floor);
        }
    }

    let mut phi: Vec<T> = totals.iter().map(|&n| n / grand).collect();
    for (l, p) in phi.iter_mut().enumerate() {
        if totals[l] < empty || !p.is_finite() {
            *p = T::one() / T::count(modes);
        }
    }
    let sum: T = phi.iter().copied().sum();
    policy.mixture_weights = phi.into_iter().map(|p| p / sum).collect();
}
