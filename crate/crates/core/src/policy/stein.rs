use crate::error::{invalid, Result};
use crate::linalg::Matrix;
use crate::scalar::Real;
use crate::shape::WeightVector;
use crate::trajectory::Trajectory;

use super::gaussian::check_batch;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Bandwidth<T> {
    /// Per-step median of squared particle distances over `ln(L + 1)`.
    MedianHeuristic,
    Fixed(T),
}

const MIN_BANDWIDTH: f64 = 1e-3;

/// Particle set of mean trajectories, each perturbed by a fixed Gaussian for
/// rollouts and moved by a kernelized weighted score.
#[derive(Clone, Debug, PartialEq)]
pub struct SteinPolicy<T> {
    pub particles: Vec<Trajectory<T>>,
    /// Rollout covariance per step.
    pub rollout_covariances: Vec<Matrix<T>>,
    pub step_size: T,
    pub rollouts_per_particle: usize,
    pub bandwidth: Bandwidth<T>,
}

impl<T: Real> SteinPolicy<T> {
    pub fn new(
        particles: Vec<Trajectory<T>>,
        rollout_covariance: &Matrix<T>,
        step_size: T,
        rollouts_per_particle: usize,
        bandwidth: Bandwidth<T>,
    ) -> Result<Self> {
        let Some(first) = particles.first() else {
            return Err(invalid("a Stein policy needs at least one particle"));
        };
        let (dim, horizon) = (first.dim(), first.len());
        if particles.iter().any(|p| p.dim() != dim || p.len() != horizon) {
            return Err(invalid("particles must share a shape"));
        }
        if rollout_covariance.dim() != dim || rollout_covariance.cholesky().is_none() {
            return Err(invalid("rollout covariance must be positive definite of the control dimension"));
        }
        if !(step_size > T::zero()) {
            return Err(invalid("Stein step size must be positive"));
        }
        if rollouts_per_particle == 0 {
            return Err(invalid("rollouts per particle must be at least 1"));
        }
        if let Bandwidth::Fixed(h) = bandwidth {
            if !(h > T::zero()) {
                return Err(invalid("kernel bandwidth must be positive"));
            }
        }
        Ok(Self {
            rollout_covariances: vec![rollout_covariance.clone(); horizon],
            particles,
            step_size,
            rollouts_per_particle,
            bandwidth,
        })
    }

    pub fn num_particles(&self) -> usize {
        self.particles.len()
    }

    pub fn control_dim(&self) -> usize {
        self.particles[0].dim()
    }

    pub fn horizon(&self) -> usize {
        self.particles[0].len()
    }

    pub fn num_samples(&self) -> usize {
        self.num_particles() * self.rollouts_per_particle
    }

    /// Kernel bandwidth per step.
    pub fn bandwidths(&self) -> Vec<T> {
        match self.bandwidth {
            Bandwidth::Fixed(h) => vec![h; self.horizon()],
            Bandwidth::MedianHeuristic => {
                let l = self.num_particles();
                if l < 2 {
                    return vec![T::one(); self.horizon()];
                }
                let denom = T::count(l + 1).ln();
                (0..self.horizon())
                    .map(|t| {
                        let mut d = Vec::with_capacity(l * (l - 1) / 2);
                        for a in 0..l {
                            for b in (a + 1)..l {
                                d.push(sq_dist(self.particles[a].col(t), self.particles[b].col(t)));
                            }
                        }
                        d.sort_by(|x, y| x.partial_cmp(y).expect("finite particles"));
                        let n = d.len();
                        let med = if n % 2 == 1 {
                            d[n / 2]
                        } else {
                            (d[n / 2 - 1] + d[n / 2]) * T::lit(0.5)
                        };
                        (med / denom).max(T::lit(MIN_BANDWIDTH))
                    })
                    .collect()
            }
        }
    }

    /// Block-weighted score `G(Theta_l)` for every particle. Blocks whose
    /// weights sum to zero get a zero score.
    pub fn scores(&self, samples: &[Trajectory<T>], weights: &[T]) -> Vec<Trajectory<T>> {
        let s_per = self.rollouts_per_particle;
        let chol: Vec<_> = self
            .rollout_covariances
            .iter()
            .map(|c| c.cholesky().expect("rollout covariance is positive definite"))
            .collect();
        let mut diff = vec![T::zero(); self.control_dim()];
        self.particles
            .iter()
            .enumerate()
            .map(|(l, theta)| {
                let block = l * s_per..(l + 1) * s_per;
                let wsum: T = weights[block.clone()].iter().copied().sum();
                let mut g = Trajectory::zeros(theta.dim(), theta.len());
                if !(wsum > T::zero()) {
                    return g;
                }
                for t in 0..theta.len() {
                    let mut acc = vec![T::zero(); theta.dim()];
                    for m in block.clone() {
                        let w = weights[m] / wsum;
                        if w == T::zero() {
                            continue;
                        }
                        for ((d, &u), &c) in diff.iter_mut().zip(samples[m].col(t)).zip(theta.col(t)) {
                            *d = u - c;
                        }
                        for (a, s) in acc.iter_mut().zip(chol[t].solve(&diff)) {
                            *a += w * s;
                        }
                    }
                    g.col_mut(t).copy_from_slice(&acc);
                }
                g
            })
            .collect()
    }
}

fn sq_dist<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// One kernelized particle step:
/// `Theta_l += eps / L * sum_j [k(Theta_j, Theta_l) G(Theta_j) + grad_{Theta_j} k(Theta_j, Theta_l)]`
/// with `k(a, b) = sum_t exp(-|a_t - b_t|^2 / h_t)`.
pub fn stein_update<T: Real>(
    samples: &[Trajectory<T>],
    weights: &WeightVector<T>,
    prev: &SteinPolicy<T>,
) -> Result<SteinPolicy<T>> {
    check_batch(samples, weights, prev.control_dim(), prev.horizon())?;
    if samples.len() != prev.num_samples() {
        return Err(invalid(format!(
            "expected {} samples ({} particles x {}), got {}",
            prev.num_samples(),
            prev.num_particles(),
            prev.rollouts_per_particle,
            samples.len()
        )));
    }
    let g = prev.scores(samples, weights.as_slice());
    let h = prev.bandwidths();
    let l_count = prev.num_particles();
    let horizon = prev.horizon();
    let scale = prev.step_size / T::count(l_count);
    let two = T::lit(2.0);

    let mut next = prev.clone();
    for (l, target) in prev.particles.iter().enumerate() {
        let mut delta = Trajectory::zeros(target.dim(), horizon);
        for (j, source) in prev.particles.iter().enumerate() {
            let k_t: Vec<T> = (0..horizon)
                .map(|t| (-sq_dist(source.col(t), target.col(t)) / h[t]).exp())
                .collect();
            let k_hat: T = k_t.iter().copied().sum();
            for t in 0..horizon {
                let d = delta.col_mut(t);
                for (i, x) in d.iter_mut().enumerate() {
                    let grad = -two * (source.col(t)[i] - target.col(t)[i]) / h[t] * k_t[t];
                    *x += k_hat * g[j].col(t)[i] + grad;
                }
            }
        }
        for (p, d) in next.particles[l]
            .as_mut_slice()
            .iter_mut()
            .zip(delta.as_slice())
        {
            *p += scale * *d;
        }
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(values: &[f64]) -> Vec<Trajectory<f64>> {
        values
            .iter()
            .map(|&v| Trajectory::from_columns(1, &[vec![v]]))
            .collect()
    }

    #[test]
    fn single_particle_hand_example() {
        let p = SteinPolicy::new(
            vec![Trajectory::zeros(1, 1)],
            &Matrix::identity(1),
            0.5,
            2,
            Bandwidth::MedianHeuristic,
        )
        .unwrap();
        let w = WeightVector::from_normalized(vec![0.8, 0.2]).unwrap();
        let next = stein_update(&scalar(&[1.0, -1.0]), &w, &p).unwrap();
        assert!((next.particles[0].col(0)[0] - 0.5 * 0.6).abs() < 1e-15);
    }

    #[test]
    fn single_particle_kernel_sums_over_horizon() {
        let theta = Trajectory::zeros(1, 3);
        let p = SteinPolicy::new(vec![theta], &Matrix::identity(1), 1.0, 1, Bandwidth::MedianHeuristic)
            .unwrap();
        let sample = Trajectory::constant(&[1.0], 3);
        let next = stein_update(&[sample], &WeightVector::uniform(1), &p).unwrap();
        // k(theta, theta) = T' = 3, G = 1 at every step
        assert_eq!(next.particles[0].as_slice(), &[3.0, 3.0, 3.0]);
    }

    #[test]
    fn coincident_particles_move_together() {
        let theta = Trajectory::from_columns(1, &[vec![0.2]]);
        let p = SteinPolicy::new(
            vec![theta.clone(), theta],
            &Matrix::identity(1),
            0.1,
            2,
            Bandwidth::MedianHeuristic,
        )
        .unwrap();
        let samples = scalar(&[1.0, 0.0, 1.0, 0.0]);
        let next = stein_update(&samples, &WeightVector::uniform(4), &p).unwrap();
        assert_eq!(next.particles[0], next.particles[1]);
    }

    #[test]
    fn wrong_sample_count_is_rejected() {
        let p = SteinPolicy::new(
            vec![Trajectory::zeros(1, 1); 2],
            &Matrix::identity(1),
            0.1,
            3,
            Bandwidth::MedianHeuristic,
        )
        .unwrap();
        assert!(stein_update(&scalar(&[0.0; 4]), &WeightVector::uniform(4), &p).is_err());
    }
}
