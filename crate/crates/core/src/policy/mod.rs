//! Policy distributions over control trajectories and their weighted-sample
//! update laws.

mod gaussian;
mod mixture;
mod stein;

pub use gaussian::{ug_update, GaussianPolicy};
pub use mixture::{gmm_em_update, MixturePolicy, MixtureUpdate};
pub use stein::{stein_update, Bandwidth, SteinPolicy};

use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Result};
use crate::linalg::{Cholesky, Matrix};
use crate::rng::{derive_seed, rng_from, Rng};
use crate::scalar::Real;
use crate::shape::WeightVector;
use crate::trajectory::Trajectory;

const MODE_STREAM: u64 = 0x6d6f_6465;

#[derive(Clone, Debug, PartialEq)]
pub enum Policy<T> {
    Gaussian(GaussianPolicy<T>),
    Mixture(MixturePolicy<T>),
    Stein(SteinPolicy<T>),
}

/// Side information from a policy update.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct UpdateEvents {
    pub reinitialized_modes: Vec<usize>,
}

/// Where a control block of a remapped policy comes from.
#[derive(Clone, Copy, Debug)]
pub enum BlockSource<'a, T> {
    /// Block index in the old layout.
    Keep(usize),
    /// New block seeded with this mean trajectory and the initial covariance.
    Insert(&'a Trajectory<T>),
}

impl<T: Real> Policy<T> {
    pub fn control_dim(&self) -> usize {
        match self {
            Self::Gaussian(p) => p.control_dim(),
            Self::Mixture(p) => p.control_dim(),
            Self::Stein(p) => p.control_dim(),
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            Self::Gaussian(p) => p.horizon(),
            Self::Mixture(p) => p.horizon(),
            Self::Stein(p) => p.horizon(),
        }
    }

    /// Number of samples the policy needs per batch, if it fixes one.
    pub fn required_samples(&self) -> Option<usize> {
        match self {
            Self::Stein(p) => Some(p.num_samples()),
            _ => None,
        }
    }

    /// Mean executed by the test rollout. Stein policies have one candidate
    /// per particle, see [`Policy::candidate_means`].
    pub fn nominal(&self) -> &Trajectory<T> {
        match self {
            Self::Gaussian(p) => &p.means,
            Self::Mixture(p) => &p.means[p.dominant_mode()],
            Self::Stein(p) => &p.particles[0],
        }
    }

    pub fn candidate_means(&self) -> Vec<&Trajectory<T>> {
        match self {
            Self::Stein(p) => p.particles.iter().collect(),
            _ => vec![self.nominal()],
        }
    }

    pub fn update(
        &self,
        samples: &[Trajectory<T>],
        weights: &WeightVector<T>,
        em_iters: usize,
    ) -> Result<(Self, UpdateEvents)> {
        Ok(match self {
            Self::Gaussian(p) => (Self::Gaussian(ug_update(samples, weights, p)?), UpdateEvents::default()),
            Self::Mixture(p) => {
                let out = gmm_em_update(samples, weights, p, em_iters)?;
                (
                    Self::Mixture(out.policy),
                    UpdateEvents {
                        reinitialized_modes: out.reinitialized,
                    },
                )
            }
            Self::Stein(p) => (Self::Stein(stein_update(samples, weights, p)?), UpdateEvents::default()),
        })
    }

    /// Receding-horizon warm start: drop the first step, repeat the last mean
    /// and covariance, and pull covariances toward `initial` by `blend`.
    pub fn recede(&mut self, initial: &Matrix<T>, blend: T) {
        let relax = |covs: &mut Vec<Matrix<T>>, floor: T| {
            if covs.is_empty() {
                return;
            }
            covs.remove(0);
            covs.push(covs.last().cloned().unwrap_or_else(|| initial.clone()));
            for c in covs.iter_mut() {
                *c = c.blend(T::one() - blend, initial, blend).floor_eigenvalues(floor);
            }
        };
        match self {
            Self::Gaussian(p) => {
                p.means.shift_repeat_last();
                relax(&mut p.covariances, p.covariance_floor);
            }
            Self::Mixture(p) => {
                for m in &mut p.means {
                    m.shift_repeat_last();
                }
                for c in &mut p.covariances {
                    relax(c, p.covariance_floor);
                }
            }
            Self::Stein(p) => {
                for m in &mut p.particles {
                    m.shift_repeat_last();
                }
            }
        }
    }

    /// Rebuilds the policy for a new block layout of the augmented controls.
    /// Kept blocks retain their means and covariance entries (including
    /// cross-covariances between kept blocks); inserted blocks get the given
    /// mean and `initial_block` as covariance.
    pub fn remap_blocks(&self, block_dim: usize, plan: &[BlockSource<'_, T>], initial_block: &Matrix<T>) -> Self {
        let remap_mean = |old: &Trajectory<T>| {
            let parts: Vec<Trajectory<T>> = plan
                .iter()
                .map(|src| match *src {
                    BlockSource::Keep(b) => old.rows(b * block_dim, block_dim),
                    BlockSource::Insert(traj) => traj.clone(),
                })
                .collect();
            let refs: Vec<&Trajectory<T>> = parts.iter().collect();
            Trajectory::stack(&refs)
        };
        let remap_cov = |old: &Matrix<T>| {
            let n = plan.len() * block_dim;
            let mut out = Matrix::zeros(n);
            for (bi, si) in plan.iter().enumerate() {
                for (bj, sj) in plan.iter().enumerate() {
                    for r in 0..block_dim {
                        for c in 0..block_dim {
                            let v = match (*si, *sj) {
                                (BlockSource::Keep(oi), BlockSource::Keep(oj)) => {
                                    old[(oi * block_dim + r, oj * block_dim + c)]
                                }
                                (BlockSource::Insert(_), BlockSource::Insert(_)) if bi == bj => initial_block[(r, c)],
                                _ => T::zero(),
                            };
                            out[(bi * block_dim + r, bj * block_dim + c)] = v;
                        }
                    }
                }
            }
            out
        };
        match self {
            Self::Gaussian(p) => Self::Gaussian(GaussianPolicy {
                means: remap_mean(&p.means),
                covariances: p.covariances.iter().map(remap_cov).collect(),
                covariance_floor: p.covariance_floor,
                smoothing: p.smoothing,
                fixed_covariance: p.fixed_covariance,
            }),
            Self::Mixture(p) => {
                let reset = remap_cov(&p.reset_covariance);
                Self::Mixture(MixturePolicy {
                    mixture_weights: p.mixture_weights.clone(),
                    means: p.means.iter().map(remap_mean).collect(),
                    covariances: p
                        .covariances
                        .iter()
                        .map(|per_t| per_t.iter().map(remap_cov).collect())
                        .collect(),
                    covariance_floor: p.covariance_floor,
                    reset_covariance: reset,
                })
            }
            Self::Stein(p) => Self::Stein(SteinPolicy {
                particles: p.particles.iter().map(remap_mean).collect(),
                rollout_covariances: p.rollout_covariances.iter().map(remap_cov).collect(),
                step_size: p.step_size,
                rollouts_per_particle: p.rollouts_per_particle,
                bandwidth: p.bandwidth,
            }),
        }
    }
}

/// Block-diagonal matrix with `count` copies of `block`.
pub fn block_diag<T: Real>(block: &Matrix<T>, count: usize) -> Matrix<T> {
    let d = block.dim();
    let mut out = Matrix::zeros(d * count);
    for k in 0..count {
        for r in 0..d {
            for c in 0..d {
                out[(k * d + r, k * d + c)] = block[(r, c)];
            }
        }
    }
    out
}

/// Draws `m` control trajectories. Samples are generated sample by sample,
/// step by step, so a given seed always yields the same batch; mixture modes
/// are drawn per step from a separate stream, which makes a one-mode mixture
/// sample exactly like the matching Gaussian.
pub fn sample_controls<T: Real>(policy: &Policy<T>, m: usize, seed: u64) -> Result<Vec<Trajectory<T>>> {
    if m == 0 {
        return Err(invalid("sample count must be at least 1"));
    }
    let mut rng = rng_from(seed);
    match policy {
        Policy::Gaussian(p) => {
            let chol = factor_all(&p.covariances)?;
            Ok((0..m)
                .map(|_| draw(&p.means, |_| 0, &[chol.as_slice()], &mut rng))
                .collect())
        }
        Policy::Mixture(p) => {
            let chol: Vec<Vec<Cholesky<T>>> = p
                .covariances
                .iter()
                .map(|c| factor_all(c))
                .collect::<Result<_>>()?;
            let chol_refs: Vec<&[Cholesky<T>]> = chol.iter().map(|c| c.as_slice()).collect();
            let mut mode_rng = rng_from(derive_seed(seed, &[MODE_STREAM]));
            let phi: Vec<f64> = p.mixture_weights.iter().map(|w| w.to_f64_lossy()).collect();
            Ok((0..m)
                .map(|_| {
                    let modes: Vec<usize> = (0..p.horizon())
                        .map(|_| pick_mode(&phi, &mut mode_rng))
                        .collect();
                    draw_mixture(&p.means, &modes, &chol_refs, &mut rng)
                })
                .collect())
        }
        Policy::Stein(p) => {
            if m != p.num_samples() {
                return Err(invalid(format!(
                    "a Stein policy with {} particles x {} rollouts needs {} samples, got {m}",
                    p.num_particles(),
                    p.rollouts_per_particle,
                    p.num_samples()
                )));
            }
            let chol = factor_all(&p.rollout_covariances)?;
            Ok((0..m)
                .map(|i| {
                    let particle = &p.particles[i / p.rollouts_per_particle];
                    draw(particle, |_| 0, &[chol.as_slice()], &mut rng)
                })
                .collect())
        }
    }
}

fn factor_all<T: Real>(covs: &[Matrix<T>]) -> Result<Vec<Cholesky<T>>> {
    covs.iter()
        .map(|c| c.cholesky().ok_or_else(|| invalid("policy covariance is not positive definite")))
        .collect()
}

fn pick_mode(phi: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rand::Rng::random(rng);
    let mut acc = 0.0;
    for (l, &p) in phi.iter().enumerate() {
        acc += p;
        if u < acc {
            return l;
        }
    }
    phi.len() - 1
}

fn draw<T: Real>(
    mean: &Trajectory<T>,
    mode: impl Fn(usize) -> usize,
    chol: &[&[Cholesky<T>]],
    rng: &mut Rng,
) -> Trajectory<T> {
    let dim = mean.dim();
    let mut out = Trajectory::zeros(dim, mean.len());
    let mut z = vec![T::zero(); dim];
    let mut lz = vec![T::zero(); dim];
    for t in 0..mean.len() {
        for zi in z.iter_mut() {
            let x: f64 = StandardNormal.sample(rng);
            *zi = T::lit(x);
        }
        chol[mode(t)][t].mul_lower(&z, &mut lz);
        for ((o, &m), &d) in out.col_mut(t).iter_mut().zip(mean.col(t)).zip(&lz) {
            *o = m + d;
        }
    }
    out
}

fn draw_mixture<T: Real>(
    means: &[Trajectory<T>],
    modes: &[usize],
    chol: &[&[Cholesky<T>]],
    rng: &mut Rng,
) -> Trajectory<T> {
    let dim = means[0].dim();
    let mut out = Trajectory::zeros(dim, means[0].len());
    let mut z = vec![T::zero(); dim];
    let mut lz = vec![T::zero(); dim];
    for (t, &l) in modes.iter().enumerate() {
        for zi in z.iter_mut() {
            let x: f64 = StandardNormal.sample(rng);
            *zi = T::lit(x);
        }
        chol[l][t].mul_lower(&z, &mut lz);
        for ((o, &m), &d) in out.col_mut(t).iter_mut().zip(means[l].col(t)).zip(&lz) {
            *o = m + d;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian(dim: usize, horizon: usize, var: f64) -> GaussianPolicy<f64> {
        let means = Trajectory::from_flat(dim, horizon, (0..dim * horizon).map(|i| i as f64).collect());
        GaussianPolicy::new(means, &Matrix::scaled_identity(dim, var), var.min(1e-6)).unwrap()
    }

    #[test]
    fn vanishing_covariance_returns_means() {
        let p = Policy::Gaussian(gaussian(2, 3, 1e-12));
        for s in sample_controls(&p, 5, 1).unwrap() {
            for (a, b) in s.as_slice().iter().zip(p.nominal().as_slice()) {
                assert!((a - b).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn single_mode_mixture_samples_like_gaussian() {
        let g = gaussian(2, 4, 0.3);
        let mix = MixturePolicy::new(vec![g.means.clone()], &Matrix::scaled_identity(2, 0.3), 1e-6).unwrap();
        let a = sample_controls(&Policy::Gaussian(g), 7, 42).unwrap();
        let b = sample_controls(&Policy::Mixture(mix), 7, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn stein_layout_is_blocked_by_particle() {
        let far = Trajectory::constant(&[100.0], 2);
        let p = SteinPolicy::new(
            vec![Trajectory::zeros(1, 2), far],
            &Matrix::scaled_identity(1, 1e-4f64),
            0.1,
            3,
            Bandwidth::MedianHeuristic,
        )
        .unwrap();
        let s = sample_controls(&Policy::Stein(p), 6, 3).unwrap();
        assert_eq!(s.len(), 6);
        assert!(s[..3].iter().all(|t| t.col(0)[0].abs() < 1.0));
        assert!(s[3..].iter().all(|t| (t.col(0)[0] - 100.0).abs() < 1.0));
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let p = Policy::Gaussian(gaussian(2, 3, 0.5));
        assert_eq!(sample_controls(&p, 4, 9).unwrap(), sample_controls(&p, 4, 9).unwrap());
        assert_ne!(sample_controls(&p, 4, 9).unwrap(), sample_controls(&p, 4, 10).unwrap());
    }

    #[test]
    fn recede_shifts_and_relaxes() {
        let mut g = gaussian(1, 3, 1.0);
        g.covariances[2] = Matrix::scaled_identity(1, 3.0);
        let mut p = Policy::Gaussian(g);
        p.recede(&Matrix::identity(1), 0.5);
        let Policy::Gaussian(g) = p else { unreachable!() };
        assert_eq!(g.means.as_slice(), &[1.0, 2.0, 2.0]);
        assert_eq!(g.covariances[1][(0, 0)], 2.0);
        assert_eq!(g.covariances[2][(0, 0)], 2.0);
    }

    #[test]
    fn remap_keeps_drops_and_inserts_blocks() {
        let means = Trajectory::from_columns(3, &[vec![1.0, 2.0, 3.0]]);
        let mut cov = Matrix::from_diag(&[1.0, 2.0, 3.0]);
        cov[(0, 2)] = 0.5;
        cov[(2, 0)] = 0.5;
        let p = Policy::Gaussian(GaussianPolicy::new(means, &cov, 1e-6).unwrap());
        let fresh = Trajectory::from_columns(1, &[vec![9.0]]);
        let plan = [BlockSource::Keep(0), BlockSource::Keep(2), BlockSource::Insert(&fresh)];
        let Policy::Gaussian(g) = p.remap_blocks(1, &plan, &Matrix::scaled_identity(1, 7.0)) else {
            unreachable!()
        };
        assert_eq!(g.means.as_slice(), &[1.0, 3.0, 9.0]);
        let c = &g.covariances[0];
        assert_eq!((c[(0, 0)], c[(1, 1)], c[(2, 2)]), (1.0, 3.0, 7.0));
        assert_eq!(c[(0, 1)], 0.5);
        assert_eq!(c[(0, 2)], 0.0);
    }
}
