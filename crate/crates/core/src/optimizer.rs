//! The generic local solver: sample controls, roll out, score with the
//! augmented cost, reweight and update the policy.

use rayon::prelude::*;

use crate::dynamics::{Dynamics, Stacked};
use crate::error::{invalid, Error, Result};
use crate::policy::{sample_controls, Policy};
use crate::rng::derive_seed;
use crate::scalar::Real;
use crate::shape::{compute_weights_with_fallback, ShapeConfig, WeightVector};
use crate::tasks::TaskSpec;
use crate::trajectory::{Trajectory, TrajectoryPair};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateMode {
    /// Assign the weighted statistics (or run EM / the Stein step).
    Projection,
    /// Additive step on the Gaussian mean, covariance held fixed.
    GradientSS,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerConfig<T> {
    /// `M^0`
    pub num_samples: usize,
    /// `K`
    pub num_iterations: usize,
    pub shape: ShapeConfig<T>,
    pub update_mode: UpdateMode,
    /// `alpha^0` of `alpha^k = alpha^0 / k^a`.
    pub step_size: T,
    /// `a` of `alpha^k = alpha^0 / k^a`.
    pub step_decay: T,
    /// `zeta` of `M^k = ceil(M^0 k^zeta)`.
    pub sample_growth: T,
    pub em_iters: usize,
    /// Evaluate the rollouts of a batch on the rayon pool.
    pub parallel_rollouts: bool,
}

impl<T: Real> OptimizerConfig<T> {
    pub fn new(num_samples: usize, num_iterations: usize, shape: ShapeConfig<T>) -> Self {
        Self {
            num_samples,
            num_iterations,
            shape,
            update_mode: UpdateMode::Projection,
            step_size: T::one(),
            step_decay: T::zero(),
            sample_growth: T::zero(),
            em_iters: 1,
            parallel_rollouts: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_samples < 2 {
            return Err(invalid("at least two samples are needed per iteration"));
        }
        if self.num_iterations == 0 {
            return Err(invalid("at least one iteration is needed"));
        }
        if self.em_iters == 0 {
            return Err(invalid("em_iters must be at least 1"));
        }
        if !(self.step_size > T::zero()) {
            return Err(invalid("step size must be positive"));
        }
        if !(self.step_decay >= T::zero() && self.step_decay < T::one()) {
            return Err(invalid("step decay exponent must lie in [0,1)"));
        }
        if !(self.sample_growth >= T::zero()) {
            return Err(invalid("sample growth exponent must be non-negative"));
        }
        self.shape.validate()
    }

    /// `(alpha^k, M^k)` for iteration `k >= 1`.
    pub fn schedule(&self, k: usize) -> (T, usize) {
        crate::analysis::schedules(
            k,
            self.step_size,
            self.step_decay,
            self.num_samples,
            self.sample_growth,
        )
        .expect("validated schedule")
    }
}

/// Consensus reference for the augmented variables of one agent. Rows follow
/// the block layout of the problem; column `t` of the state arrays belongs to
/// `x_{t+1}` and column `t` of the control arrays to `u_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConsensusTerms<T> {
    pub y: Trajectory<T>,
    pub z: Trajectory<T>,
    pub xi: Trajectory<T>,
    pub gamma: Trajectory<T>,
    pub mu: T,
    pub nu: T,
}

/// One local optimization problem: a stack of agent blocks, the first
/// `ego_blocks` of which are optimized for their own task cost.
#[derive(Clone, Debug)]
pub struct LocalProblem<'a, T> {
    pub task: &'a TaskSpec<T>,
    /// Agent index of each block.
    pub agents: Vec<usize>,
    pub ego_blocks: usize,
    pub x0: Vec<T>,
    pub consensus: Option<ConsensusTerms<T>>,
}

impl<'a, T: Real> LocalProblem<'a, T> {
    pub fn dynamics(&self) -> Stacked<'a, T> {
        Stacked {
            model: &self.task.model,
            blocks: self.agents.len(),
        }
    }

    pub fn validate(&self, horizon: usize) -> Result<()> {
        let nx = self.task.model.kind.state_dim() * self.agents.len();
        let nu = self.task.model.kind.control_dim() * self.agents.len();
        if self.ego_blocks == 0 || self.ego_blocks > self.agents.len() {
            return Err(invalid("ego blocks must be between 1 and the block count"));
        }
        if self.x0.len() != nx {
            return Err(invalid("initial augmented state has the wrong dimension"));
        }
        if let Some(c) = &self.consensus {
            let shapes = [
                (c.y.dim(), c.y.len(), nx),
                (c.xi.dim(), c.xi.len(), nx),
                (c.z.dim(), c.z.len(), nu),
                (c.gamma.dim(), c.gamma.len(), nu),
            ];
            if shapes.iter().any(|&(d, l, want)| d != want || l != horizon) {
                return Err(invalid("consensus reference does not match the augmented layout"));
            }
            if !(c.mu > T::zero() && c.nu > T::zero()) {
                return Err(invalid("consensus penalties must be positive"));
            }
        }
        Ok(())
    }
}

/// Propagates `x0` through `controls`; returns `n_x x (T' + 1)` states
/// including `x0`.
pub fn rollout<T: Real>(dynamics: &impl Dynamics<T>, x0: &[T], controls: &Trajectory<T>) -> Result<Trajectory<T>> {
    if controls.as_slice().iter().any(|u| !u.is_finite()) {
        return Err(invalid("controls must be finite"));
    }
    let states = propagate(dynamics, x0, controls).map_err(|step| Error::RolloutDiverged { sample: 0, step })?;
    let mut all = Trajectory::zeros(x0.len(), controls.len() + 1);
    all.col_mut(0).copy_from_slice(x0);
    for t in 0..controls.len() {
        all.col_mut(t + 1).copy_from_slice(states.col(t));
    }
    Ok(all)
}

/// States `x_1 .. x_{T'}`; `Err(step)` on the first non-finite state.
fn propagate<T: Real>(
    dynamics: &impl Dynamics<T>,
    x0: &[T],
    controls: &Trajectory<T>,
) -> std::result::Result<Trajectory<T>, usize> {
    let mut states = Trajectory::zeros(x0.len(), controls.len());
    let mut prev = x0.to_vec();
    for t in 0..controls.len() {
        let next = states.col_mut(t);
        dynamics.step_into(&prev, controls.col(t), next);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(t + 1);
        }
        prev.copy_from_slice(next);
    }
    Ok(states)
}

/// Task cost of the ego blocks, consensus penalty and crash penalty.
pub fn augmented_cost<T: Real>(traj: &TrajectoryPair<T>, prob: &LocalProblem<'_, T>) -> T {
    let task = prob.task;
    let nx = task.model.kind.state_dim();
    let nu = task.model.kind.control_dim();
    let horizon = traj.horizon();
    let blocks = prob.agents.len();
    let mut cost = T::zero();
    for t in 0..horizon {
        let x = traj.states.col(t);
        let u = traj.controls.col(t);
        for b in 0..prob.ego_blocks {
            let agent = prob.agents[b];
            let xb = &x[b * nx..(b + 1) * nx];
            cost += task.task_cost(agent, xb, &u[b * nu..(b + 1) * nu]);
            if t + 1 == horizon {
                cost += task.terminal_cost(agent, xb);
            }
            if task.obstacle_hit(xb) {
                cost += task.crash_penalty;
            }
            let collided = (0..blocks)
                .filter(|&o| o != b)
                .any(|o| task.collides(xb, &x[o * nx..(o + 1) * nx]));
            if collided {
                cost += task.crash_penalty;
            }
        }
    }
    if let Some(c) = &prob.consensus {
        cost += consensus_penalty(&traj.states, &c.y, &c.xi, c.mu) + consensus_penalty(&traj.controls, &c.z, &c.gamma, c.nu);
    }
    cost
}

/// `sum_t (rho/2) |a_t - b_t + dual_t / rho|^2`
fn consensus_penalty<T: Real>(a: &Trajectory<T>, b: &Trajectory<T>, dual: &Trajectory<T>, rho: T) -> T {
    let s: T = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .zip(dual.as_slice())
        .map(|((&x, &y), &d)| {
            let r = x - y + d / rho;
            r * r
        })
        .sum();
    rho * T::lit(0.5) * s
}

/// Per-iteration record of an optimizer run.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationDiagnostics<T> {
    pub iteration: usize,
    pub num_samples: usize,
    pub min_cost: T,
    pub mean_cost: T,
    pub effective_sample_size: T,
    pub degenerate_weights: bool,
    pub diverged_samples: usize,
    pub reinitialized_modes: usize,
}

#[derive(Clone, Debug)]
pub struct OptimizeOutput<T> {
    pub policy: Policy<T>,
    /// Rollout of the final policy mean.
    pub trajectory: TrajectoryPair<T>,
    pub cost: T,
    pub diagnostics: Vec<IterationDiagnostics<T>>,
}

fn clamp_controls<T: Real>(u: &mut Trajectory<T>, task: &TaskSpec<T>) {
    let lo = &task.model.control_min;
    let hi = &task.model.control_max;
    let nu = lo.len();
    for (k, v) in u.as_mut_slice().iter_mut().enumerate() {
        let c = k % nu;
        *v = v.max(lo[c]).min(hi[c]);
    }
}

/// Runs `K` sample/evaluate/update rounds from `policy`.
pub fn optimize<T: Real>(
    prob: &LocalProblem<'_, T>,
    policy: &Policy<T>,
    cfg: &OptimizerConfig<T>,
    seed: u64,
) -> Result<OptimizeOutput<T>> {
    cfg.validate()?;
    let horizon = policy.horizon();
    prob.validate(horizon)?;
    let dynamics = prob.dynamics();
    if policy.control_dim() != dynamics.control_dim() {
        return Err(invalid("policy control dimension does not match the problem"));
    }
    if cfg.update_mode == UpdateMode::GradientSS && !matches!(policy, Policy::Gaussian(_)) {
        return Err(invalid("the stochastic-search gradient step needs a unimodal Gaussian policy"));
    }

    let mut policy = policy.clone();
    let mut diagnostics = Vec::with_capacity(cfg.num_iterations);
    for k in 1..=cfg.num_iterations {
        let (alpha, m_k) = cfg.schedule(k);
        let m_k = policy.required_samples().unwrap_or(m_k);
        let mut samples = sample_controls(&policy, m_k, derive_seed(seed, &[k as u64]))?;
        for s in &mut samples {
            clamp_controls(s, prob.task);
        }
        let evaluate = |u: &Trajectory<T>| -> Option<T> {
            let states = propagate(&dynamics, &prob.x0, u).ok()?;
            let pair = TrajectoryPair {
                states,
                controls: u.clone(),
            };
            let c = augmented_cost(&pair, prob);
            c.is_finite().then_some(c)
        };
        let costs: Vec<Option<T>> = if cfg.parallel_rollouts {
            samples.par_iter().map(evaluate).collect()
        } else {
            samples.iter().map(evaluate).collect()
        };
        let valid: Vec<T> = costs.iter().flatten().copied().collect();
        let diverged = costs.len() - valid.len();
        if valid.is_empty() {
            return Err(Error::RolloutDiverged { sample: 0, step: 0 });
        }
        let (w_valid, degenerate) = compute_weights_with_fallback(&valid, &cfg.shape)?;
        let weights = if diverged == 0 {
            w_valid
        } else {
            let mut it = w_valid.as_slice().iter();
            let full = costs
                .iter()
                .map(|c| match c {
                    Some(_) => *it.next().expect("one weight per valid sample"),
                    None => T::zero(),
                })
                .collect();
            WeightVector::from_normalized(full)?
        };

        let mut reinitialized = 0;
        policy = match (cfg.update_mode, &policy) {
            (UpdateMode::GradientSS, Policy::Gaussian(p)) => {
                Policy::Gaussian(gradient_step(&samples, &weights, &costs, p, alpha))
            }
            _ => {
                let (next, events) = policy.update(&samples, &weights, cfg.em_iters)?;
                reinitialized = events.reinitialized_modes.len();
                next
            }
        };

        let mean = valid.iter().copied().sum::<T>() / T::count(valid.len());
        diagnostics.push(IterationDiagnostics {
            iteration: k,
            num_samples: m_k,
            min_cost: valid.iter().copied().fold(T::infinity(), T::min),
            mean_cost: mean,
            effective_sample_size: weights.effective_sample_size(),
            degenerate_weights: degenerate,
            diverged_samples: diverged,
            reinitialized_modes: reinitialized,
        });
    }

    let (trajectory, cost) = test_policy(prob, &policy)?;
    Ok(OptimizeOutput {
        policy,
        trajectory,
        cost,
        diagnostics,
    })
}

/// `theta += alpha * sum_m w_m (u_m - u_bar)` with `u_bar` the mean of the
/// non-diverged samples.
fn gradient_step<T: Real>(
    samples: &[Trajectory<T>],
    weights: &WeightVector<T>,
    costs: &[Option<T>],
    prev: &crate::policy::GaussianPolicy<T>,
    alpha: T,
) -> crate::policy::GaussianPolicy<T> {
    let valid: Vec<&Trajectory<T>> = samples
        .iter()
        .zip(costs)
        .filter(|(_, c)| c.is_some())
        .map(|(s, _)| s)
        .collect();
    let n = T::count(valid.len());
    let mut next = prev.clone();
    let theta = next.means.as_mut_slice();
    for i in 0..theta.len() {
        let u_bar = valid.iter().map(|s| s.as_slice()[i]).sum::<T>() / n;
        let step: T = samples
            .iter()
            .zip(weights.as_slice())
            .map(|(s, &w)| w * (s.as_slice()[i] - u_bar))
            .sum();
        theta[i] += alpha * step;
    }
    next
}

/// Rolls out the policy mean (the best particle for Stein policies) and
/// returns it with its augmented cost.
pub fn test_policy<T: Real>(prob: &LocalProblem<'_, T>, policy: &Policy<T>) -> Result<(TrajectoryPair<T>, T)> {
    let dynamics = prob.dynamics();
    let mut best: Option<(TrajectoryPair<T>, T)> = None;
    for (i, mean) in policy.candidate_means().into_iter().enumerate() {
        let mut controls = mean.clone();
        clamp_controls(&mut controls, prob.task);
        let states = propagate(&dynamics, &prob.x0, &controls).map_err(|step| Error::RolloutDiverged { sample: i, step })?;
        let pair = TrajectoryPair { states, controls };
        let cost = augmented_cost(&pair, prob);
        if best.as_ref().is_none_or(|(_, c)| cost < *c) {
            best = Some((pair, cost));
        }
    }
    best.ok_or_else(|| invalid("policy has no candidate mean"))
}
