//! Closed-loop MPC: distributed consensus ADMM over per-agent sampling
//! solvers, or one centralized solver on the joint system.

use std::time::Instant;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::admm::{
    assemble_globals_view, block_plan, compute_neighborhoods, consensus_residuals, dual_update, global_update,
    recede_and_remap, AgentLocalState, GlobalConsensus, NeighborhoodMode, NeighborhoodSets, Penalties,
};
use crate::dynamics::Dynamics;
use crate::error::{invalid, Error, Result};
use crate::linalg::Matrix;
use crate::optimizer::{optimize, ConsensusTerms, LocalProblem, OptimizerConfig};
use crate::policy::{block_diag, Bandwidth, BlockSource, GaussianPolicy, MixturePolicy, Policy, SteinPolicy};
use crate::rng::{derive_seed, rng_from};
use crate::scalar::Real;
use crate::tasks::TaskSpec;
use crate::trajectory::Trajectory;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Distributed,
    Centralized,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PolicyKind<T> {
    Gaussian,
    Mixture {
        modes: usize,
        /// Standard deviation of the initial offsets between mode means.
        spread: T,
    },
    Stein {
        particles: usize,
        rollouts_per_particle: usize,
        step_size: T,
        bandwidth: Bandwidth<T>,
        spread: T,
    },
}

/// How each agent's policy is initialized and carried between MPC steps.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicySpec<T> {
    pub kind: PolicyKind<T>,
    /// Initial per-channel standard deviation of one agent's controls.
    pub initial_std: Vec<T>,
    pub covariance_floor: T,
    /// Mean smoothing of the Gaussian update.
    pub smoothing: T,
    /// Gaussian policies update only their means.
    pub fixed_covariance: bool,
    /// Fraction by which covariances return to the initial value at each
    /// MPC step.
    pub warm_start_blend: T,
}

impl<T: Real> PolicySpec<T> {
    pub fn gaussian(initial_std: Vec<T>) -> Self {
        Self {
            kind: PolicyKind::Gaussian,
            initial_std,
            covariance_floor: T::lit(1e-6),
            smoothing: T::one(),
            fixed_covariance: false,
            warm_start_blend: T::lit(0.5),
        }
    }

    fn block_covariance(&self) -> Matrix<T> {
        Matrix::from_diag(&self.initial_std.iter().map(|s| *s * *s).collect::<Vec<_>>())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig<T> {
    pub mode: Mode,
    pub task: TaskSpec<T>,
    pub optimizer: OptimizerConfig<T>,
    pub policy: PolicySpec<T>,
    /// ADMM iterations `L` per MPC step (distributed only).
    pub admm_iters: usize,
    pub penalties: Penalties<T>,
    pub neighborhood: NeighborhoodMode<T>,
    /// Joint sample count for the centralized mode; `None` matches the
    /// distributed budget `N * L * M`.
    pub centralized_samples: Option<usize>,
    /// Solve the agents' local problems on the rayon pool.
    pub parallel_agents: bool,
    pub seed: u64,
}

impl<T: Real> RunConfig<T> {
    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.optimizer.validate()?;
        let nu = self.task.model.kind.control_dim();
        if self.policy.initial_std.len() != nu || self.policy.initial_std.iter().any(|s| !(*s > T::zero())) {
            return Err(invalid(format!("initial_std needs {nu} positive entries")));
        }
        if !(self.policy.covariance_floor > T::zero()) {
            return Err(invalid("covariance floor must be positive"));
        }
        if !(self.policy.warm_start_blend >= T::zero() && self.policy.warm_start_blend <= T::one()) {
            return Err(invalid("warm start blend must lie in [0,1]"));
        }
        match self.policy.kind {
            PolicyKind::Mixture { modes, .. } if modes == 0 => return Err(invalid("mixture needs at least one mode")),
            PolicyKind::Stein {
                particles,
                rollouts_per_particle,
                ..
            } if particles == 0 || rollouts_per_particle == 0 => {
                return Err(invalid("Stein policy needs particles and rollouts"))
            }
            _ => {}
        }
        if self.mode == Mode::Distributed && self.admm_iters == 0 {
            return Err(invalid("distributed mode needs at least one ADMM iteration"));
        }
        if self.task.horizon == 0 {
            return Err(invalid("prediction horizon must be at least 1"));
        }
        Ok(())
    }

    fn centralized_budget(&self) -> usize {
        self.centralized_samples
            .unwrap_or(self.task.num_agents() * self.admm_iters.max(1) * self.optimizer.num_samples)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResidualRow<T> {
    pub mpc_step: usize,
    pub admm_iter: usize,
    pub primal_state: T,
    pub primal_control: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord<T> {
    pub num_agents: usize,
    /// Executed joint states, `N n_x x (T + 1)` including the start.
    pub states: Trajectory<T>,
    /// Executed joint controls, `N n_u x T`.
    pub controls: Trajectory<T>,
    pub residuals: Vec<ResidualRow<T>>,
    pub agent_costs: Vec<T>,
    pub violations: usize,
    pub success: bool,
    /// Set when the run stopped early.
    pub aborted: Option<String>,
    /// Degenerate-weight fallbacks over all solves.
    pub degenerate_events: usize,
    /// Seconds per MPC step.
    pub step_seconds: Vec<f64>,
    /// Mean per-agent local solve seconds for each MPC step.
    pub agent_solve_seconds: Vec<f64>,
}

impl<T: Real> RunRecord<T> {
    fn empty(task: &TaskSpec<T>) -> Self {
        let n = task.num_agents();
        let x0: Vec<T> = task.starts.concat();
        Self {
            num_agents: n,
            states: Trajectory::from_flat(x0.len(), 1, x0),
            controls: Trajectory::zeros(n * task.model.kind.control_dim(), 0),
            residuals: Vec::new(),
            agent_costs: vec![T::zero(); n],
            violations: 0,
            success: true,
            aborted: None,
            degenerate_events: 0,
            step_seconds: Vec::new(),
            agent_solve_seconds: Vec::new(),
        }
    }

    pub fn completed(&self) -> bool {
        self.aborted.is_none()
    }
}

/// Violations of agent `i` at one joint state.
fn agent_violations<T: Real>(task: &TaskSpec<T>, joint: &[T], i: usize) -> usize {
    let nx = task.model.kind.state_dim();
    let xi = &joint[i * nx..(i + 1) * nx];
    let mut v = usize::from(task.obstacle_hit(xi));
    let collided = (0..task.num_agents())
        .filter(|&j| j != i)
        .any(|j| task.collides(xi, &joint[j * nx..(j + 1) * nx]));
    v += usize::from(collided);
    v
}

/// Sum of running task costs over the executed steps plus the crash penalty
/// for every recorded violation, per agent.
pub fn realized_cost<T: Real>(record: &RunRecord<T>, task: &TaskSpec<T>) -> Vec<T> {
    let nx = task.model.kind.state_dim();
    let nu = task.model.kind.control_dim();
    (0..record.num_agents)
        .map(|i| {
            let mut c = T::zero();
            for t in 0..record.controls.len() {
                let x = record.states.col(t + 1);
                let u = record.controls.col(t);
                c += task.task_cost(i, &x[i * nx..(i + 1) * nx], &u[i * nu..(i + 1) * nu]);
                c += T::count(agent_violations(task, x, i)) * task.crash_penalty;
            }
            c
        })
        .collect()
}

const INIT_STREAM: u64 = u64::MAX;

/// Policy over `blocks` stacked agents, centered at the control reference.
fn initial_policy<T: Real>(cfg: &RunConfig<T>, blocks: usize, seed: u64) -> Result<Policy<T>> {
    let horizon = cfg.task.horizon;
    let reference: Vec<T> = (0..blocks).flat_map(|_| cfg.task.control_reference.clone()).collect();
    let mean = Trajectory::constant(&reference, horizon);
    let cov = block_diag(&cfg.policy.block_covariance(), blocks);
    let floor = cfg.policy.covariance_floor;
    let offsets = |count: usize, spread: T| -> Vec<Trajectory<T>> {
        let mut rng = rng_from(derive_seed(seed, &[INIT_STREAM]));
        let std: Vec<T> = (0..blocks).flat_map(|_| cfg.policy.initial_std.clone()).collect();
        (0..count)
            .map(|k| {
                let mut m = mean.clone();
                if k > 0 {
                    let shift: Vec<T> = std
                        .iter()
                        .map(|&s| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            spread * s * T::lit(z)
                        })
                        .collect();
                    for t in 0..horizon {
                        for (v, d) in m.col_mut(t).iter_mut().zip(&shift) {
                            *v += *d;
                        }
                    }
                }
                m
            })
            .collect()
    };
    Ok(match cfg.policy.kind {
        PolicyKind::Gaussian => Policy::Gaussian(
            GaussianPolicy::new(mean, &cov, floor)?
                .with_smoothing(cfg.policy.smoothing)
                .with_fixed_covariance(cfg.policy.fixed_covariance),
        ),
        PolicyKind::Mixture { modes, spread } => Policy::Mixture(MixturePolicy::new(offsets(modes, spread), &cov, floor)?),
        PolicyKind::Stein {
            particles,
            rollouts_per_particle,
            step_size,
            bandwidth,
            spread,
        } => Policy::Stein(SteinPolicy::new(
            offsets(particles, spread),
            &cov,
            step_size,
            rollouts_per_particle,
            bandwidth,
        )?),
    })
}

/// Executes the configured closed-loop run.
pub fn run<T: Real>(cfg: &RunConfig<T>) -> Result<RunRecord<T>> {
    cfg.validate()?;
    match cfg.mode {
        Mode::Distributed => run_distributed(cfg),
        Mode::Centralized => run_centralized(cfg),
    }
}

fn positions<T: Real>(task: &TaskSpec<T>, joint: &[T]) -> Vec<Vec<T>> {
    let nx = task.model.kind.state_dim();
    let p = task.model.position_dim();
    (0..task.num_agents())
        .map(|i| joint[i * nx..i * nx + p].to_vec())
        .collect()
}

fn neighborhoods<T: Real>(cfg: &RunConfig<T>, joint: &[T]) -> Result<NeighborhoodSets> {
    let pos = positions(&cfg.task, joint);
    let refs: Vec<&[T]> = pos.iter().map(|p| p.as_slice()).collect();
    compute_neighborhoods(&refs, cfg.neighborhood)
}

/// Applies the executed joint control and records violations.
fn advance<T: Real>(
    task: &TaskSpec<T>,
    record: &mut RunRecord<T>,
    joint_x: &mut Vec<T>,
    joint_u: &[T],
    step: usize,
) -> Result<()> {
    let stacked = crate::dynamics::Stacked {
        model: &task.model,
        blocks: task.num_agents(),
    };
    let mut next = vec![T::zero(); joint_x.len()];
    let lo = &task.model.control_min;
    let hi = &task.model.control_max;
    let clamped: Vec<T> = joint_u
        .iter()
        .enumerate()
        .map(|(k, u)| u.max(lo[k % lo.len()]).min(hi[k % hi.len()]))
        .collect();
    stacked.step_into(joint_x, &clamped, &mut next);
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::RolloutDiverged { sample: 0, step });
    }
    *joint_x = next;
    let mut states = record.states.as_slice().to_vec();
    states.extend_from_slice(joint_x);
    record.states = Trajectory::from_flat(joint_x.len(), record.states.len() + 1, states);
    let mut controls = record.controls.as_slice().to_vec();
    controls.extend_from_slice(&clamped);
    record.controls = Trajectory::from_flat(clamped.len(), record.controls.len() + 1, controls);
    record.violations += (0..task.num_agents())
        .map(|i| agent_violations(task, joint_x, i))
        .sum::<usize>();
    Ok(())
}

fn finish<T: Real>(mut record: RunRecord<T>, task: &TaskSpec<T>) -> RunRecord<T> {
    record.agent_costs = realized_cost(&record, task);
    record.success = record.violations == 0 && record.aborted.is_none();
    record
}

fn run_centralized<T: Real>(cfg: &RunConfig<T>) -> Result<RunRecord<T>> {
    let task = &cfg.task;
    let n = task.num_agents();
    let mut record = RunRecord::empty(task);
    let mut joint_x: Vec<T> = task.starts.concat();
    let mut ocfg = cfg.optimizer.clone();
    ocfg.num_samples = cfg.centralized_budget();
    let mut pcfg = cfg.clone();
    if let PolicyKind::Stein {
        particles,
        ref mut rollouts_per_particle,
        ..
    } = pcfg.policy.kind
    {
        *rollouts_per_particle = ocfg.num_samples.div_ceil(particles).max(1);
    }
    let mut policy = initial_policy(&pcfg, n, derive_seed(cfg.seed, &[0]))?;
    let initial_cov = block_diag(&cfg.policy.block_covariance(), n);
    let agents: Vec<usize> = (0..n).collect();
    for step in 0..task.mpc_steps {
        let started = Instant::now();
        let prob = LocalProblem {
            task,
            agents: agents.clone(),
            ego_blocks: n,
            x0: joint_x.clone(),
            consensus: None,
        };
        let out = match optimize(&prob, &policy, &ocfg, derive_seed(cfg.seed, &[step as u64, 0, 0])) {
            Ok(o) => o,
            Err(e @ Error::RolloutDiverged { .. }) => {
                record.aborted = Some(format!("step {step}: {e}"));
                break;
            }
            Err(e) => return Err(e),
        };
        record.degenerate_events += out.diagnostics.iter().filter(|d| d.degenerate_weights).count();
        let u0 = out.trajectory.controls.col(0).to_vec();
        let solve = started.elapsed().as_secs_f64();
        if let Err(e) = advance(task, &mut record, &mut joint_x, &u0, step) {
            record.aborted = Some(format!("step {step}: {e}"));
            break;
        }
        policy = out.policy;
        policy.recede(&initial_cov, cfg.policy.warm_start_blend);
        record.step_seconds.push(started.elapsed().as_secs_f64());
        record.agent_solve_seconds.push(solve / n as f64);
    }
    Ok(finish(record, task))
}

struct AgentSolve<T> {
    policy: Policy<T>,
    x: Trajectory<T>,
    u: Trajectory<T>,
    degenerate: usize,
    seconds: f64,
}

fn run_distributed<T: Real>(cfg: &RunConfig<T>) -> Result<RunRecord<T>> {
    let task = &cfg.task;
    let n = task.num_agents();
    let nx = task.model.kind.state_dim();
    let nu = task.model.kind.control_dim();
    let horizon = task.horizon;
    let mut record = RunRecord::empty(task);
    let mut joint_x: Vec<T> = task.starts.concat();
    let mut ocfg = cfg.optimizer.clone();
    ocfg.parallel_rollouts = false;
    let block_cov = cfg.policy.block_covariance();

    let mut sets = neighborhoods(cfg, &joint_x)?;
    // initial plans: hold the reference control from the true states
    let mut locals: Vec<AgentLocalState<T>> = (0..n)
        .map(|i| {
            let blocks: Vec<usize> = std::iter::once(i).chain(sets.out[i].iter().copied()).collect();
            let x0: Vec<T> = blocks.iter().flat_map(|&j| task.starts[j].clone()).collect();
            let reference: Vec<T> = blocks.iter().flat_map(|_| task.control_reference.clone()).collect();
            let u = Trajectory::constant(&reference, horizon);
            let stacked = crate::dynamics::Stacked {
                model: &task.model,
                blocks: blocks.len(),
            };
            let full = crate::optimizer::rollout(&stacked, &x0, &u)?;
            Ok(AgentLocalState {
                agent: i,
                neighbors: sets.out[i].clone(),
                x: Trajectory::from_flat(x0.len(), horizon, full.as_slice()[x0.len()..].to_vec()),
                xi: Trajectory::zeros(x0.len(), horizon),
                gamma: Trajectory::zeros(u.dim(), horizon),
                u,
            })
        })
        .collect::<Result<_>>()?;
    let mut globals: GlobalConsensus<T> = global_update(&locals, &sets, &cfg.penalties, nx, nu);
    let mut policies: Vec<Policy<T>> = (0..n)
        .map(|i| initial_policy(cfg, 1 + sets.out[i].len(), derive_seed(cfg.seed, &[i as u64])))
        .collect::<Result<_>>()?;

    'steps: for step in 0..task.mpc_steps {
        let started = Instant::now();
        let mut solve_seconds = 0.0;
        for iter in 0..cfg.admm_iters {
            let solve_one = |i: usize| -> Result<AgentSolve<T>> {
                let t0 = Instant::now();
                let local = &locals[i];
                let blocks = local.block_agents();
                let x0: Vec<T> = blocks
                    .iter()
                    .flat_map(|&j| joint_x[j * nx..(j + 1) * nx].to_vec())
                    .collect();
                let isolated = sets.out[i].is_empty() && sets.inn[i].is_empty();
                let consensus = (!isolated).then(|| {
                    let (y, z) = assemble_globals_view(i, &globals, &sets);
                    ConsensusTerms {
                        y,
                        z,
                        xi: local.xi.clone(),
                        gamma: local.gamma.clone(),
                        mu: cfg.penalties.mu(),
                        nu: cfg.penalties.nu(),
                    }
                });
                let prob = LocalProblem {
                    task,
                    agents: blocks,
                    ego_blocks: 1,
                    x0,
                    consensus,
                };
                let seed = derive_seed(cfg.seed, &[step as u64, iter as u64, i as u64]);
                let out = optimize(&prob, &policies[i], &ocfg, seed)?;
                Ok(AgentSolve {
                    degenerate: out.diagnostics.iter().filter(|d| d.degenerate_weights).count(),
                    policy: out.policy,
                    x: out.trajectory.states,
                    u: out.trajectory.controls,
                    seconds: t0.elapsed().as_secs_f64(),
                })
            };
            let solved: Vec<Result<AgentSolve<T>>> = if cfg.parallel_agents {
                (0..n).into_par_iter().map(solve_one).collect()
            } else {
                (0..n).map(solve_one).collect()
            };
            for (i, s) in solved.into_iter().enumerate() {
                match s {
                    Ok(s) => {
                        record.degenerate_events += s.degenerate;
                        solve_seconds += s.seconds;
                        policies[i] = s.policy;
                        locals[i].x = s.x;
                        locals[i].u = s.u;
                    }
                    Err(e @ Error::RolloutDiverged { .. }) => {
                        record.aborted = Some(format!("step {step}, agent {i}: {e}"));
                        break 'steps;
                    }
                    Err(e) => return Err(e),
                }
            }
            globals = global_update(&locals, &sets, &cfg.penalties, nx, nu);
            let r = consensus_residuals(&locals, &globals, &sets);
            record.residuals.push(ResidualRow {
                mpc_step: step,
                admm_iter: iter,
                primal_state: r.primal_state,
                primal_control: r.primal_control,
            });
            locals = locals
                .iter()
                .map(|l| {
                    let (y, z) = assemble_globals_view(l.agent, &globals, &sets);
                    dual_update(l, &y, &z, &cfg.penalties)
                })
                .collect();
        }

        let joint_u: Vec<T> = locals.iter().flat_map(|l| l.u.col(0)[..nu].to_vec()).collect();
        if let Err(e) = advance(task, &mut record, &mut joint_x, &joint_u, step) {
            record.aborted = Some(format!("step {step}: {e}"));
            break;
        }

        let new_sets = neighborhoods(cfg, &joint_x)?;
        let (new_locals, new_globals) = recede_and_remap(&locals, &globals, &new_sets, &cfg.penalties, &task.model);
        for (i, policy) in policies.iter_mut().enumerate() {
            let old_blocks = 1 + sets.out[i].len();
            policy.recede(&block_diag(&block_cov, old_blocks), cfg.policy.warm_start_blend);
            if sets.out[i] != new_sets.out[i] {
                let plan = block_plan(&sets.out[i], &new_sets.out[i]);
                let agents: Vec<usize> = std::iter::once(i).chain(new_sets.out[i].iter().copied()).collect();
                let sources: Vec<BlockSource<'_, T>> = plan
                    .iter()
                    .zip(&agents)
                    .map(|(p, &j)| match p {
                        Some(b) => BlockSource::Keep(*b),
                        None => BlockSource::Insert(&new_globals.z[j]),
                    })
                    .collect();
                *policy = policy.remap_blocks(nu, &sources, &block_cov);
            }
        }
        locals = new_locals;
        globals = new_globals;
        sets = new_sets;
        record.step_seconds.push(started.elapsed().as_secs_f64());
        record.agent_solve_seconds.push(solve_seconds / (n * cfg.admm_iters) as f64);
    }
    Ok(finish(record, task))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shape::ShapeConfig;
    use crate::tasks::{make_scenario, Scenario, ScenarioParams};

    fn config(scenario: Scenario, mode: Mode, steps: usize) -> RunConfig<f64> {
        let mut params = ScenarioParams::defaults(scenario);
        params.mpc_steps = steps;
        params.horizon = 10;
        let task = make_scenario(scenario, &params).unwrap();
        let nu = task.model.kind.control_dim();
        RunConfig {
            mode,
            task,
            optimizer: OptimizerConfig::new(16, 2, ShapeConfig::NormalizedExponential { lambda: 0.1 }),
            policy: PolicySpec::gaussian(vec![0.5; nu]),
            admm_iters: 2,
            penalties: Penalties::new(1.0, 1.0).unwrap(),
            neighborhood: NeighborhoodMode::DistanceBall(2.0),
            centralized_samples: None,
            parallel_agents: false,
            seed: 3,
        }
    }

    #[test]
    fn zero_steps_is_an_empty_success() {
        let r = run(&config(Scenario::NarrowCrossing3, Mode::Distributed, 0)).unwrap();
        assert!(r.success);
        assert_eq!(r.controls.len(), 0);
        assert_eq!(r.states.len(), 1);
    }

    #[test]
    fn distributed_run_is_deterministic() {
        let cfg = config(Scenario::NarrowCrossing3, Mode::Distributed, 3);
        let a = run(&cfg).unwrap();
        let b = run(&cfg).unwrap();
        assert_eq!(a.states, b.states);
        assert_eq!(a.residuals, b.residuals);
        assert_eq!(a.residuals.len(), 6);
        assert_eq!(a.states.len(), 4);
    }

    #[test]
    fn centralized_run_shapes() {
        let r = run(&config(Scenario::NarrowCrossing3, Mode::Centralized, 2)).unwrap();
        assert_eq!(r.states.dim(), 9);
        assert_eq!(r.controls.dim(), 6);
        assert!(r.residuals.is_empty());
    }

    #[test]
    fn realized_cost_examples() {
        let cfg = config(Scenario::PointMass, Mode::Centralized, 0);
        let mut task = cfg.task.clone();
        task.obstacles.clear();
        let goal = task.goals[0].clone();
        let mut record = RunRecord::empty(&task);
        record.states = Trajectory::constant(&goal, 3);
        record.controls = Trajectory::zeros(2, 2);
        assert_eq!(realized_cost(&record, &task), vec![0.0]);

        task.state_weights = vec![1.0, 0.0, 0.0, 0.0];
        task.goals[0] = vec![0.0; 4];
        record.states = Trajectory::from_columns(4, &[vec![0.0; 4], vec![3f64.sqrt(), 0.0, 0.0, 0.0], vec![2.0, 0.0, 0.0, 0.0]]);
        let c = realized_cost(&record, &task)[0];
        assert!((c - 7.0).abs() < 1e-12);
    }
}
