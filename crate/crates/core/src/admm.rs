//! Consensus ADMM bookkeeping: neighborhoods, augmented local copies, global
//! averaging, dual ascent and the receding-horizon remap.

use crate::dynamics::{Dynamics, DynamicsModel, Stacked};
use crate::error::{invalid, Result};
use crate::scalar::Real;
use crate::trajectory::Trajectory;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NeighborhoodMode<T> {
    /// Every agent within this Euclidean distance.
    DistanceBall(T),
    /// The `k` nearest agents, ties broken by ascending index.
    FixedSize(usize),
}

/// `out[i]` = agents that agent `i` models (sorted), `inn[i]` = agents that
/// model agent `i` (sorted).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborhoodSets {
    pub out: Vec<Vec<usize>>,
    pub inn: Vec<Vec<usize>>,
}

impl NeighborhoodSets {
    /// Builds the in-sets by transposing `out`.
    pub fn from_out(mut out: Vec<Vec<usize>>) -> Self {
        let n = out.len();
        let mut inn = vec![Vec::new(); n];
        for (i, list) in out.iter_mut().enumerate() {
            list.sort_unstable();
            for &j in list.iter() {
                inn[j].push(i);
            }
        }
        Self { out, inn }
    }

    pub fn isolated(n: usize) -> Self {
        Self::from_out(vec![Vec::new(); n])
    }

    pub fn num_agents(&self) -> usize {
        self.out.len()
    }

    pub fn is_consistent(&self) -> bool {
        (0..self.out.len()).all(|i| {
            !self.out[i].contains(&i)
                && self.out[i].iter().all(|&j| self.inn[j].contains(&i))
                && self.inn[i].iter().all(|&j| self.out[j].contains(&i))
        })
    }
}

pub fn compute_neighborhoods<T: Real>(positions: &[&[T]], mode: NeighborhoodMode<T>) -> Result<NeighborhoodSets> {
    let n = positions.len();
    if n == 0 {
        return Err(invalid("need at least one agent"));
    }
    let dist2 = |a: &[T], b: &[T]| -> T { a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum() };
    let out = match mode {
        NeighborhoodMode::DistanceBall(eps) => {
            if !(eps >= T::zero()) {
                return Err(invalid("neighborhood radius must be non-negative"));
            }
            (0..n)
                .map(|i| {
                    (0..n)
                        .filter(|&j| j != i && dist2(positions[i], positions[j]) <= eps * eps)
                        .collect()
                })
                .collect()
        }
        NeighborhoodMode::FixedSize(k) => {
            if k >= n && k > 0 {
                return Err(invalid(format!("fixed neighborhood size {k} needs more than {n} agents")));
            }
            (0..n)
                .map(|i| {
                    let mut others: Vec<(T, usize)> = (0..n)
                        .filter(|&j| j != i)
                        .map(|j| (dist2(positions[i], positions[j]), j))
                        .collect();
                    others.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite positions").then(a.1.cmp(&b.1)));
                    others.into_iter().take(k).map(|(_, j)| j).collect()
                })
                .collect()
        }
    };
    Ok(NeighborhoodSets::from_out(out))
}

/// Positive consensus penalties `mu` (states) and `nu` (controls).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Penalties<T> {
    mu: T,
    nu: T,
}

impl<T: Real> Penalties<T> {
    pub fn new(mu: T, nu: T) -> Result<Self> {
        if mu > T::zero() && nu > T::zero() && mu.is_finite() && nu.is_finite() {
            Ok(Self { mu, nu })
        } else {
            Err(invalid(format!("consensus penalties must be positive, got mu = {mu}, nu = {nu}")))
        }
    }

    pub fn mu(&self) -> T {
        self.mu
    }

    pub fn nu(&self) -> T {
        self.nu
    }
}

/// Agent `i`'s augmented copies `[x^i; x^{ij} for j in N_i]` and matching
/// duals. Column `t` of the state arrays holds `x_{t+1}`, column `t` of the
/// control arrays holds `u_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentLocalState<T> {
    pub agent: usize,
    pub neighbors: Vec<usize>,
    pub x: Trajectory<T>,
    pub u: Trajectory<T>,
    pub xi: Trajectory<T>,
    pub gamma: Trajectory<T>,
}

impl<T: Real> AgentLocalState<T> {
    /// Block index of agent `j` in this layout.
    pub fn block_of(&self, j: usize) -> Option<usize> {
        if j == self.agent {
            Some(0)
        } else {
            self.neighbors.binary_search(&j).ok().map(|k| k + 1)
        }
    }

    pub fn num_blocks(&self) -> usize {
        1 + self.neighbors.len()
    }

    /// Block agents in layout order.
    pub fn block_agents(&self) -> Vec<usize> {
        std::iter::once(self.agent).chain(self.neighbors.iter().copied()).collect()
    }

    pub fn state_block(&self, b: usize, nx: usize) -> Trajectory<T> {
        self.x.rows(b * nx, nx)
    }

    pub fn control_block(&self, b: usize, nu: usize) -> Trajectory<T> {
        self.u.rows(b * nu, nu)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlobalConsensus<T> {
    pub y: Vec<Trajectory<T>>,
    pub z: Vec<Trajectory<T>>,
}

/// `y^i = mean over j in M_i + {i} of (x^{ji} + xi^{ji} / mu)`, likewise `z`.
pub fn global_update<T: Real>(
    locals: &[AgentLocalState<T>],
    sets: &NeighborhoodSets,
    penalties: &Penalties<T>,
    nx: usize,
    nu: usize,
) -> GlobalConsensus<T> {
    let n = locals.len();
    let mut y = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    for i in 0..n {
        let horizon = locals[i].x.len();
        let mut ys = Trajectory::zeros(nx, horizon);
        let mut zs = Trajectory::zeros(nu, horizon);
        let contributors: Vec<usize> = std::iter::once(i).chain(sets.inn[i].iter().copied()).collect();
        for &j in &contributors {
            let local = &locals[j];
            let b = local.block_of(i).expect("in-set agent models agent i");
            accumulate(&mut ys, &local.x, &local.xi, b * nx, penalties.mu);
            accumulate(&mut zs, &local.u, &local.gamma, b * nu, penalties.nu);
        }
        let count = T::count(contributors.len());
        ys.as_mut_slice().iter_mut().for_each(|v| *v /= count);
        zs.as_mut_slice().iter_mut().for_each(|v| *v /= count);
        y.push(ys);
        z.push(zs);
    }
    GlobalConsensus { y, z }
}

fn accumulate<T: Real>(acc: &mut Trajectory<T>, primal: &Trajectory<T>, dual: &Trajectory<T>, row: usize, rho: T) {
    let d = acc.dim();
    for t in 0..acc.len() {
        let p = &primal.col(t)[row..row + d];
        let q = &dual.col(t)[row..row + d];
        for ((a, &x), &l) in acc.col_mut(t).iter_mut().zip(p).zip(q) {
            *a += x + l / rho;
        }
    }
}

/// `[y^i; y^j for j in N_i]` and the same for `z`.
pub fn assemble_globals_view<T: Real>(
    agent: usize,
    globals: &GlobalConsensus<T>,
    sets: &NeighborhoodSets,
) -> (Trajectory<T>, Trajectory<T>) {
    let order: Vec<usize> = std::iter::once(agent).chain(sets.out[agent].iter().copied()).collect();
    let ys: Vec<&Trajectory<T>> = order.iter().map(|&j| &globals.y[j]).collect();
    let zs: Vec<&Trajectory<T>> = order.iter().map(|&j| &globals.z[j]).collect();
    (Trajectory::stack(&ys), Trajectory::stack(&zs))
}

/// `xi += mu (x - y)`, `gamma += nu (u - z)`.
pub fn dual_update<T: Real>(
    local: &AgentLocalState<T>,
    y_view: &Trajectory<T>,
    z_view: &Trajectory<T>,
    penalties: &Penalties<T>,
) -> AgentLocalState<T> {
    let mut next = local.clone();
    for ((d, &x), &y) in next.xi.as_mut_slice().iter_mut().zip(local.x.as_slice()).zip(y_view.as_slice()) {
        *d += penalties.mu * (x - y);
    }
    for ((d, &u), &z) in next
        .gamma
        .as_mut_slice()
        .iter_mut()
        .zip(local.u.as_slice())
        .zip(z_view.as_slice())
    {
        *d += penalties.nu * (u - z);
    }
    next
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Residuals<T> {
    pub primal_state: T,
    pub primal_control: T,
}

/// Root-sum-square of `x~ - y~` and `u~ - z~` over all agents and steps.
pub fn consensus_residuals<T: Real>(
    locals: &[AgentLocalState<T>],
    globals: &GlobalConsensus<T>,
    sets: &NeighborhoodSets,
) -> Residuals<T> {
    let (mut rs, mut rc) = (T::zero(), T::zero());
    for local in locals {
        let (y, z) = assemble_globals_view(local.agent, globals, sets);
        rs += local.x.sub(&y).norm_sq();
        rc += local.u.sub(&z).norm_sq();
    }
    Residuals {
        primal_state: rs.sqrt(),
        primal_control: rc.sqrt(),
    }
}

/// For each block of the new layout, the block it occupied in the
/// old layout, or `None` for an entering neighbor.
pub fn block_plan(old: &[usize], new: &[usize]) -> Vec<Option<usize>> {
    std::iter::once(Some(0))
        .chain(new.iter().map(|j| old.binary_search(j).ok().map(|k| k + 1)))
        .collect()
}

/// Drops the first step: controls repeat their last value, states extend by
/// one propagation step under that control, duals are padded with zeros.
pub fn recede_local<T: Real>(local: &mut AgentLocalState<T>, model: &DynamicsModel<T>) {
    if local.u.is_empty() {
        return;
    }
    local.u.shift_repeat_last();
    let tail = propagate_tail(&local.x, &local.u, model);
    local.x.shift_with(&tail);
    local.xi.shift_zero();
    local.gamma.shift_zero();
}

pub fn recede_globals<T: Real>(globals: &mut GlobalConsensus<T>, model: &DynamicsModel<T>) {
    for (y, z) in globals.y.iter_mut().zip(&mut globals.z) {
        if z.is_empty() {
            continue;
        }
        z.shift_repeat_last();
        let tail = propagate_tail(y, z, model);
        y.shift_with(&tail);
    }
}

/// `F(x_last, u_last)` for a stack of blocks, where `u` has already been shifted.
fn propagate_tail<T: Real>(x: &Trajectory<T>, u: &Trajectory<T>, model: &DynamicsModel<T>) -> Vec<T> {
    let blocks = x.dim() / model.kind.state_dim();
    let stacked = Stacked { model, blocks };
    let mut tail = vec![T::zero(); x.dim()];
    stacked.step_into(x.col(x.len() - 1), u.col(u.len() - 1), &mut tail);
    tail
}

/// Rebuilds `local` for the neighbor list `new_neighbors`: staying neighbors
/// keep their blocks and duals, leaving ones are dropped, entering ones start
/// from their global variables with zero duals.
pub fn remap_local<T: Real>(
    local: &AgentLocalState<T>,
    new_neighbors: &[usize],
    globals: &GlobalConsensus<T>,
    nx: usize,
    nu: usize,
) -> AgentLocalState<T> {
    let horizon = local.x.len();
    let plan = block_plan(&local.neighbors, new_neighbors);
    let agents: Vec<usize> = std::iter::once(local.agent).chain(new_neighbors.iter().copied()).collect();
    let zero_x = Trajectory::zeros(nx, horizon);
    let zero_u = Trajectory::zeros(nu, horizon);
    let mut xs = Vec::new();
    let mut us = Vec::new();
    let mut xis = Vec::new();
    let mut gs = Vec::new();
    for (src, &j) in plan.iter().zip(&agents) {
        match *src {
            Some(b) => {
                xs.push(local.x.rows(b * nx, nx));
                us.push(local.u.rows(b * nu, nu));
                xis.push(local.xi.rows(b * nx, nx));
                gs.push(local.gamma.rows(b * nu, nu));
            }
            None => {
                xs.push(globals.y[j].clone());
                us.push(globals.z[j].clone());
                xis.push(zero_x.clone());
                gs.push(zero_u.clone());
            }
        }
    }
    let stack = |v: &[Trajectory<T>]| Trajectory::stack(&v.iter().collect::<Vec<_>>());
    AgentLocalState {
        agent: local.agent,
        neighbors: new_neighbors.to_vec(),
        x: stack(&xs),
        u: stack(&us),
        xi: stack(&xis),
        gamma: stack(&gs),
    }
}

/// Receding-horizon step for the whole team: shift every trajectory, remap
/// blocks to `new_sets`, then rerun the global and dual updates.
pub fn recede_and_remap<T: Real>(
    locals: &[AgentLocalState<T>],
    globals: &GlobalConsensus<T>,
    new_sets: &NeighborhoodSets,
    penalties: &Penalties<T>,
    model: &DynamicsModel<T>,
) -> (Vec<AgentLocalState<T>>, GlobalConsensus<T>) {
    let nx = model.kind.state_dim();
    let nu = model.kind.control_dim();
    let mut shifted_globals = globals.clone();
    recede_globals(&mut shifted_globals, model);
    let remapped: Vec<AgentLocalState<T>> = locals
        .iter()
        .map(|l| {
            let mut s = l.clone();
            recede_local(&mut s, model);
            remap_local(&s, &new_sets.out[l.agent], &shifted_globals, nx, nu)
        })
        .collect();
    let new_globals = global_update(&remapped, new_sets, penalties, nx, nu);
    let updated = remapped
        .iter()
        .map(|l| {
            let (y, z) = assemble_globals_view(l.agent, &new_globals, new_sets);
            dual_update(l, &y, &z, penalties)
        })
        .collect();
    (updated, new_globals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::DynamicsKind;

    fn pts(xs: &[f64]) -> Vec<Vec<f64>> {
        xs.iter().map(|&x| vec![x, 0.0]).collect()
    }

    fn sets(xs: &[f64], mode: NeighborhoodMode<f64>) -> Result<NeighborhoodSets> {
        let p = pts(xs);
        let refs: Vec<&[f64]> = p.iter().map(|v| v.as_slice()).collect();
        compute_neighborhoods(&refs, mode)
    }

    #[test]
    fn distance_ball_examples() {
        let s = sets(&[0.0, 1.0], NeighborhoodMode::DistanceBall(2.0)).unwrap();
        assert_eq!(s.out, vec![vec![1], vec![0]]);
        let s = sets(&[0.0, 1.0], NeighborhoodMode::DistanceBall(0.5)).unwrap();
        assert!(s.out.iter().all(|o| o.is_empty()));
    }

    #[test]
    fn fixed_size_collinear() {
        let s = sets(&[0.0, 1.0, 3.0], NeighborhoodMode::FixedSize(1)).unwrap();
        assert_eq!(s.out, vec![vec![1], vec![0], vec![1]]);
        assert_eq!(s.inn[1], vec![0, 2]);
        assert!(s.is_consistent());
        assert!(sets(&[0.0, 1.0], NeighborhoodMode::FixedSize(2)).is_err());
    }

    #[test]
    fn fixed_size_ties_prefer_lower_index() {
        let s = sets(&[0.0, -1.0, 1.0], NeighborhoodMode::FixedSize(1)).unwrap();
        assert_eq!(s.out[0], vec![1]);
    }

    fn scalar_local(agent: usize, neighbors: Vec<usize>, x: Vec<f64>) -> AgentLocalState<f64> {
        let d = x.len();
        AgentLocalState {
            agent,
            neighbors,
            x: Trajectory::from_flat(d, 1, x.clone()),
            u: Trajectory::from_flat(d, 1, x),
            xi: Trajectory::zeros(d, 1),
            gamma: Trajectory::zeros(d, 1),
        }
    }

    #[test]
    fn global_average_hand_example() {
        let s = NeighborhoodSets::from_out(vec![vec![], vec![0]]);
        let locals = vec![scalar_local(0, vec![], vec![1.0]), scalar_local(1, vec![0], vec![5.0, 3.0])];
        let g = global_update(&locals, &s, &Penalties::new(1.0, 1.0).unwrap(), 1, 1);
        assert_eq!(g.y[0].as_slice(), &[2.0]);
        assert_eq!(g.y[1].as_slice(), &[5.0]);
    }

    #[test]
    fn isolated_agent_keeps_its_trajectory() {
        let s = NeighborhoodSets::isolated(1);
        let locals = vec![scalar_local(0, vec![], vec![4.5])];
        let g = global_update(&locals, &s, &Penalties::new(2.0, 3.0).unwrap(), 1, 1);
        assert_eq!(g.y[0].as_slice(), &[4.5]);
    }

    #[test]
    fn dual_hand_example() {
        let mut l = scalar_local(0, vec![], vec![3.0]);
        l.xi = Trajectory::from_flat(1, 1, vec![1.0]);
        let y = Trajectory::from_flat(1, 1, vec![1.0]);
        let z = l.u.clone();
        let next = dual_update(&l, &y, &z, &Penalties::new(3.0, 1.0).unwrap());
        assert_eq!(next.xi.as_slice(), &[7.0]);
        assert_eq!(next.gamma.as_slice(), &[0.0]);
        assert!(Penalties::new(1.0, 0.0).is_err());
    }

    #[test]
    fn view_stacks_self_then_neighbors() {
        let g = GlobalConsensus {
            y: (0..3).map(|i| Trajectory::from_flat(1, 1, vec![i as f64])).collect(),
            z: (0..3).map(|i| Trajectory::from_flat(1, 1, vec![10.0 + i as f64])).collect(),
        };
        let s = NeighborhoodSets::from_out(vec![vec![2, 1], vec![], vec![]]);
        let (y, z) = assemble_globals_view(0, &g, &s);
        assert_eq!(y.as_slice(), &[0.0, 1.0, 2.0]);
        assert_eq!(z.as_slice(), &[10.0, 11.0, 12.0]);
        let (y, _) = assemble_globals_view(1, &g, &s);
        assert_eq!(y.as_slice(), &[1.0]);
    }

    #[test]
    fn residual_examples() {
        let s = NeighborhoodSets::isolated(2);
        let locals = vec![scalar_local(0, vec![], vec![3.0]), scalar_local(1, vec![], vec![4.0])];
        let g = GlobalConsensus {
            y: vec![Trajectory::zeros(1, 1), Trajectory::zeros(1, 1)],
            z: vec![Trajectory::from_flat(1, 1, vec![3.0]), Trajectory::from_flat(1, 1, vec![4.0])],
        };
        let r = consensus_residuals(&locals, &g, &s);
        assert_eq!(r.primal_state, 5.0);
        assert_eq!(r.primal_control, 0.0);
    }

    fn di() -> DynamicsModel<f64> {
        DynamicsModel::new(DynamicsKind::DoubleIntegrator2D, 0.1, vec![-1.0; 2], vec![1.0; 2]).unwrap()
    }

    #[test]
    fn remap_drops_and_inserts_blocks() {
        let nx = 4;
        let nu = 2;
        let local = AgentLocalState {
            agent: 0,
            neighbors: vec![1],
            x: Trajectory::constant(&[0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0], 2),
            u: Trajectory::constant(&[0.0, 0.0, 0.5, 0.5], 2),
            xi: Trajectory::constant(&[1.0; 8], 2),
            gamma: Trajectory::constant(&[1.0; 4], 2),
        };
        let globals = GlobalConsensus {
            y: (0..3).map(|i| Trajectory::constant(&[i as f64; 4], 2)).collect(),
            z: (0..3).map(|i| Trajectory::constant(&[i as f64; 2], 2)).collect(),
        };
        let next = remap_local(&local, &[2], &globals, nx, nu);
        assert_eq!(next.num_blocks(), 2);
        assert_eq!(next.state_block(1, nx), globals.y[2]);
        assert_eq!(next.xi.rows(4, 4), Trajectory::zeros(4, 2));
        assert_eq!(next.xi.rows(0, 4), Trajectory::constant(&[1.0; 4], 2));
        let dropped = remap_local(&local, &[], &globals, nx, nu);
        assert_eq!(dropped.x.dim(), 4);
        let _ = di();
    }

    #[test]
    fn recede_extends_by_propagation() {
        let mut local = AgentLocalState {
            agent: 0,
            neighbors: vec![],
            x: Trajectory::from_columns(4, &[vec![0.0, 0.0, 1.0, 0.0], vec![0.1, 0.0, 1.0, 0.0]]),
            u: Trajectory::zeros(2, 2),
            xi: Trajectory::constant(&[1.0; 4], 2),
            gamma: Trajectory::constant(&[1.0; 2], 2),
        };
        recede_local(&mut local, &di());
        assert_eq!(local.x.col(0), &[0.1, 0.0, 1.0, 0.0]);
        assert!((local.x.col(1)[0] - 0.2).abs() < 1e-15);
        assert_eq!(local.xi.col(1), &[0.0; 4]);
        assert_eq!(local.xi.col(0), &[1.0; 4]);
    }
}
