//! Costs, constraints and the benchmark scenarios.

use std::f64::consts::PI;

use crate::dynamics::{DynamicsKind, DynamicsModel};
use crate::error::{invalid, Result};
use crate::scalar::Real;

/// Vertical cylinder (a disc in the plane for planar vehicles).
#[derive(Clone, Debug, PartialEq)]
pub struct Obstacle<T> {
    pub center: [T; 2],
    pub radius: T,
}

/// A multi-agent goal-reaching task with quadratic costs and indicator
/// constraints.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpec<T> {
    pub name: String,
    pub model: DynamicsModel<T>,
    pub starts: Vec<Vec<T>>,
    pub goals: Vec<Vec<T>>,
    /// Diagonal of the running state weight.
    pub state_weights: Vec<T>,
    /// Diagonal of the terminal state weight.
    pub terminal_weights: Vec<T>,
    /// Diagonal of the control weight, applied to `u - control_reference`.
    pub control_weights: Vec<T>,
    pub control_reference: Vec<T>,
    pub obstacles: Vec<Obstacle<T>>,
    pub collision_radius: T,
    pub crash_penalty: T,
    /// Prediction horizon `T'`.
    pub horizon: usize,
    /// Closed-loop steps `T`.
    pub mpc_steps: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Violations {
    pub obstacle_hit: bool,
    /// Indices into the position list that collide with the ego agent.
    pub collision_pairs: Vec<usize>,
}

impl Violations {
    pub fn any(&self) -> bool {
        self.obstacle_hit || !self.collision_pairs.is_empty()
    }
}

impl<T: Real> TaskSpec<T> {
    pub fn num_agents(&self) -> usize {
        self.starts.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let nx = self.model.kind.state_dim();
        let nu = self.model.kind.control_dim();
        if self.starts.is_empty() || self.starts.len() != self.goals.len() {
            return Err(invalid("need one goal per start and at least one agent"));
        }
        if self.starts.iter().chain(&self.goals).any(|s| s.len() != nx) {
            return Err(invalid("start/goal dimension does not match the dynamics"));
        }
        if self.state_weights.len() != nx || self.terminal_weights.len() != nx {
            return Err(invalid("state weight dimension does not match the dynamics"));
        }
        if self.control_weights.len() != nu || self.control_reference.len() != nu {
            return Err(invalid("control weight dimension does not match the dynamics"));
        }
        if !(self.collision_radius > T::zero()) || self.obstacles.iter().any(|o| !(o.radius > T::zero())) {
            return Err(invalid("radii must be positive"));
        }
        if !(self.crash_penalty >= T::zero()) {
            return Err(invalid("crash penalty must be non-negative"));
        }
        Ok(())
    }

    /// Running cost `(x - g)^T Q (x - g) + (u - u_ref)^T R (u - u_ref)`.
    pub fn task_cost(&self, agent: usize, x: &[T], u: &[T]) -> T {
        quad_form(&self.state_weights, x, &self.goals[agent])
            + quad_form(&self.control_weights, u, &self.control_reference)
    }

    /// Terminal cost `(x - g)^T Q_f (x - g)`.
    pub fn terminal_cost(&self, agent: usize, x: &[T]) -> T {
        quad_form(&self.terminal_weights, x, &self.goals[agent])
    }

    pub fn position<'a>(&self, x: &'a [T]) -> &'a [T] {
        &x[..self.model.position_dim()]
    }

    /// Signed clearance to the nearest obstacle surface, `+inf` without obstacles.
    pub fn obstacle_clearance(&self, x: &[T]) -> T {
        self.obstacles
            .iter()
            .map(|o| {
                let dx = x[0] - o.center[0];
                let dy = x[1] - o.center[1];
                (dx * dx + dy * dy).sqrt() - o.radius
            })
            .fold(T::infinity(), T::min)
    }

    pub fn obstacle_hit(&self, x: &[T]) -> bool {
        self.obstacle_clearance(x) < T::zero()
    }

    /// `|p_a - p_b| < collision radius`; contact at exactly the radius is feasible.
    pub fn collides(&self, a: &[T], b: &[T]) -> bool {
        let d2: T = self
            .position(a)
            .iter()
            .zip(self.position(b))
            .map(|(&p, &q)| (p - q) * (p - q))
            .sum();
        d2 < self.collision_radius * self.collision_radius
    }

    /// Violations of the ego state `ego` against obstacles and the states in
    /// `others`.
    pub fn constraint_violations(&self, ego: &[T], others: &[&[T]]) -> Violations {
        Violations {
            obstacle_hit: self.obstacle_hit(ego),
            collision_pairs: others
                .iter()
                .enumerate()
                .filter(|(_, o)| self.collides(ego, o))
                .map(|(k, _)| k)
                .collect(),
        }
    }
}

fn quad_form<T: Real>(w: &[T], x: &[T], r: &[T]) -> T {
    w.iter()
        .zip(x.iter().zip(r))
        .map(|(&w, (&a, &b))| {
            let d = a - b;
            w * d * d
        })
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scenario {
    PointMass,
    NarrowCrossing3,
    DubinsSwap10,
    DubinsFormation(usize),
    QuadFormation8,
    Scaling(usize),
}

impl Scenario {
    pub fn num_agents(self) -> usize {
        match self {
            Self::PointMass => 1,
            Self::NarrowCrossing3 => 3,
            Self::DubinsSwap10 => 10,
            Self::DubinsFormation(n) | Self::Scaling(n) => n,
            Self::QuadFormation8 => 8,
        }
    }

    pub fn label(self) -> String {
        match self {
            Self::PointMass => "point_mass".into(),
            Self::NarrowCrossing3 => "narrow_crossing3".into(),
            Self::DubinsSwap10 => "dubins_swap10".into(),
            Self::DubinsFormation(n) => format!("dubins_formation{n}"),
            Self::QuadFormation8 => "quad_formation8".into(),
            Self::Scaling(n) => format!("scaling{n}"),
        }
    }

    pub fn default_dynamics(self) -> DynamicsKind {
        match self {
            Self::PointMass => DynamicsKind::DoubleIntegrator2D,
            Self::QuadFormation8 => DynamicsKind::Quadcopter12,
            _ => DynamicsKind::Dubins,
        }
    }
}

/// Scenario geometry in meters. Which fields matter depends on the scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct Geometry<T> {
    pub collision_radius: T,
    /// Width of each opening between obstacles.
    pub gap: T,
    pub obstacle_radius: T,
    /// Obstacle center for the point-mass and swap scenarios.
    pub obstacle_center: [T; 2],
    /// Circle radius for the swap scenario.
    pub ring_radius: T,
    /// Lateral spacing between agents or lanes.
    pub spacing: T,
    /// Distance between the start line and the goal line.
    pub travel: T,
    /// Flight altitude for the quadcopter scenario.
    pub altitude: T,
}

impl<T: Real> Geometry<T> {
    pub fn defaults(scenario: Scenario) -> Self {
        let l = T::lit;
        let base = Self {
            collision_radius: l(0.5),
            gap: l(0.4),
            obstacle_radius: l(2.0),
            obstacle_center: [l(0.0), l(0.0)],
            ring_radius: l(4.0),
            spacing: l(1.5),
            travel: l(6.0),
            altitude: l(1.5),
        };
        match scenario {
            Scenario::PointMass => Self {
                obstacle_radius: l(0.8),
                obstacle_center: [l(2.0), l(0.15)],
                travel: l(4.0),
                ..base
            },
            Scenario::NarrowCrossing3 => base,
            Scenario::DubinsSwap10 => Self {
                obstacle_radius: l(1.0),
                obstacle_center: [l(0.8), l(0.6)],
                ..base
            },
            Scenario::DubinsFormation(_) | Scenario::Scaling(_) | Scenario::QuadFormation8 => Self {
                spacing: l(1.6),
                ..base
            },
        }
    }
}

/// Per-component cost weights, expanded to diagonals for the chosen model.
#[derive(Clone, Debug, PartialEq)]
pub struct CostWeights<T> {
    pub position: T,
    pub velocity: T,
    /// Heading (Dubins) or attitude (quadcopter) weight.
    pub heading: T,
    pub angular_rate: T,
    /// Terminal weight as a multiple of the running weight.
    pub terminal_scale: T,
    /// Per-channel control weights; empty means the model default.
    pub control: Vec<T>,
}

impl<T: Real> CostWeights<T> {
    pub fn defaults(kind: DynamicsKind) -> Self {
        let l = T::lit;
        match kind {
            DynamicsKind::DoubleIntegrator2D => Self {
                position: l(1.0),
                velocity: l(0.1),
                heading: l(0.0),
                angular_rate: l(0.0),
                terminal_scale: l(5.0),
                control: vec![l(0.05); 2],
            },
            DynamicsKind::Dubins => Self {
                position: l(1.0),
                velocity: l(0.0),
                heading: l(0.0),
                angular_rate: l(0.0),
                terminal_scale: l(5.0),
                control: vec![l(0.02), l(0.01)],
            },
            DynamicsKind::Quadcopter12 => Self {
                position: l(1.0),
                velocity: l(0.1),
                heading: l(0.5),
                angular_rate: l(0.05),
                terminal_scale: l(5.0),
                control: vec![l(0.2), l(1.0), l(1.0), l(1.0)],
            },
        }
    }

    fn state_diag(&self, kind: DynamicsKind) -> Vec<T> {
        let (p, v, h, w) = (self.position, self.velocity, self.heading, self.angular_rate);
        match kind {
            DynamicsKind::DoubleIntegrator2D => vec![p, p, v, v],
            DynamicsKind::Dubins => vec![p, p, h],
            DynamicsKind::Quadcopter12 => vec![p, p, p, v, v, v, h, h, h, w, w, w],
        }
    }
}

/// Everything needed to instantiate a scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioParams<T> {
    pub model: DynamicsModel<T>,
    pub geometry: Geometry<T>,
    pub weights: CostWeights<T>,
    pub crash_penalty: T,
    pub horizon: usize,
    pub mpc_steps: usize,
}

/// Default model for each dynamics kind.
pub fn default_model<T: Real>(kind: DynamicsKind) -> DynamicsModel<T> {
    let l = T::lit;
    let (dt, lo, hi) = match kind {
        DynamicsKind::DoubleIntegrator2D => (l(0.1), vec![l(-2.0); 2], vec![l(2.0); 2]),
        DynamicsKind::Dubins => (l(0.1), vec![l(0.0), l(-2.0)], vec![l(1.5), l(2.0)]),
        DynamicsKind::Quadcopter12 => (
            l(0.05),
            vec![l(0.0), l(-0.05), l(-0.05), l(-0.05)],
            vec![l(9.81), l(0.05), l(0.05), l(0.05)],
        ),
    };
    DynamicsModel::new(kind, dt, lo, hi).expect("default model limits are valid")
}

impl<T: Real> ScenarioParams<T> {
    pub fn defaults(scenario: Scenario) -> Self {
        let kind = scenario.default_dynamics();
        let (horizon, mpc_steps) = match scenario {
            Scenario::PointMass => (20, 50),
            Scenario::QuadFormation8 => (30, 160),
            _ => (20, 80),
        };
        Self {
            model: default_model(kind),
            geometry: Geometry::defaults(scenario),
            weights: CostWeights::defaults(kind),
            crash_penalty: T::lit(1e6),
            horizon,
            mpc_steps,
        }
    }
}

/// Builds the task for `scenario`. Geometry is deterministic in `params`.
pub fn make_scenario<T: Real>(scenario: Scenario, params: &ScenarioParams<T>) -> Result<TaskSpec<T>> {
    let kind = params.model.kind;
    let g = &params.geometry;
    let n = scenario.num_agents();
    if n == 0 {
        return Err(invalid("a scenario needs at least one agent"));
    }
    match (scenario, kind) {
        (Scenario::QuadFormation8, DynamicsKind::Quadcopter12) => {}
        (Scenario::QuadFormation8, _) => return Err(invalid("quad formation requires quadcopter dynamics")),
        (_, DynamicsKind::Quadcopter12) => {
            return Err(invalid(format!("{} is a planar scenario", scenario.label())))
        }
        _ => {}
    }

    let planar = |p: [T; 2], heading: T| -> Vec<T> {
        match kind {
            DynamicsKind::DoubleIntegrator2D => vec![p[0], p[1], T::zero(), T::zero()],
            DynamicsKind::Dubins => vec![p[0], p[1], heading],
            DynamicsKind::Quadcopter12 => {
                let mut x = vec![T::zero(); 12];
                x[0] = p[0];
                x[1] = p[1];
                x[2] = g.altitude;
                x
            }
        }
    };
    let half = T::lit(0.5);
    let pi = T::lit(PI);

    let (starts, goals, obstacles) = match scenario {
        Scenario::PointMass => {
            let s = planar([T::zero(), T::zero()], T::zero());
            let e = planar([g.travel, T::zero()], T::zero());
            (
                vec![s],
                vec![e],
                vec![Obstacle {
                    center: g.obstacle_center,
                    radius: g.obstacle_radius,
                }],
            )
        }
        Scenario::NarrowCrossing3 => {
            let d = g.travel * half;
            let s = g.spacing * half;
            let starts = vec![
                planar([-d, s], T::zero()),
                planar([-d, -s], T::zero()),
                planar([d, T::zero()], pi),
            ];
            let goals = vec![
                planar([d, -s], T::zero()),
                planar([d, s], T::zero()),
                planar([-d, T::zero()], pi),
            ];
            let c = g.gap * half + g.obstacle_radius;
            let obstacles = vec![
                Obstacle {
                    center: [T::zero(), c],
                    radius: g.obstacle_radius,
                },
                Obstacle {
                    center: [T::zero(), -c],
                    radius: g.obstacle_radius,
                },
            ];
            (starts, goals, obstacles)
        }
        Scenario::DubinsSwap10 => {
            let ring: Vec<[T; 2]> = (0..n)
                .map(|i| {
                    let a = T::lit(2.0 * PI * i as f64 / n as f64);
                    [g.ring_radius * a.cos(), g.ring_radius * a.sin()]
                })
                .collect();
            let heading = |i: usize| T::lit(2.0 * PI * i as f64 / n as f64) + pi;
            let starts = (0..n).map(|i| planar(ring[i], heading(i))).collect();
            let goals = (0..n)
                .map(|i| planar(ring[(i + n / 2) % n], heading(i)))
                .collect();
            let obstacles = vec![Obstacle {
                center: g.obstacle_center,
                radius: g.obstacle_radius,
            }];
            (starts, goals, obstacles)
        }
        Scenario::DubinsFormation(_) | Scenario::Scaling(_) | Scenario::QuadFormation8 => {
            formation(n, g, &planar)
        }
    };

    let weights = &params.weights;
    let running = weights.state_diag(kind);
    let terminal = running.iter().map(|&w| w * weights.terminal_scale).collect();
    let control_weights = if weights.control.is_empty() {
        CostWeights::defaults(kind).control
    } else {
        weights.control.clone()
    };
    let mut control_reference = vec![T::zero(); kind.control_dim()];
    if kind == DynamicsKind::Quadcopter12 {
        control_reference[0] = params.model.hover_thrust();
    }
    let task = TaskSpec {
        name: scenario.label(),
        model: params.model.clone(),
        starts,
        goals,
        state_weights: running,
        terminal_weights: terminal,
        control_weights,
        control_reference,
        obstacles,
        collision_radius: g.collision_radius,
        crash_penalty: params.crash_penalty,
        horizon: params.horizon,
        mpc_steps: params.mpc_steps,
    };
    task.validate()?;
    Ok(task)
}

type Layout<T> = (Vec<Vec<T>>, Vec<Vec<T>>, Vec<Obstacle<T>>);

/// Agents in lanes of at most four, one gate per lane in a wall of discs at
/// `x = 0`. The agent closest to the wall gets the farthest goal so lanes
/// can flow through in order.
fn formation<T: Real>(n: usize, g: &Geometry<T>, planar: &dyn Fn([T; 2], T) -> Vec<T>) -> Layout<T> {
    let lanes = n.min(4);
    let depth = n.div_ceil(lanes);
    let half = T::lit(0.5);
    let lane_y = |k: usize| (T::count(k) - T::count(lanes - 1) * half) * g.spacing;
    let d = g.travel * half;
    let mut starts = Vec::with_capacity(n);
    let mut goals = Vec::with_capacity(n);
    for i in 0..n {
        let lane = i % lanes;
        let col = i / lanes;
        let y = lane_y(lane);
        starts.push(planar([-d - T::count(col) * g.spacing, y], T::zero()));
        goals.push(planar([d + T::count(depth - 1 - col) * g.spacing, y], T::zero()));
    }
    // discs between lanes leave openings of width `gap` centered on each lane
    let r = ((g.spacing - g.gap) * half).max(T::lit(0.05));
    let mut obstacles = Vec::with_capacity(lanes + 1);
    for k in 0..=lanes {
        let y = lane_y(k) - g.spacing * half;
        obstacles.push(Obstacle {
            center: [T::zero(), y],
            radius: r,
        });
    }
    (starts, goals, obstacles)
}
