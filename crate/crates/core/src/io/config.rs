//! TOML experiment files. Parsing is strict: unknown keys are rejected and
//! errors carry the offending key and its line.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::admm::{NeighborhoodMode, Penalties};
use crate::analysis::BoundsProblem;
use crate::dynamics::{DynamicsKind, Integrator};
use crate::error::{Error, Result};
use crate::optimizer::{OptimizerConfig, UpdateMode};
use crate::policy::Bandwidth;
use crate::runtime::{Mode, PolicyKind, PolicySpec, RunConfig};
use crate::shape::{ShapeConfig, Threshold};
use crate::tasks::{default_model, make_scenario, Scenario, ScenarioParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub dynamics: DynamicsSection,
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub admm: AdmmSection,
    pub run: RunSection,
    #[serde(default)]
    pub bounds: BoundsSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    /// `point_mass`, `narrow_crossing3`, `dubins_swap10`, `dubins_formation`,
    /// `quad_formation8` or `scaling`.
    pub name: String,
    /// Agent count for `dubins_formation` and `scaling`.
    pub agents: Option<usize>,
    /// Prediction horizon `T'`.
    pub horizon: Option<usize>,
    pub collision_radius: Option<f64>,
    pub gap: Option<f64>,
    pub obstacle_radius: Option<f64>,
    pub obstacle_center: Option<[f64; 2]>,
    pub ring_radius: Option<f64>,
    pub spacing: Option<f64>,
    pub travel: Option<f64>,
    pub altitude: Option<f64>,
    pub position_weight: Option<f64>,
    pub velocity_weight: Option<f64>,
    pub heading_weight: Option<f64>,
    pub angular_rate_weight: Option<f64>,
    pub terminal_scale: Option<f64>,
    pub control_weights: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsSection {
    /// `double_integrator`, `dubins` or `quadcopter`.
    pub kind: Option<String>,
    pub dt: Option<f64>,
    pub control_min: Option<Vec<f64>>,
    pub control_max: Option<Vec<f64>>,
    /// `euler` or `rk4`.
    pub integrator: Option<String>,
    pub mass: Option<f64>,
    pub gravity: Option<f64>,
    pub inertia: Option<[f64; 3]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    /// `mppi`, `normalized_mppi`, `tsallis`, `cem` or `sigmoid`.
    pub perspective: String,
    pub lambda: Option<f64>,
    pub r: Option<f64>,
    pub gamma: Option<f64>,
    pub elite_fraction: Option<f64>,
    pub kappa: Option<f64>,
    pub quantile_rho: Option<f64>,
    /// `projection` or `gradient`.
    #[serde(default = "default_update_mode")]
    pub update_mode: String,
    /// `M`
    pub samples: usize,
    /// `K`
    pub iterations: usize,
    #[serde(default = "one")]
    pub step_size: f64,
    #[serde(default)]
    pub step_decay: f64,
    #[serde(default)]
    pub sample_growth: f64,
    #[serde(default = "one_usize")]
    pub em_iters: usize,
    /// `gaussian`, `gmm` or `stein`.
    #[serde(default = "default_policy")]
    pub policy: String,
    /// Per-channel initial standard deviation of one agent's controls.
    pub initial_std: Option<Vec<f64>>,
    #[serde(default = "default_floor")]
    pub covariance_floor: f64,
    #[serde(default = "one")]
    pub smoothing: f64,
    /// Update only the means of a Gaussian policy.
    #[serde(default)]
    pub fixed_covariance: bool,
    #[serde(default = "half")]
    pub warm_start_blend: f64,
    #[serde(default = "two_usize")]
    pub modes: usize,
    #[serde(default = "one")]
    pub spread: f64,
    #[serde(default = "two_usize")]
    pub particles: usize,
    pub rollouts_per_particle: Option<usize>,
    #[serde(default = "default_stein_step")]
    pub stein_step: f64,
    /// Fixed kernel bandwidth; the median heuristic when absent.
    pub bandwidth: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdmmSection {
    /// `L`
    #[serde(default = "default_admm_iters")]
    pub iterations: usize,
    #[serde(default = "one")]
    pub mu: f64,
    #[serde(default = "one")]
    pub nu: f64,
    /// Crash penalty.
    pub rho: Option<f64>,
    /// `ball` or `fixed`.
    #[serde(default = "default_neighborhood")]
    pub neighborhood: String,
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default = "default_k")]
    pub k: usize,
}

impl Default for AdmmSection {
    fn default() -> Self {
        Self {
            iterations: default_admm_iters(),
            mu: 1.0,
            nu: 1.0,
            rho: None,
            neighborhood: default_neighborhood(),
            radius: default_radius(),
            k: default_k(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// `distributed` or `centralized`.
    #[serde(default = "default_mode")]
    pub mode: String,
    /// `T`
    pub steps: Option<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub centralized_samples: Option<usize>,
    #[serde(default)]
    pub parallel_agents: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSection {
    #[serde(default = "default_bounds_samples")]
    pub samples: usize,
    #[serde(default = "default_bounds_trials")]
    pub trials: usize,
    #[serde(default = "default_eps")]
    pub eps1: f64,
    #[serde(default = "default_eps")]
    pub eps2: f64,
    #[serde(default)]
    pub problem: BoundsProblem,
    #[serde(default)]
    pub seed: u64,
}

impl Default for BoundsSection {
    fn default() -> Self {
        Self {
            samples: default_bounds_samples(),
            trials: default_bounds_trials(),
            eps1: default_eps(),
            eps2: default_eps(),
            problem: BoundsProblem::default(),
            seed: 0,
        }
    }
}

fn one() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}
fn one_usize() -> usize {
    1
}
fn two_usize() -> usize {
    2
}
fn default_update_mode() -> String {
    "projection".into()
}
fn default_policy() -> String {
    "gaussian".into()
}
fn default_floor() -> f64 {
    1e-6
}
fn default_stein_step() -> f64 {
    0.5
}
fn default_admm_iters() -> usize {
    3
}
fn default_neighborhood() -> String {
    "ball".into()
}
fn default_radius() -> f64 {
    3.0
}
fn default_k() -> usize {
    3
}
fn default_mode() -> String {
    "distributed".into()
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_bounds_samples() -> usize {
    500
}
fn default_bounds_trials() -> usize {
    1000
}
fn default_eps() -> f64 {
    0.1
}

/// A parsed experiment: the run template, its seeds and the bounds check
/// settings.
#[derive(Clone, Debug, PartialEq)]
pub struct Experiment {
    pub scenario: Scenario,
    pub run: RunConfig<f64>,
    pub seeds: Vec<u64>,
    pub bounds: BoundsSection,
    pub file: ConfigFile,
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn scenario_of(s: &ScenarioSection) -> Result<Scenario> {
    let agents = |default: usize| s.agents.unwrap_or(default);
    let fixed = |scenario: Scenario| match s.agents {
        Some(n) if n != scenario.num_agents() => Err(cfg_err(format!(
            "scenario.agents: {} has {} agents, got {n}",
            s.name,
            scenario.num_agents()
        ))),
        _ => Ok(scenario),
    };
    match s.name.as_str() {
        "point_mass" => fixed(Scenario::PointMass),
        "narrow_crossing3" => fixed(Scenario::NarrowCrossing3),
        "dubins_swap10" => fixed(Scenario::DubinsSwap10),
        "quad_formation8" => fixed(Scenario::QuadFormation8),
        "dubins_formation" => Ok(Scenario::DubinsFormation(agents(4))),
        "scaling" => Ok(Scenario::Scaling(agents(4))),
        other => Err(cfg_err(format!("scenario.name: unknown scenario `{other}`"))),
    }
}

fn dynamics_kind(name: &str) -> Result<DynamicsKind> {
    match name {
        "double_integrator" => Ok(DynamicsKind::DoubleIntegrator2D),
        "dubins" => Ok(DynamicsKind::Dubins),
        "quadcopter" => Ok(DynamicsKind::Quadcopter12),
        other => Err(cfg_err(format!("dynamics.kind: unknown model `{other}`"))),
    }
}

fn shape_of(o: &OptimizerSection) -> Result<ShapeConfig<f64>> {
    let need = |key: &str, v: Option<f64>| v.ok_or_else(|| cfg_err(format!("optimizer.{key} is required for {}", o.perspective)));
    let threshold = || match (o.gamma, o.elite_fraction) {
        (Some(g), None) => Ok(Threshold::Gamma(g)),
        (None, Some(f)) => Ok(Threshold::EliteFraction(f)),
        (None, None) => Err(cfg_err(format!(
            "optimizer: {} needs gamma or elite_fraction",
            o.perspective
        ))),
        (Some(_), Some(_)) => Err(cfg_err("optimizer: gamma and elite_fraction are exclusive")),
    };
    let shape = match o.perspective.as_str() {
        "mppi" => ShapeConfig::Exponential {
            lambda: need("lambda", o.lambda)?,
        },
        "normalized_mppi" => ShapeConfig::NormalizedExponential {
            lambda: need("lambda", o.lambda)?,
        },
        "tsallis" => ShapeConfig::TsallisReparam {
            r: need("r", o.r)?,
            threshold: threshold()?,
        },
        "cem" => ShapeConfig::Indicator { threshold: threshold()? },
        "sigmoid" => ShapeConfig::Sigmoid {
            kappa: need("kappa", o.kappa)?,
            quantile_rho: need("quantile_rho", o.quantile_rho)?,
        },
        other => return Err(cfg_err(format!("optimizer.perspective: unknown perspective `{other}`"))),
    };
    shape.validate().map_err(|e| cfg_err(format!("optimizer: {e}")))?;
    Ok(shape)
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| cfg_err(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Resolves defaults and validates into an [`Experiment`].
    pub fn build(&self) -> Result<Experiment> {
        let scenario = scenario_of(&self.scenario)?;
        let mut params = ScenarioParams::<f64>::defaults(scenario);
        let d = &self.dynamics;
        if let Some(kind) = &d.kind {
            let kind = dynamics_kind(kind)?;
            if kind != params.model.kind {
                params.model = default_model(kind);
                params.weights = crate::tasks::CostWeights::defaults(kind);
            }
        }
        let m = &mut params.model;
        if let Some(v) = d.dt {
            m.dt = v;
        }
        if let Some(v) = &d.control_min {
            m.control_min = v.clone();
        }
        if let Some(v) = &d.control_max {
            m.control_max = v.clone();
        }
        if let Some(v) = &d.integrator {
            m.integrator = match v.as_str() {
                "euler" => Integrator::Euler,
                "rk4" => Integrator::Rk4,
                other => return Err(cfg_err(format!("dynamics.integrator: unknown integrator `{other}`"))),
            };
        }
        if let Some(v) = d.mass {
            m.quad.mass = v;
        }
        if let Some(v) = d.gravity {
            m.quad.gravity = v;
        }
        if let Some(v) = d.inertia {
            m.quad.inertia = v;
        }
        m.validate().map_err(|e| cfg_err(format!("dynamics: {e}")))?;

        let s = &self.scenario;
        let g = &mut params.geometry;
        let set = |dst: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        set(&mut g.collision_radius, s.collision_radius);
        set(&mut g.gap, s.gap);
        set(&mut g.obstacle_radius, s.obstacle_radius);
        set(&mut g.ring_radius, s.ring_radius);
        set(&mut g.spacing, s.spacing);
        set(&mut g.travel, s.travel);
        set(&mut g.altitude, s.altitude);
        if let Some(c) = s.obstacle_center {
            g.obstacle_center = c;
        }
        let w = &mut params.weights;
        set(&mut w.position, s.position_weight);
        set(&mut w.velocity, s.velocity_weight);
        set(&mut w.heading, s.heading_weight);
        set(&mut w.angular_rate, s.angular_rate_weight);
        set(&mut w.terminal_scale, s.terminal_scale);
        if let Some(c) = &s.control_weights {
            w.control = c.clone();
        }
        if let Some(h) = s.horizon {
            params.horizon = h;
        }
        if let Some(t) = self.run.steps {
            params.mpc_steps = t;
        }
        set(&mut params.crash_penalty, self.admm.rho);
        let task = make_scenario(scenario, &params).map_err(|e| cfg_err(format!("scenario: {e}")))?;

        let o = &self.optimizer;
        let mut optimizer = OptimizerConfig::new(o.samples, o.iterations, shape_of(o)?);
        optimizer.update_mode = match o.update_mode.as_str() {
            "projection" => UpdateMode::Projection,
            "gradient" => UpdateMode::GradientSS,
            other => return Err(cfg_err(format!("optimizer.update_mode: unknown mode `{other}`"))),
        };
        optimizer.step_size = o.step_size;
        optimizer.step_decay = o.step_decay;
        optimizer.sample_growth = o.sample_growth;
        optimizer.em_iters = o.em_iters;

        let nu = task.model.kind.control_dim();
        let initial_std = match &o.initial_std {
            Some(v) => v.clone(),
            None => task
                .model
                .control_min
                .iter()
                .zip(&task.model.control_max)
                .map(|(lo, hi)| 0.25 * (hi - lo))
                .collect(),
        };
        if initial_std.len() != nu {
            return Err(cfg_err(format!("optimizer.initial_std: expected {nu} entries")));
        }
        let kind = match o.policy.as_str() {
            "gaussian" => PolicyKind::Gaussian,
            "gmm" => PolicyKind::Mixture {
                modes: o.modes,
                spread: o.spread,
            },
            "stein" => PolicyKind::Stein {
                particles: o.particles,
                rollouts_per_particle: o.rollouts_per_particle.unwrap_or(o.samples.div_ceil(o.particles.max(1))),
                step_size: o.stein_step,
                bandwidth: o.bandwidth.map_or(Bandwidth::MedianHeuristic, Bandwidth::Fixed),
                spread: o.spread,
            },
            other => return Err(cfg_err(format!("optimizer.policy: unknown policy `{other}`"))),
        };
        if let PolicyKind::Stein {
            particles,
            rollouts_per_particle,
            ..
        } = kind
        {
            optimizer.num_samples = particles * rollouts_per_particle;
        }
        let policy = PolicySpec {
            kind,
            initial_std,
            covariance_floor: o.covariance_floor,
            smoothing: o.smoothing,
            fixed_covariance: o.fixed_covariance,
            warm_start_blend: o.warm_start_blend,
        };

        let a = &self.admm;
        let penalties = Penalties::new(a.mu, a.nu).map_err(|e| cfg_err(format!("admm: {e}")))?;
        let neighborhood = match a.neighborhood.as_str() {
            "ball" => NeighborhoodMode::DistanceBall(a.radius),
            "fixed" => NeighborhoodMode::FixedSize(a.k),
            other => return Err(cfg_err(format!("admm.neighborhood: unknown mode `{other}`"))),
        };
        let mode = match self.run.mode.as_str() {
            "distributed" => Mode::Distributed,
            "centralized" => Mode::Centralized,
            other => return Err(cfg_err(format!("run.mode: unknown mode `{other}`"))),
        };
        if self.run.seeds.is_empty() {
            return Err(cfg_err("run.seeds: at least one seed is required"));
        }
        let run = RunConfig {
            mode,
            task,
            optimizer,
            policy,
            admm_iters: a.iterations,
            penalties,
            neighborhood,
            centralized_samples: self.run.centralized_samples,
            parallel_agents: self.run.parallel_agents,
            seed: self.run.seeds[0],
        };
        run.validate().map_err(|e| cfg_err(e.to_string()))?;
        Ok(Experiment {
            scenario,
            run,
            seeds: self.run.seeds.clone(),
            bounds: self.bounds.clone(),
            file: self.clone(),
        })
    }

    /// Copy with the agent count replaced, for scaling sweeps.
    pub fn with_agents(&self, n: usize) -> Self {
        let mut c = self.clone();
        c.scenario.agents = Some(n);
        c
    }
}

pub fn parse_config_str(text: &str) -> Result<Experiment> {
    ConfigFile::parse(text)?.build()
}

pub fn parse_config(path: &Path) -> Result<Experiment> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    ConfigFile::parse(&text)
        .and_then(|f| f.build())
        .map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            e => e,
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[scenario]
name = "point_mass"

[optimizer]
perspective = "mppi"
lambda = 1.0
samples = 64
iterations = 2

[run]
"#;

    #[test]
    fn minimal_file_uses_defaults() {
        let e = parse_config_str(MINIMAL).unwrap();
        assert_eq!(e.scenario, Scenario::PointMass);
        assert_eq!(e.seeds, vec![0]);
        assert_eq!(e.run.task.horizon, 20);
        assert_eq!(e.run.task.mpc_steps, 50);
        assert_eq!(e.run.admm_iters, 3);
        assert_eq!(e.run.mode, Mode::Distributed);
        assert_eq!(e.run.policy.initial_std, vec![1.0, 1.0]);
    }

    #[test]
    fn misspelled_key_is_named() {
        let text = MINIMAL.replace("[optimizer]", "[optimzer]");
        let err = parse_config_str(&text).unwrap_err().to_string();
        assert!(err.contains("optimzer"), "{err}");
        let text = MINIMAL.replace("lambda = 1.0", "lambda = 1.0\nlamda = 2.0");
        let err = parse_config_str(&text).unwrap_err().to_string();
        assert!(err.contains("lamda") && err.contains("line"), "{err}");
    }

    #[test]
    fn type_mismatch_and_missing_key() {
        let err = parse_config_str(&MINIMAL.replace("samples = 64", "samples = \"many\"")).unwrap_err();
        assert!(err.to_string().contains("samples"), "{err}");
        let err = parse_config_str(&MINIMAL.replace("iterations = 2", "")).unwrap_err();
        assert!(err.to_string().contains("iterations"), "{err}");
    }

    #[test]
    fn seeds_form_the_sweep() {
        let e = parse_config_str(&MINIMAL.replace("[run]", "[run]\nseeds = [1, 2, 3]")).unwrap();
        assert_eq!(e.seeds, vec![1, 2, 3]);
    }

    #[test]
    fn perspectives_map_to_shapes() {
        let t = MINIMAL.replace("perspective = \"mppi\"\nlambda = 1.0", "perspective = \"tsallis\"\nr = 2.0\nelite_fraction = 0.1");
        let e = parse_config_str(&t).unwrap();
        assert_eq!(
            e.run.optimizer.shape,
            ShapeConfig::TsallisReparam {
                r: 2.0,
                threshold: Threshold::EliteFraction(0.1)
            }
        );
        let t = MINIMAL.replace("perspective = \"mppi\"\nlambda = 1.0", "perspective = \"cem\"");
        assert!(parse_config_str(&t).is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let f = ConfigFile::parse(MINIMAL).unwrap();
        assert_eq!(ConfigFile::parse(&f.to_toml()).unwrap(), f);
    }
}
