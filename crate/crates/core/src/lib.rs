//! Sampling-based trajectory optimization with interchangeable weight laws and
//! policy classes, scaled to multi-agent model predictive control through
//! consensus ADMM over adaptive neighborhoods.
//!
//! The numeric modules are generic over [`Real`] (`f32` or `f64`). The
//! aliases at the crate root fix the scalar to `f64`, which is what the
//! runtime, the experiment tooling and the CLI use.

pub mod admm;
pub mod analysis;
pub mod dynamics;
pub mod error;
pub mod io;
pub mod linalg;
pub mod optimizer;
pub mod policy;
pub mod rng;
pub mod runtime;
pub mod scalar;
pub mod shape;
pub mod tasks;
pub mod trajectory;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Matrix = linalg::Matrix<f64>;
pub type Trajectory = trajectory::Trajectory<f64>;
pub type TrajectoryPair = trajectory::TrajectoryPair<f64>;
pub type ShapeConfig = shape::ShapeConfig<f64>;
pub type WeightVector = shape::WeightVector<f64>;
pub type Policy = policy::Policy<f64>;
pub type GaussianPolicy = policy::GaussianPolicy<f64>;
pub type MixturePolicy = policy::MixturePolicy<f64>;
pub type SteinPolicy = policy::SteinPolicy<f64>;
pub type OptimizerConfig = optimizer::OptimizerConfig<f64>;
pub type LocalProblem<'a> = optimizer::LocalProblem<'a, f64>;
pub type DynamicsModel = dynamics::DynamicsModel<f64>;
pub type TaskSpec = tasks::TaskSpec<f64>;
pub type AgentLocalState = admm::AgentLocalState<f64>;
pub type GlobalConsensus = admm::GlobalConsensus<f64>;
pub type RunConfig = runtime::RunConfig<f64>;
pub type RunRecord = runtime::RunRecord<f64>;
