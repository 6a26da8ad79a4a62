//! Steering-action-aware adaptive cruise control for teleoperated road vehicles.
//!
//! Each controller tick samples a fan of braking trajectories covering every
//! constant steering rate the operator could apply, reduces it to a global safe
//! progress and a critical curvature profile, and optimizes a velocity profile
//! that stops within that progress. The first optimized speed becomes the velocity
//! command; the operator's steering is always executed unchanged.
//!
//! The math is generic over [`Scalar`] (`f32`/`f64`); the `*64` aliases below are
//! what the simulator and tools use.

pub mod controller;
pub mod error;
pub mod geometry;
pub mod qp;
pub mod scalar;
pub mod tree;
pub mod vehicle;
pub mod velocity;

pub use controller::{fallback_command, AccController, AccOutput, OperatorCommand};
pub use error::{Error, Result};
pub use geometry::{ellipse_contains, Ellipse, Obstacle, Point2};
pub use scalar::Scalar;
pub use tree::{
    check_state_collision, critical_curvature_profile, generate_tree, global_safe_progress,
    plan_tree, safe_progress, steering_rates, stop_deceleration, CollisionChecker,
    ControllerConfig, Trajectory, TreeResult,
};
pub use vehicle::{curvature_from_steering, euler_step, ControlInput, VehicleParams, VehicleState};
pub use velocity::{
    build_problem, extract_command, lateral_velocity_bound, solve, SolveStatus, VelocityLimits,
    VelocityProblem, VelocitySolution, VelocityWeights,
};

pub type VehicleState64 = VehicleState<f64>;
pub type ControlInput64 = ControlInput<f64>;
pub type VehicleParams64 = VehicleParams<f64>;
pub type Obstacle64 = Obstacle<f64>;
pub type Point64 = Point2<f64>;
pub type ControllerConfig64 = ControllerConfig<f64>;
pub type TreeResult64 = TreeResult<f64>;
pub type VelocityWeights64 = VelocityWeights<f64>;
pub type VelocityProblem64 = VelocityProblem<f64>;
pub type VelocitySolution64 = VelocitySolution<f64>;
pub type AccController64 = AccController<f64>;
pub type AccOutput64 = AccOutput<f64>;
pub type OperatorCommand64 = OperatorCommand<f64>;

pub type VehicleState32 = VehicleState<f32>;
pub type VehicleParams32 = VehicleParams<f32>;
pub type AccController32 = AccController<f32>;
