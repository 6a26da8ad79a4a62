//! Deterministic closed-loop simulation around the ACC controller: scenario
//! ingestion, a scripted path-tracking operator, the actuator plant, exact
//! clearance measurement and CSV telemetry.

pub mod clearance;
pub mod error;
pub mod log;
pub mod operator;
pub mod plant;
pub mod scenario;
pub mod sim;

pub use clearance::{body_clearance, body_polygon, polygons_intersect, signed_clearance};
pub use error::{Result, SimError};
pub use log::{SimLog, SimRow};
pub use operator::{scripted_operator, OperatorGains, ReferencePath};
pub use plant::{plant_step, PlantStep};
pub use scenario::{Scenario, ScenarioDoc};
pub use sim::{
    run_scenario, run_scenario_with, CommandMode, CommandSource, CommandWatchdog, Outcome,
    RunOptions, RunResult, RunSummary, Simulation, TickRecord,
};
