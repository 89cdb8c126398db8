//! Multi-vehicle merging simulator with potential-field path planning and
//! interactive speed optimization over a simulated V2V bus.

pub mod cli;
pub mod coordination;
pub mod error;
pub mod field;
pub mod fit;
pub mod plot;
pub mod scenario;
pub mod sim;
pub mod speed;

pub use coordination::{plan_step, Plan, PlannerKind, PlannerSettings, SlpMessage};
pub use error::{Error, Result};
pub use field::{generate_waypoints, universal_potential, virtual_force, World};
pub use fit::{fit_cubic, CubicPath, FitProblem};
pub use scenario::{load_scenario, save_scenario, ScenarioConfig, VehicleSpec, VehicleState};
pub use sim::{run_scenario, RunFailure, RunOutput, RunReport};
pub use speed::{optimize_speeds, IsoProblem, SpeedProfile};
