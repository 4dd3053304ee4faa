pub mod error;
pub mod kinematics;
pub mod lp;
pub mod mpc;
pub mod safety;
pub mod sim;

pub use error::{Error, Result};
pub use kinematics::{build_system, PlatoonSystem, RelativeState, VehicleState};
pub use lp::{check_solution, solve, LpProblem, LpSolution, LpStatus};
pub use safety::{BrakingSpec, ComfortSpec, ConstraintBlock, RowLabel};
pub use mpc::{ControlDecision, ControlMode, Controller, ControllerConfig, CostSpec, HorizonSpec, RobustLpProblem};
pub use sim::{metrics, run, ScenarioConfig, SimMetrics, SimTrace};
