//! Ground-truth rigid-body simulator and scenario harness: closes the loop
//! around the estimator, wrench PID and distribution QP with ideal force
//! actuators at fixed world anchors.

pub mod batch;
pub mod config;
pub mod dynamics;
pub mod gait;
pub mod harness;
pub mod summary;

pub use batch::{plc_sweep_scenarios, run_scenarios, solve_qp_batch};
pub use config::{GaitKind, InitConfig, InitMode, PayloadTruth, Scenario, SimConfig, TargetConfig, TrotConfig};
pub use dynamics::{payload_moment_true, step_dynamics, SimError};
pub use gait::GaitSchedule;
pub use harness::{run_scenario, run_scenario_to_dir, RunLog, RunRow};
pub use summary::{summarize_run, Summary};
