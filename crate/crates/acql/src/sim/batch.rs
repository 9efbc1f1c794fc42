//! Data-parallel execution of independent scenario runs and QP batches.
//! With the `parallel` feature the work fans out over rayon; without it the
//! same entry points run sequentially.

use super::config::Scenario;
use super::harness::{run_scenario, RunLog};
use super::summary::{summarize_run, Summary};
use crate::qp::{QpProblem, QpSolution, QpSolver};
use crate::robot::RobotModel;

use super::dynamics::SimError;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Run every scenario against the shared model and summarize. Order matches
/// the input regardless of scheduling.
pub fn run_scenarios(
    scenarios: &[Scenario],
    model: &RobotModel,
) -> Vec<Result<(RunLog, Summary), SimError>> {
    let work = |scn: &Scenario| {
        run_scenario(scn, model).map(|log| {
            let summary = summarize_run(&log);
            (log, summary)
        })
    };
    #[cfg(feature = "parallel")]
    {
        scenarios.par_iter().map(work).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        scenarios.iter().map(work).collect()
    }
}

/// Payload-to-limb-capacity sweep: clones the base scenario with payload
/// mass = plc * capacity.
pub fn plc_sweep_scenarios(base: &Scenario, plcs: &[f64], capacity: f64) -> Vec<Scenario> {
    plcs.iter()
        .map(|&plc| {
            let mut s = base.clone();
            s.name = format!("{}_plc{:.2}", base.name, plc);
            s.payload.mass = plc * capacity;
            s
        })
        .collect()
}

/// Solve a batch of independent QPs, one fresh solver per problem.
pub fn solve_qp_batch(problems: &[QpProblem]) -> Vec<QpSolution> {
    let work = |p: &QpProblem| QpSolver::new().solve(p);
    #[cfg(feature = "parallel")]
    {
        problems.par_iter().map(work).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        problems.iter().map(work).collect()
    }
}
