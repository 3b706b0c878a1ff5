//! D-SGD and C-SGD training loops.

mod run;
mod schedule;
mod step;

pub use run::{run, run_with, RunConfig, RunSetup};
pub use schedule::{LrSchedule, PhaseSchedule, ScheduleKind};
pub use step::{
    check_divergence, csgd_step, dsgd_step, local_step, stochastic_gradients, StepContext, StepStats,
    DIVERGENCE_THRESHOLD,
};
