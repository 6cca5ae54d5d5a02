//! The relaxed-inertial stochastic forward-backward-forward iteration, its
//! baselines, parameter schedules and per-iteration diagnostics.

mod diagnostics;
pub(crate) mod kernel;
mod params;
mod run;
mod trace;

pub use diagnostics::{diagnostics_check, recursion_bound, CheckOutcome, DiagnosticsReport, DIAGNOSTIC_SLACK};
pub use params::{
    alpha_schedule, coupled_rho, coupling_term, rho_schedule, RhoRule, SolverParams, StepSizes, Variant,
};
pub use run::{max_admissible_step, reference_solution, run, RunOutput, Solver, StepOutput, StopReason};
pub use trace::{IterDiagnostics, IterRecord, SolverTrace};
