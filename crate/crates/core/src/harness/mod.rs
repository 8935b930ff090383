//! Experiment orchestration: reference and seed trajectories, run
//! configuration, artifact persistence, reports and the Monte-Carlo checks
//! behind `verify-lemmas`.

mod config;
mod report;
mod run;
mod trajectory;
mod verify;

pub use config::{ModelConfig, PlantSelection, RunConfig};
pub use report::{read_convergence, report, ConvergenceRow, Report, CONVERGENCE_FILE, FAULT_FILE};
pub use run::{
    build_plant, reference_poses, run_experiment, run_with_plant, simulate, IterationSummary, RunSummary,
    TrueResponse,
};
pub use trajectory::{
    generate_seed_trajectory, generate_trajectory, unit_profile, SeedConfig, TrajectoryKind, TrajectorySpec,
};
pub use verify::{
    gershgorin_suite, perfect_model_suite, scalar_consistency_suite, uncertainty_suite, verify_lemmas, SuiteResult,
};
