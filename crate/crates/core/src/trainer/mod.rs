//! Adaptation of a freshly initialised target model from black-box
//! predictions, evaluation, and the ablation and sensitivity suites.

mod adapt;
mod config;
mod eval;
mod objective;
mod report;
mod suite;
mod teacher;

pub use adapt::{adapt, adapt_videos, Adapted, EpochHook};
pub use config::AdaptConfig;
pub use eval::{evaluate, evaluate_manifest, score, EvalReport};
pub use objective::{objective_nodes, ObjectiveNodes, StepDraws};
pub use report::{EpochRecord, RunReport};
pub use suite::{mean_accuracy, run_ablation_suite, sweep, AblationRow, Benchmark, SweepPoint, SweepResult, Variant};
pub use teacher::{fetch_teacher, TeacherSource};
