//! Training runs, their on-disk artifacts, and multi-seed suites.

pub mod config;
pub mod output;
pub mod suite;
pub mod trainer;
pub mod verify;

pub use config::{Algo, LrSchedule, TrainConfig};
pub use trainer::{evaluate, mean_stderr, train, EvalResult, EvalRow, MetricsRow, TrainOutcome};
