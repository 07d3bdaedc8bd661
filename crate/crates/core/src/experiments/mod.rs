//! Experiment drivers, configuration and output.

pub mod cone2d;
pub mod config;
pub mod meanfield;
pub mod output;
pub mod rank_hist;
pub mod rng;
pub mod single;
pub mod validate;

pub use cone2d::{run_cone2d, Cone2dResult, ConeTrajectory};
pub use config::{ExperimentConfig, ExperimentKind};
pub use meanfield::{run_meanfield, MeanFieldResult};
pub use rank_hist::{run_rank_histogram, RankHistogram};
pub use single::{run_single, SingleRun};
pub use validate::{run_validation_suite, ValidationReport};
