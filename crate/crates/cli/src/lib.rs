//! Experiment driver for HARP: training, evaluation, live deployment and
//! replay verification, with their config, checkpoint and log formats.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod evaluate;
pub mod logs;
pub mod replay;
pub mod run;
pub mod table;
pub mod train;

pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use config::{EvalProtocol, ExperimentConfig};
pub use error::{CliError, Result};
pub use logs::{participation_pct, win_rate_pct, LogWriter, MetricsLine, MetricsRecord, Mode, ReplayLine};
