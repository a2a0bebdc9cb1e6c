pub mod config;
pub mod report;
pub mod run;
pub mod sweep;

pub use config::{ConfigError, RunConfig};
pub use report::RunReport;
pub use run::{run_experiment, RunError};
