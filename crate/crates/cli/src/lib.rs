//! Scenario runner behind the `lpsv` binary: TOML configs in, CSV, JSON
//! lines, binary grid dumps and a manifest out.

pub mod config;
pub mod error;
pub mod output;
pub mod run;

pub use config::{Scenario, Task};
pub use error::{CliError, CliResult};
pub use run::{run_scenario, Manifest, RunOptions};
