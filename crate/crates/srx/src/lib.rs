//! Scenario files, report writers and the `srx` command line front end.

pub mod commands;
pub mod error;
pub mod output;
pub mod scenario;

pub use commands::{certify, homotopy, integrate, nsre_check, Report, Run};
pub use error::{CliError, ExitStatus};
pub use scenario::Scenario;
