//! Library side of the `scalepinn` command: run configuration, presets and
//! the command implementations, kept out of `main` so they can be tested.

pub mod config;
pub mod run;

pub use config::{apply_set, decode, resolve, RunConfig};
pub use run::exit_code;
