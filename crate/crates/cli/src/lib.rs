//! Library side of the `petc-lab` command line tool.

pub mod commands;
pub mod config;
pub mod manifest;

pub use commands::{
    cmd_certify, cmd_compare, cmd_simulate, cmd_sweep, cmd_verify, exit_code_for, Invocation, Outcome,
};
pub use config::{Config, LoadedConfig};
pub use manifest::RunManifest;
