//! Configuration, checkpoints and the `svlb` subcommands.

pub mod checkpoint;
pub mod commands;
pub mod config;

pub use checkpoint::Checkpoint;
pub use commands::{
    cmd_align, cmd_evaluate, cmd_gen_data, cmd_grid_report, cmd_pretrain_encoder, Options, Report, RunManifest,
};
pub use config::{schema_text, RunConfig, Value};
