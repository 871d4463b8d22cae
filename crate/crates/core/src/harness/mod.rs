//! Configuration and the operations behind the command-line tool.

pub mod commands;
pub mod config;

pub use commands::{
    cmd_ablate, cmd_eval, cmd_gen_corpus, cmd_generate, cmd_lambda_sweep, cmd_train, load_corpus, train_and_test,
    AblationTable, RunResult, SweepTable,
};
pub use config::{RunConfig, Variant};
