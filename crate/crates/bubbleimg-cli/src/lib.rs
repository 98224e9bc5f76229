//! Command-line driver for the bubble imaging toolkit.

pub mod checks;
pub mod commands;
pub mod defaults;
pub mod scenarios;

pub use commands::run;
