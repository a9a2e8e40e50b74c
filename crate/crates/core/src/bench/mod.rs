//! Benchmark problems, error measures and the run driver behind the CLI.

pub mod cases;
pub mod config;
pub mod driver;
pub mod norms;
