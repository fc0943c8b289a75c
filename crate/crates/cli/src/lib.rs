//! Training configuration, checkpoint files, benchmarks and sweeps behind the
//! `msn` command.

pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod sweep;
