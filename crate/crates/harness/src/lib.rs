//! Tools around the kernel: configuration, CSV ingest, synthetic data,
//! workloads, space reports and crash checks.

pub mod config;
pub mod generate;
pub mod ingest;
pub mod recover_check;
pub mod report;
pub mod workload;
